#include "lfr/objectives.hpp"

#include <sstream>

#include "lfr/errors.hpp"

namespace lfr::objectives {

namespace {

std::string dims(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

torch::Tensor safe_probs(const torch::Tensor& p, double eps, const char* name) {
  if (eps < 0.0 || eps >= 0.5) throw ValidationError("probability clamp must lie in [0, 0.5)");
  if (eps > 0.0) return p.clamp(eps, 1.0 - eps);
  torch::NoGradGuard guard;
  if ((p <= 0.0).any().item<bool>() || (p >= 1.0).any().item<bool>()) {
    throw DomainError(std::string(name) + " contains 0 or 1 and no clamp is configured");
  }
  return p;
}

}  // namespace

void LossWeights::validate() const {
  if (alpha_r < 0 || alpha_f < 0 || alpha_o < 0 || alpha_s < 0 || lambda < 0) {
    throw ValidationError("loss weights must be non-negative");
  }
}

AdversarialLosses cgan_value(const torch::Tensor& d_real, const torch::Tensor& d_fake, double eps) {
  const auto real = safe_probs(d_real, eps, "d_real");
  const auto fake = safe_probs(d_fake, eps, "d_fake");
  AdversarialLosses out;
  out.value = torch::log(real).mean() + torch::log(1.0 - fake).mean();
  out.discriminator_loss = -out.value;
  out.generator_loss = -torch::log(fake).mean();
  return out;
}

AdversarialLosses gan_value(const torch::Tensor& d_real, const torch::Tensor& d_fake, double eps) {
  return cgan_value(d_real, d_fake, eps);
}

torch::Tensor l1_loss(const torch::Tensor& generated, const torch::Tensor& target) {
  if (generated.sizes() != target.sizes()) {
    throw ShapeError("l1 operands differ: " + dims(generated) + " vs " + dims(target));
  }
  return (generated - target).abs().mean();
}

L1Breakdown l1_multi(const torch::Tensor& generated, const torch::Tensor& target, const LossWeights& w) {
  w.validate();
  if (generated.sizes() != target.sizes() || generated.dim() != 4 || generated.size(1) != 4) {
    throw ShapeError("l1_multi expects matching N x 4 x H x W stacks, got " + dims(generated) + " vs " + dims(target));
  }
  L1Breakdown out;
  const double alpha[4] = {w.alpha_r, w.alpha_f, w.alpha_o, w.alpha_s};
  out.total = torch::zeros({}, generated.options());
  for (int c = 0; c < 4; ++c) {
    out.terms[static_cast<std::size_t>(c)] = objectives::l1_loss(generated.select(1, c), target.select(1, c));
    out.total = out.total + alpha[c] * out.terms[static_cast<std::size_t>(c)];
  }
  return out;
}

torch::Tensor generator_objective(const torch::Tensor& adv_loss, const torch::Tensor& l1, const LossWeights& w) {
  w.validate();
  return adv_loss + w.lambda * l1;
}

torch::Tensor contrastive_loss(const torch::Tensor& emb_a, const torch::Tensor& emb_b, const torch::Tensor& genuine,
                               double margin) {
  if (emb_a.sizes() != emb_b.sizes() || emb_a.dim() < 1 || emb_a.dim() > 2) {
    throw ShapeError("contrastive embeddings differ or are not N x D: " + dims(emb_a) + " vs " + dims(emb_b));
  }
  const auto a = emb_a.dim() == 1 ? emb_a.unsqueeze(0) : emb_a;
  const auto b = emb_b.dim() == 1 ? emb_b.unsqueeze(0) : emb_b;
  const auto label = genuine.reshape({-1}).to(a.dtype());
  if (label.size(0) != a.size(0)) throw ShapeError("contrastive labels do not match batch size");
  if (margin < 0.0) throw ValidationError("contrastive margin must be non-negative");

  auto normalize = [](const torch::Tensor& e, const char* name) {
    const auto norm = e.norm(2, 1, true);
    {
      torch::NoGradGuard guard;
      if ((norm == 0.0).any().item<bool>()) throw DomainError(std::string(name) + " has a zero-length embedding");
    }
    return e / norm;
  };
  const auto diff = normalize(a, "emb_a") - normalize(b, "emb_b");
  const auto sq = diff.pow(2).sum(1);
  // Exact distance; the substituted argument keeps the gradient of sqrt finite at d = 0.
  const auto positive = sq > 0.0;
  const auto d = torch::where(positive, torch::sqrt(torch::where(positive, sq, torch::ones_like(sq))),
                              torch::zeros_like(sq));
  const auto impostor = (margin - d).clamp_min(0.0).pow(2);
  return (label * sq + (1.0 - label) * impostor).mean();
}

}  // namespace lfr::objectives

#pragma once

#include <array>

#include <torch/torch.h>

// Adversarial, reconstruction and verifier losses. All reductions are means so the
// weights are independent of resolution and batch size.
namespace lfr::objectives {

struct LossWeights {
  double alpha_r = 1.0;
  double alpha_f = 0.1;
  double alpha_o = 0.1;
  double alpha_s = 0.1;
  double lambda = 100.0;

  void validate() const;  // throws ValidationError on negative entries
};

struct AdversarialLosses {
  torch::Tensor value;               // mean log D(real) + mean log(1 - D(fake))
  torch::Tensor discriminator_loss;  // -value
  torch::Tensor generator_loss;      // -mean log D(fake), non-saturating
};

// Maps are probabilities of any (matching batch) shape. With eps > 0 entries are
// clamped to [eps, 1 - eps]; with eps == 0 an entry of exactly 0 or 1 is a DomainError.
AdversarialLosses cgan_value(const torch::Tensor& d_real, const torch::Tensor& d_fake, double eps = 1e-7);

// Unconditional form; same arithmetic, the conditioning lives in the discriminator input.
AdversarialLosses gan_value(const torch::Tensor& d_real, const torch::Tensor& d_fake, double eps = 1e-7);

// Mean absolute error.
torch::Tensor l1_loss(const torch::Tensor& generated, const torch::Tensor& target);

struct L1Breakdown {
  torch::Tensor total;                // weighted sum
  std::array<torch::Tensor, 4> terms;  // unweighted R, F, O, S
};

// generated/target: N x 4 x H x W in R, F, O, S channel order.
L1Breakdown l1_multi(const torch::Tensor& generated, const torch::Tensor& target, const LossWeights& w = {});

torch::Tensor generator_objective(const torch::Tensor& adv_loss, const torch::Tensor& l1, const LossWeights& w = {});

// emb_a/emb_b: N x D (or D). genuine: N booleans (or scalar). Embeddings are
// L2-normalized here; a zero row raises DomainError. Returns the batch mean.
torch::Tensor contrastive_loss(const torch::Tensor& emb_a, const torch::Tensor& emb_b, const torch::Tensor& genuine,
                               double margin = 1.0);

}  // namespace lfr::objectives

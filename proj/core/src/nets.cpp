#include "lfr/nets.hpp"

#include <cmath>
#include <sstream>

#include "lfr/checksum.hpp"
#include "lfr/errors.hpp"

namespace lfr::nets {

namespace F = torch::nn::functional;

namespace {

std::vector<std::int64_t> hwc(const torch::Tensor& t) { return {t.size(2), t.size(3), t.size(1)}; }

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_spatial(const torch::Tensor& t, std::int64_t channels, const char* name) {
  require(t.dim() == 4, std::string(name) + " must be NCHW, got " + shape_str(t));
  require(t.size(1) == channels, std::string(name) + " must have " + std::to_string(channels) +
                                     " channels, got " + shape_str(t));
  require(t.size(2) % 16 == 0 && t.size(3) % 16 == 0,
          std::string(name) + " spatial size must be divisible by 16, got " + shape_str(t));
}

}  // namespace

SameConv2dImpl::SameConv2dImpl(std::int64_t in_channels, std::int64_t out_channels, int stride, int kernel)
    : stride_(stride), kernel_(kernel), out_channels_(out_channels) {
  conv_ = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, kernel)
                                                        .stride(stride)
                                                        .padding(0)
                                                        .bias(true)));
}

torch::Tensor SameConv2dImpl::forward(const torch::Tensor& x) {
  auto pads = [&](std::int64_t in) {
    const std::int64_t out = (in + stride_ - 1) / stride_;
    const std::int64_t total = std::max<std::int64_t>((out - 1) * stride_ + kernel_ - in, 0);
    return std::pair{total / 2, total - total / 2};
  };
  const auto [top, bottom] = pads(x.size(2));
  const auto [left, right] = pads(x.size(3));
  return conv_->forward(F::pad(x, F::PadFuncOptions({left, right, top, bottom})));
}

ConvBlockImpl::ConvBlockImpl(std::int64_t in_channels, std::int64_t out_channels, int stride, bool transposed)
    : transposed_(transposed), stride_(stride), out_channels_(out_channels) {
  if (transposed) {
    deconv_ = register_module(
        "deconv", torch::nn::ConvTranspose2d(
                      torch::nn::ConvTranspose2dOptions(in_channels, out_channels, 4).stride(2).padding(1)));
  } else {
    conv_ = register_module("conv", SameConv2d(in_channels, out_channels, stride));
  }
  norm_ = register_module("norm", torch::nn::BatchNorm2d(out_channels));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = transposed_ ? deconv_->forward(x) : conv_->forward(x);
  return torch::relu(norm_->forward(y));
}

// Encoder strides 1,2,1,2,1,2,1,2,1,1; decoder "D" rows are stride-2 transposed
// convolutions whose outputs are concatenated with encoder layers 7, 5, 3, 1.
GeneratorImpl::GeneratorImpl() {
  struct Row {
    std::int64_t in, out;
    int stride;
  };
  const Row enc[] = {{1, 64, 1},    {64, 128, 2},  {128, 128, 1}, {128, 256, 2}, {256, 256, 1},
                     {256, 512, 2}, {512, 512, 1}, {512, 512, 2}, {512, 512, 1}, {512, 512, 1}};
  for (int i = 0; i < 10; ++i) {
    encoder_.push_back(register_module("l" + std::to_string(i + 1), ConvBlock(enc[i].in, enc[i].out, enc[i].stride)));
  }
  const std::int64_t up_io[4][2] = {{512, 512}, {512, 256}, {256, 128}, {128, 64}};
  const std::int64_t fuse_io[3][2] = {{1024, 512}, {512, 256}, {256, 128}};
  for (int i = 0; i < 4; ++i) {
    up_.push_back(register_module("l" + std::to_string(11 + 2 * i), ConvBlock(up_io[i][0], up_io[i][1], 2, true)));
    if (i < 3) {
      fuse_.push_back(register_module("l" + std::to_string(12 + 2 * i), ConvBlock(fuse_io[i][0], fuse_io[i][1], 1)));
    }
  }
  head_ = register_module("l18", SameConv2d(128, 4, 1));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& latent, Trace* trace) {
  require_spatial(latent, 1, "generator input");
  {
    torch::NoGradGuard guard;
    const auto [lo, hi] = torch::aminmax(latent);
    if (lo.item<double>() < 0.0 || hi.item<double>() > 1.0) {
      throw ValidationError("generator input values must lie in [0,1]");
    }
  }
  auto record = [&](int layer, const std::string& type, int stride, std::int64_t k, const torch::Tensor& in,
                    const torch::Tensor& out, const std::string& cn = "") {
    if (trace) trace->push_back({layer, type, stride, k, hwc(in), hwc(out), hwc(out), cn});
  };

  std::vector<torch::Tensor> acts;
  auto x = latent;
  for (int i = 0; i < 10; ++i) {
    auto y = encoder_[static_cast<std::size_t>(i)]->forward(x);
    record(i + 1, "C,B,R", encoder_[static_cast<std::size_t>(i)]->stride(), y.size(1), x, y);
    acts.push_back(y);
    x = y;
  }
  const int skips[4] = {7, 5, 3, 1};
  for (int i = 0; i < 4; ++i) {
    auto up = up_[static_cast<std::size_t>(i)]->forward(x);
    record(11 + 2 * i, "D,B,R", 2, up.size(1), x, up, "L" + std::to_string(skips[i]));
    auto cat = torch::cat({up, acts[static_cast<std::size_t>(skips[i] - 1)]}, 1);
    if (i < 3) {
      x = fuse_[static_cast<std::size_t>(i)]->forward(cat);
      record(12 + 2 * i, "C,B,R", 1, x.size(1), cat, x);
    } else {
      x = torch::sigmoid(head_->forward(cat));
      record(18, "C,S", 1, x.size(1), cat, x);
    }
  }
  return x;
}

PidiExtractorImpl::PidiExtractorImpl() {
  const std::int64_t io[6][2] = {{4, 64}, {64, 128}, {128, 256}, {256, 512}, {512, 512}, {512, 512}};
  for (int i = 0; i < 6; ++i) {
    blocks_.push_back(register_module("l" + std::to_string(i + 1), ConvBlock(io[i][0], io[i][1], 2)));
  }
  last_ = register_module("l7", SameConv2d(512, 512, 2));
}

PidiFeatures PidiExtractorImpl::forward(const torch::Tensor& stack, Trace* trace) {
  require_spatial(stack, 4, "PIDI extractor input");
  PidiFeatures out;
  auto x = stack;
  for (int i = 0; i < 6; ++i) {
    auto y = blocks_[static_cast<std::size_t>(i)]->forward(x);
    if (trace) trace->push_back({i + 1, "C,B,R", 2, y.size(1), hwc(x), hwc(y), hwc(y), ""});
    if (i < 4) out.maps[static_cast<std::size_t>(i)] = y;
    x = y;
  }
  auto y = last_->forward(x);
  out.embedding = y.flatten(1);
  if (trace) {
    trace->push_back({7, "C", 2, y.size(1), hwc(x), {out.embedding.size(1), 1}, {out.embedding.size(1), 1}, ""});
  }
  return out;
}

DiscriminatorImpl::DiscriminatorImpl(bool use_pidi) : use_pidi_(use_pidi) {
  const std::int64_t out[4] = {64, 128, 256, 512};
  std::int64_t in = 5;
  for (int i = 0; i < 4; ++i) {
    blocks_.push_back(register_module("l" + std::to_string(i + 1), ConvBlock(in, out[i], 2)));
    in = use_pidi ? 2 * out[i] : out[i];
  }
  head_ = register_module("l5", SameConv2d(in, 1, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& latent, const torch::Tensor& stack,
                                         const PidiFeatures* pidi, Trace* trace) {
  require_spatial(latent, 1, "discriminator latent");
  require_spatial(stack, 4, "discriminator stack");
  require(latent.size(0) == stack.size(0) && latent.size(2) == stack.size(2) && latent.size(3) == stack.size(3),
          "discriminator latent and stack disagree: " + shape_str(latent) + " vs " + shape_str(stack));
  if (use_pidi_ && pidi == nullptr) throw ShapeError("PIDI-fused discriminator requires PIDI features");

  auto x = torch::cat({latent, stack}, 1);
  for (int i = 0; i < 4; ++i) {
    auto y = blocks_[static_cast<std::size_t>(i)]->forward(x);
    auto fused = y;
    if (use_pidi_) {
      const auto& f = pidi->maps[static_cast<std::size_t>(i)];
      require(f.defined() && f.dim() == 4 && f.size(0) == y.size(0) && f.size(1) == y.size(1) &&
                  f.size(2) == y.size(2) && f.size(3) == y.size(3),
              "PIDI map " + std::to_string(i + 1) + " " + (f.defined() ? shape_str(f) : "undefined") +
                  " does not match discriminator layer " + shape_str(y));
      fused = torch::cat({y, f}, 1);
    }
    if (trace) trace->push_back({i + 1, "C,B,R", 2, y.size(1), hwc(x), hwc(y), hwc(fused), use_pidi_ ? "L" + std::to_string(i + 1) : "-"});
    x = fused;
  }
  auto out = torch::sigmoid(head_->forward(x));
  if (trace) trace->push_back({5, "C,S", 1, out.size(1), hwc(x), hwc(out), hwc(out), "-"});
  return out;
}

void init_weights(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& item : module.named_modules()) {
    auto& m = *item.value();
    if (auto* conv = m.as<torch::nn::Conv2d>()) {
      conv->weight.normal_(0.0, 0.02);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* deconv = m.as<torch::nn::ConvTranspose2d>()) {
      deconv->weight.normal_(0.0, 0.02);
      if (deconv->bias.defined()) deconv->bias.zero_();
    } else if (auto* bn = m.as<torch::nn::BatchNorm2d>()) {
      bn->weight.normal_(1.0, 0.02);
      bn->bias.zero_();
    }
  }
}

std::int64_t count_params(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

std::string architecture_hash(const std::string& kind, const torch::nn::Module& module) {
  std::ostringstream os;
  os << kind << '\n';
  for (const auto& p : module.named_parameters()) os << "p " << p.key() << ' ' << p.value().sizes() << '\n';
  for (const auto& b : module.named_buffers()) os << "b " << b.key() << ' ' << b.value().sizes() << '\n';
  return sha256_hex(os.str()).substr(0, 16);
}

std::string format_trace(const std::string& title, const Trace& trace) {
  auto dims = [](const std::vector<std::int64_t>& d) {
    std::string s;
    for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "x" : "") + std::to_string(d[i]);
    return s;
  };
  std::ostringstream os;
  os << title << '\n';
  os << "  L#  type    S  #K     input            output           final            concat\n";
  for (const auto& l : trace) {
    char line[256];
    std::snprintf(line, sizeof line, "  %-3d %-7s %-2d %-6lld %-16s %-16s %-16s %s\n", l.layer, l.type.c_str(), l.stride,
                  static_cast<long long>(l.kernels), dims(l.input).c_str(), dims(l.output).c_str(),
                  dims(l.final_output).c_str(), l.concat_with.empty() ? "-" : l.concat_with.c_str());
    os << line;
  }
  return os.str();
}

}  // namespace lfr::nets

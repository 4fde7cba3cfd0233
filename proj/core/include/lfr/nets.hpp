#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

// The three networks: U-Net generator (latent -> [R,F,O,S] stack), PIDI extractor
// (one tower of the Siamese verifier) and the PIDI-fused patch discriminator.
// Tensors are NCHW; shapes in traces are reported H x W x C like the layer tables.
namespace lfr::nets {

struct LayerShape {
  int layer = 0;
  std::string type;  // e.g. "C,B,R", "D,B,R", "C,S"
  int stride = 1;
  std::int64_t kernels = 0;
  std::vector<std::int64_t> input;   // H, W, C
  std::vector<std::int64_t> output;  // H, W, C
  std::vector<std::int64_t> final_output;  // after concatenation (discriminator only)
  std::string concat_with;
};

using Trace = std::vector<LayerShape>;

// 4x4 convolution with TensorFlow-style "same" padding: output = ceil(input / stride),
// padding split as floor/ceil on the leading/trailing edges.
class SameConv2dImpl : public torch::nn::Module {
 public:
  SameConv2dImpl(std::int64_t in_channels, std::int64_t out_channels, int stride, int kernel = 4);
  torch::Tensor forward(const torch::Tensor& x);

  int stride() const { return stride_; }
  std::int64_t out_channels() const { return out_channels_; }

 private:
  torch::nn::Conv2d conv_{nullptr};
  int stride_;
  int kernel_;
  std::int64_t out_channels_;
};
TORCH_MODULE(SameConv2d);

// Convolution (or stride-2 transposed convolution), batch norm, ReLU.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(std::int64_t in_channels, std::int64_t out_channels, int stride, bool transposed = false);
  torch::Tensor forward(const torch::Tensor& x);

  bool transposed() const { return transposed_; }
  int stride() const { return stride_; }
  std::int64_t out_channels() const { return out_channels_; }

 private:
  SameConv2d conv_{nullptr};
  torch::nn::ConvTranspose2d deconv_{nullptr};
  torch::nn::BatchNorm2d norm_{nullptr};
  bool transposed_;
  int stride_;
  std::int64_t out_channels_;
};
TORCH_MODULE(ConvBlock);

class GeneratorImpl : public torch::nn::Module {
 public:
  GeneratorImpl();
  // latent: N x 1 x H x W in [0,1], H and W divisible by 16. Returns N x 4 x H x W in (0,1).
  torch::Tensor forward(const torch::Tensor& latent, Trace* trace = nullptr);

 private:
  std::vector<ConvBlock> encoder_;  // layers 1..10
  std::vector<ConvBlock> up_;       // layers 11, 13, 15, 17
  std::vector<ConvBlock> fuse_;     // layers 12, 14, 16
  SameConv2d head_{nullptr};        // layer 18
};
TORCH_MODULE(Generator);

struct PidiFeatures {
  std::array<torch::Tensor, 4> maps;  // layer 1..4 activations
  torch::Tensor embedding;            // N x D (D = 2048 at 256x256)
};

class PidiExtractorImpl : public torch::nn::Module {
 public:
  PidiExtractorImpl();
  // stack: N x 4 x H x W.
  PidiFeatures forward(const torch::Tensor& stack, Trace* trace = nullptr);

 private:
  std::vector<ConvBlock> blocks_;  // layers 1..6
  SameConv2d last_{nullptr};       // layer 7
};
TORCH_MODULE(PidiExtractor);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  // use_pidi = false builds the plain cGAN discriminator (no feature fusion).
  explicit DiscriminatorImpl(bool use_pidi = true);
  // latent: N x 1 x H x W, stack: N x 4 x H x W, pidi from the same stack when
  // use_pidi. Returns N x 1 x H/16 x W/16 patch decisions in (0,1).
  torch::Tensor forward(const torch::Tensor& latent, const torch::Tensor& stack, const PidiFeatures* pidi,
                        Trace* trace = nullptr);

  bool use_pidi() const { return use_pidi_; }

 private:
  bool use_pidi_;
  std::vector<ConvBlock> blocks_;  // layers 1..4
  SameConv2d head_{nullptr};       // layer 5
};
TORCH_MODULE(Discriminator);

// DCGAN-style initialisation: conv weights ~ N(0, 0.02), BN gamma ~ N(1, 0.02), biases 0.
void init_weights(torch::nn::Module& module);

std::int64_t count_params(const torch::nn::Module& module);

// Hash over the module kind, configuration and every named parameter/buffer shape.
std::string architecture_hash(const std::string& kind, const torch::nn::Module& module);

std::string format_trace(const std::string& title, const Trace& trace);

}  // namespace lfr::nets

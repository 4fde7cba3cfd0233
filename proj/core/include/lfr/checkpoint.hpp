#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

// Module checkpoints: "<stem>.pt" holds the named parameters and buffers in the
// libtorch archive format; "<stem>.json" lists tensor names/shapes plus metadata.
namespace lfr::checkpoint {

struct Meta {
  std::string kind;  // "generator", "discriminator", "pidi", ...
  std::string arch_hash;
  int input_size = 0;
  int epoch = 0;
  std::int64_t global_step = 0;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

// Writes stem.pt and stem.json; `meta.arch_hash` is recomputed from the module.
void save(const std::filesystem::path& stem, const torch::nn::Module& module, Meta meta);

Meta read_meta(const std::filesystem::path& stem);

// Loads into `module` after checking kind and architecture hash; throws CheckpointError
// on mismatch, missing files or an unreadable archive.
Meta load(const std::filesystem::path& stem, torch::nn::Module& module, const std::string& kind);

void save_optimizer(const std::filesystem::path& file, const torch::optim::Optimizer& optimizer);
void load_optimizer(const std::filesystem::path& file, torch::optim::Optimizer& optimizer);

// SHA-256 over the raw bytes of every parameter and buffer, in registration order.
std::string parameter_digest(const torch::nn::Module& module);

}  // namespace lfr::checkpoint

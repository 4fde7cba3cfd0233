#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "lfr/nets.hpp"
#include "lfr/objectives.hpp"
#include "lfr/synthgen.hpp"

namespace lfr::train {

struct TrainConfig {
  int epochs = 30;
  int steps_per_epoch = 125;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  objectives::LossWeights loss_weights;
  std::uint64_t seed = 1;
  int checkpoint_interval = 0;  // in steps; 0 = only the final state
  bool deterministic_mode = true;
  int image_size = 64;
  bool use_pidi = true;
  bool pidi_grad_to_generator = true;
  double contrastive_margin = 1.0;
  double probability_eps = 1e-7;

  void validate() const;  // throws ConfigError naming the field
  std::int64_t total_steps() const { return static_cast<std::int64_t>(epochs) * steps_per_epoch; }
};

nlohmann::json to_json(const TrainConfig& cfg);
// Unknown keys and type mismatches are ConfigErrors; missing keys keep their defaults.
TrainConfig config_from_json(const nlohmann::json& j);

// Paired training tensors, row i of both belongs to the same manifest record.
struct PairData {
  torch::Tensor latents;  // N x 1 x H x W
  torch::Tensor stacks;   // N x 4 x H x W
  std::vector<std::size_t> records;
};

// Clean-impression stacks for the verifier, one row per distinct clean print.
struct StackData {
  torch::Tensor stacks;  // M x 4 x H x W
  std::vector<int> finger_ids;
};

PairData load_pairs(const synth::DatasetManifest& manifest, synth::Split split);
StackData load_clean_stacks(const synth::DatasetManifest& manifest, synth::Split split);

// Row indices of the batch for a global step: a per-epoch seeded permutation, wrapped.
std::vector<std::int64_t> batch_indices(std::uint64_t seed, std::int64_t step, std::int64_t n, int batch_size,
                                        int steps_per_epoch);

// Puts libtorch into single-threaded, deterministic-algorithm mode.
void enable_deterministic_mode();

struct CganMetrics {
  std::int64_t step = 0;
  int epoch = 0;
  double d_loss = 0.0;
  double g_adv = 0.0;
  double l1_r = 0.0;
  double l1_f = 0.0;
  double l1_o = 0.0;
  double l1_s = 0.0;
  double total = 0.0;

  bool operator==(const CganMetrics&) const = default;
};

nlohmann::json to_json(const CganMetrics& m);
CganMetrics cgan_metrics_from_json(const nlohmann::json& j);

struct VerifierMetrics {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
};

// Called after every step; return false to stop early. The models are in train mode.
using CganCallback = std::function<bool(const CganMetrics&, nets::Generator&)>;

struct VerifierResult {
  nets::PidiExtractor extractor{nullptr};
  std::vector<VerifierMetrics> metrics;
  std::filesystem::path checkpoint;  // stem
};

// Trains the Siamese tower on balanced genuine/impostor pairs of clean stacks and
// writes <out_dir>/verifier.{pt,json} and <out_dir>/metrics.jsonl.
VerifierResult train_verifier(const StackData& data, const TrainConfig& cfg, const std::filesystem::path& out_dir);
VerifierResult train_verifier(const synth::DatasetManifest& manifest, const TrainConfig& cfg,
                              const std::filesystem::path& out_dir);

nets::PidiExtractor load_verifier(const std::filesystem::path& stem);

struct Separation {
  double mean_genuine = 0.0;
  double mean_impostor = 0.0;
  int pairs = 0;
};

// Mean normalized-embedding distance of seeded genuine and impostor pairs, eval mode.
Separation verifier_separation(nets::PidiExtractor& extractor, const StackData& data, int pairs, std::uint64_t seed);

struct CganState {
  nets::Generator generator{nullptr};
  nets::Discriminator discriminator{nullptr};
  std::int64_t global_step = 0;
  std::vector<CganMetrics> metrics;
};

struct CganOptions {
  std::optional<std::filesystem::path> resume_from;  // a state directory
  CganCallback on_step;
};

// Adversarial training of G against the (optionally PIDI-fused) D with the frozen
// verifier. Writes <out_dir>/metrics.jsonl, <out_dir>/checkpoints/step_NNNNNNN/ at
// the configured interval and <out_dir>/final/. Throws TrainingDiverged on NaN.
CganState train_cgan(const PairData& data, nets::PidiExtractor verifier, const TrainConfig& cfg,
                     const std::filesystem::path& out_dir, const CganOptions& options = {});
CganState train_cgan(const synth::DatasetManifest& manifest, const std::filesystem::path& verifier_stem,
                     const TrainConfig& cfg, const std::filesystem::path& out_dir, const CganOptions& options = {});

void save_state(const std::filesystem::path& dir, const CganState& state, const TrainConfig& cfg,
                const torch::optim::Adam* opt_g, const torch::optim::Adam* opt_d);
// Restores models, step and metrics history; optimizers are restored when given.
CganState load_state(const std::filesystem::path& dir, const TrainConfig& cfg, torch::optim::Adam* opt_g = nullptr,
                     torch::optim::Adam* opt_d = nullptr);

// Loads just the generator of a state directory (e.g. <run>/final) or a generator stem.
nets::Generator load_generator(const std::filesystem::path& path);

std::vector<CganMetrics> read_metrics(const std::filesystem::path& jsonl);

}  // namespace lfr::train

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "lfr/evalkit.hpp"
#include "lfr/subprocess.hpp"
#include "lfr/synthgen.hpp"
#include "lfr/trainer.hpp"

namespace lfr::cli {

struct EvaluateSection {
  std::vector<eval::Protocol> protocols = {eval::Protocol::kLatentToClean, eval::Protocol::kLatentToLatent,
                                           eval::Protocol::kQuality};
  synth::Split split = synth::Split::kTest;
  std::uint64_t seed = 0;
  double latent_gallery_fraction = 0.4;
  std::vector<int> report_ranks = {1, 10, 25, 50};
  eval::FailurePolicy failure_policy = eval::FailurePolicy::kZero;
  bool include_raw = true;
  bool plots = true;
  int threads = 0;
};

// Everything a run needs. Defaults describe the desk-scale synthetic benchmark.
struct RunConfig {
  std::string name = "default";
  synth::DatasetOptions dataset;
  train::TrainConfig verifier;
  train::TrainConfig train;
  EvaluateSection evaluate;
  std::optional<proc::AdapterConfig> matcher;
  std::optional<proc::AdapterConfig> quality;

  RunConfig();
  void validate() const;  // ConfigError naming the field
};

nlohmann::json to_json(const RunConfig& cfg);
// Unknown keys at any level and type mismatches are ConfigErrors.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Command-line overrides applied on top of a loaded config.
struct Overrides {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  bool no_pidi = false;
};

void apply(RunConfig& cfg, const Overrides& o);

}  // namespace lfr::cli

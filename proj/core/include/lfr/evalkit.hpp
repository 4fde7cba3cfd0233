#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lfr/image.hpp"
#include "lfr/mapextract.hpp"
#include "lfr/matcher.hpp"
#include "lfr/nets.hpp"
#include "lfr/subprocess.hpp"
#include "lfr/synthgen.hpp"

namespace lfr::eval {

struct Reconstruction {
  MapStack stack;
  Plane masked_ridge;  // ridge x (segmentation >= 0.5), what matchers see
};

// Runs the generator (eval mode) on each latent; batched, order preserved.
std::vector<Reconstruction> reconstruct(const std::vector<FingerprintImage>& latents, nets::Generator& generator,
                                        int batch_size = 32);
Reconstruction reconstruct(const FingerprintImage& latent, nets::Generator& generator);
// Loads the generator from a state directory or stem; CheckpointError on mismatch.
Reconstruction reconstruct(const FingerprintImage& latent, const std::filesystem::path& g_ckpt);

Plane mask_ridge(const MapStack& stack, float seg_threshold = 0.5f);

// Dark-ridge image of a masked ridge map, the form handed to image-based tools.
FingerprintImage ridge_image(const Plane& masked_ridge);

struct ScoreMatrix {
  std::size_t probes = 0;
  std::size_t gallery = 0;
  std::vector<double> scores;  // row-major probes x gallery, higher = more similar
  std::vector<int> probe_labels;
  std::vector<int> gallery_labels;
  // Pairs left out of ranking by the exclude policy; empty means all valid.
  std::vector<std::uint8_t> excluded;

  double at(std::size_t p, std::size_t g) const { return scores[p * gallery + g]; }
  bool is_excluded(std::size_t p, std::size_t g) const { return !excluded.empty() && excluded[p * gallery + g] != 0; }
  void validate() const;  // finite values, label sizes
};

struct CMCResult {
  std::vector<double> rank_accuracies;  // index k-1 holds the share of probes with rank <= k
  std::vector<int> ranks;               // per probe, 0 when excluded
  int excluded_probes = 0;              // probes without a gallery mate

  double at_rank(int k) const;  // clamps k to [1, gallery size]
};

// Ranks the gallery by descending score per probe, ties broken by gallery index.
CMCResult cmc(const ScoreMatrix& scores);

enum class FailurePolicy { kZero, kExclude };
std::string to_string(FailurePolicy p);
FailurePolicy failure_policy_from_string(const std::string& s);

struct PairFailure {
  std::size_t probe = 0;
  std::size_t gallery = 0;
  std::string kind;  // empty_overlap, missing_executable, matcher_failure, unparseable, timeout
  std::string message;
};

struct ScoreOutcome {
  ScoreMatrix matrix;
  std::vector<PairFailure> failures;
};

// One score per (probe, gallery) pair. Throwing a MatcherError marks the pair failed;
// MissingExecutable aborts the whole run since no pair can succeed.
using PairScorer = std::function<double(std::size_t probe, std::size_t gallery)>;

ScoreOutcome score_all(std::size_t probes, std::size_t gallery, const std::vector<int>& probe_labels,
                       const std::vector<int>& gallery_labels, const PairScorer& scorer,
                       FailurePolicy policy = FailurePolicy::kZero, int threads = 0);

// Internal matcher over templates; empty-overlap pairs score 0 and are listed as failures.
ScoreOutcome score_all(const std::vector<match::Template>& probes, const std::vector<int>& probe_labels,
                       const std::vector<match::Template>& gallery, const std::vector<int>& gallery_labels,
                       const match::MatchOptions& opts = {}, int threads = 0);

// Internal quality proxy: foreground fraction x mean coherence on the foreground x
// share of foreground blocks with a valid frequency, binned to 1 (best) .. 5.
struct QualityComponents {
  double foreground = 0.0;
  double coherence = 0.0;
  double valid_frequency = 0.0;
  double composite = 0.0;
};

inline constexpr double kQualityThresholds[4] = {0.55, 0.45, 0.35, 0.20};

QualityComponents quality_components(const FingerprintImage& img, const mapextract::ExtractOptions& opts = {});
int quality_bin(double composite);
int quality_score(const FingerprintImage& img, const mapextract::ExtractOptions& opts = {});
int quality_score(const MapStack& stack, const mapextract::ExtractOptions& opts = {});

enum class Protocol { kLatentToClean, kLatentToLatent, kQuality };
std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

struct GeneratorRow {
  std::string name;  // e.g. cGAN, cGAN+PIDI
  std::filesystem::path checkpoint;
};

struct ExperimentConfig {
  std::vector<Protocol> protocols = {Protocol::kLatentToClean, Protocol::kLatentToLatent, Protocol::kQuality};
  synth::Split split = synth::Split::kTest;
  std::vector<GeneratorRow> generators;
  bool include_raw = true;
  std::uint64_t seed = 0;               // latent_to_latent gallery split
  double latent_gallery_fraction = 0.4;
  std::vector<int> report_ranks = {1, 10, 25, 50};
  match::MatchOptions match;
  std::optional<proc::AdapterConfig> external_matcher;  // replaces the internal matcher
  std::optional<proc::AdapterConfig> external_quality;  // replaces the quality proxy
  FailurePolicy failure_policy = FailurePolicy::kZero;
  int threads = 0;
  bool plots = true;
};

struct ExperimentRow {
  std::string name;
  CMCResult cmc;
  std::size_t probes = 0;
  std::size_t gallery = 0;
  std::size_t failures = 0;
};

struct ProtocolReport {
  Protocol protocol = Protocol::kLatentToClean;
  std::vector<ExperimentRow> rows;
};

struct QualityRow {
  std::string name;
  std::vector<int> histogram;  // counts for scores 1..5
  double mean = 0.0;
};

struct ExperimentReport {
  std::vector<ProtocolReport> matching;
  std::vector<QualityRow> quality;
  std::vector<int> ranks = {1, 10, 25, 50};
  nlohmann::json to_json() const;
};

// Extraction settings a dataset was built with (dataset.json), defaults otherwise.
mapextract::ExtractOptions extract_options_for(const synth::DatasetManifest& manifest);

// Runs the selected protocols on a split and writes report.json, rank_table.csv,
// failures.csv and SVG plots into out_dir.
ExperimentReport run_experiment(const synth::DatasetManifest& manifest, const ExperimentConfig& cfg,
                                const std::filesystem::path& out_dir);

}  // namespace lfr::eval

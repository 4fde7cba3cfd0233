#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lfr/image.hpp"
#include "lfr/mapextract.hpp"

// Synthetic clean fingerprints and their latent-style distortions.
namespace lfr::synth {

enum class SingularType { kCore, kDelta };

struct SingularPoint {
  double x = 0.0;  // canvas pixels
  double y = 0.0;
  SingularType type = SingularType::kCore;
};

// A synthetic finger: everything needed to render any number of impressions.
struct MasterPrint {
  int finger_id = 0;
  std::uint64_t seed = 0;
  std::vector<SingularPoint> singular_points;
  Plane orientation_field;  // ridge angle in radians, [0, pi), canvas resolution
  double base_frequency = 0.0;  // cycles/px
  Plane ridge_pattern;          // canvas texture in [-1, 1], positive on ridges
  // Finger footprint on the canvas (ellipse).
  double footprint_cx = 0.0;
  double footprint_cy = 0.0;
  double footprint_rx = 0.0;
  double footprint_ry = 0.0;
};

struct SynthOptions {
  int image_size = 256;
  double min_period = 5.0;  // ridge period range in pixels
  double max_period = 8.0;
  int gabor_iterations = 12;
  // Per-impression pose jitter.
  double max_rotation_deg = 8.0;
  double max_translation_px = 4.0;
  double impression_warp_px = 1.0;
};

MasterPrint make_master(int finger_id, std::uint64_t seed, const SynthOptions& opts = {});
FingerprintImage render_impression(const MasterPrint& master, int impression_index,
                                   const SynthOptions& opts = {});

struct CleanPrint {
  FingerprintImage image;
  MasterPrint master;
};

// Impression 0 of the finger defined by (finger_id, seed).
CleanPrint synth_clean(int finger_id, std::uint64_t seed, const SynthOptions& opts = {});

enum class BackgroundTexture { kNone, kLines, kText, kSpeckle };

std::string to_string(BackgroundTexture t);
BackgroundTexture texture_from_string(const std::string& s);

struct DistortionParams {
  int occlusion_count = 0;               // [0, 8]
  double occlusion_area_fraction = 0.0;  // [0, 0.6]
  BackgroundTexture background_texture = BackgroundTexture::kNone;
  double noise_std = 0.0;       // [0, 0.3]
  double contrast_gamma = 1.0;  // [0.4, 2.5]
  int dropout_band_count = 0;   // [0, 4]
  double elastic_warp_amplitude = 0.0;  // pixels, [0, 6]
  std::uint64_t seed = 0;

  bool operator==(const DistortionParams&) const = default;
};

// Throws ValidationError when a field leaves its range.
void validate(const DistortionParams& params);

// The dataset's sampling distribution over DistortionParams.
DistortionParams sample_distortion(std::uint64_t seed);

struct SourceRef {
  int finger_id = 0;
  int impression_index = 0;
  std::string clean_ref;
};

struct LatentSample {
  FingerprintImage image;
  int finger_id = 0;
  int impression_index = 0;
  DistortionParams params;
  std::string clean_ref;
};

// Applies, in order: elastic warp, contrast gamma, occlusion blobs, dropout bands,
// background texture, additive Gaussian noise, clamp to [0,1].
LatentSample distort(const FingerprintImage& clean, const DistortionParams& params,
                     const SourceRef& source = {});

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestRecord {
  std::string latent;  // paths relative to the dataset root
  std::string clean;
  std::string stack;
  int finger_id = 0;
  Split split = Split::kTrain;

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::uint64_t global_seed = 0;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
  std::vector<std::size_t> indices(Split split) const;
  // Position of the record's clean print among its finger's distinct clean prints,
  // in manifest order.
  int impression_index(std::size_t record) const;
};

inline constexpr const char* kManifestHeader = "latent,clean,stack,finger_id,split";

void write_manifest(const std::filesystem::path& csv, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& csv);

// Throws ValidationError on subject leakage across splits.
void check_subject_disjoint(const DatasetManifest& manifest);

struct DatasetOptions {
  int n_fingers = 50;
  int impressions_per_finger = 2;
  int latents_per_impression = 10;
  std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};  // train, val, test
  std::uint64_t global_seed = 0;
  SynthOptions synth;
  mapextract::ExtractOptions extract;
};

// Writes <root>/{clean,latent,stacks}/, manifest.csv and dataset.json. The root
// must not exist; output is staged in a sibling directory and renamed on success,
// and removed on failure.
DatasetManifest build_dataset(const std::filesystem::path& root, const DatasetOptions& opts);

// SHA-256 over the manifest and every file it references, in manifest order.
std::string dataset_checksum(const DatasetManifest& manifest);

}  // namespace lfr::synth

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "lfr/errors.hpp"
#include "lfr/io.hpp"
#include "lfr/mapextract.hpp"
#include "lfr/synthgen.hpp"
#include "temp_dir.hpp"

namespace lfr::synth {
namespace {

namespace fs = std::filesystem;

double foreground_fraction(const FingerprintImage& img, const mapextract::ExtractOptions& opts = {}) {
  const auto stack = mapextract::make_target_stack(img, opts);
  double fg = 0.0;
  for (float v : stack.segmentation().values()) fg += v;
  return fg / static_cast<double>(stack.segmentation().size());
}

SynthOptions desk() {
  SynthOptions o;
  o.image_size = 64;
  o.min_period = 4.5;
  o.max_period = 6.5;
  return o;
}

TEST(SynthClean, Deterministic) {
  const auto a = synth_clean(3, 99, desk());
  const auto b = synth_clean(3, 99, desk());
  EXPECT_EQ(a.image, b.image);
  EXPECT_NE(a.image, synth_clean(4, 99, desk()).image);
}

TEST(SynthClean, MasterInvariants) {
  for (int f = 0; f < 20; ++f) {
    const auto m = make_master(f, 5, desk());
    int cores = 0;
    for (const auto& sp : m.singular_points) cores += sp.type == SingularType::kCore;
    EXPECT_GE(cores, 1);
    EXPECT_GE(m.base_frequency, 1.0 / 25.0);
    EXPECT_LE(m.base_frequency, 1.0 / 3.0);
  }
}

TEST(SynthClean, ForegroundFractionOver100Seeds) {
  SynthOptions opts;  // default 256x256
  opts.gabor_iterations = 8;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto clean = synth_clean(static_cast<int>(seed % 7), seed, opts);
    const double fg = foreground_fraction(clean.image);
    EXPECT_GE(fg, 0.4) << "seed " << seed;
    EXPECT_LE(fg, 0.95) << "seed " << seed;
  }
}

TEST(Distort, IdentityParamsReturnInput) {
  const auto clean = synth_clean(1, 1, desk()).image;
  const DistortionParams identity{};
  const auto latent = distort(clean, identity, {1, 0, "clean/x.png"});
  EXPECT_EQ(latent.image, clean);
  EXPECT_EQ(latent.finger_id, 1);
  EXPECT_EQ(latent.clean_ref, "clean/x.png");
}

TEST(Distort, SingleBlobChangesRequestedArea) {
  SynthOptions opts = desk();
  opts.image_size = 128;
  for (int f = 0; f < 10; ++f) {
    const auto clean = synth_clean(f, 11, opts).image;
    DistortionParams p;
    p.occlusion_count = 1;
    p.occlusion_area_fraction = 0.5;
    p.seed = 1000 + static_cast<std::uint64_t>(f);
    const auto latent = distort(clean, p);
    double changed = 0.0;
    for (std::size_t i = 0; i < clean.pixels.size(); ++i)
      changed += latent.image.pixels.values()[i] != clean.pixels.values()[i];
    changed /= static_cast<double>(clean.pixels.size());
    EXPECT_GE(changed, 0.35) << "finger " << f;
    EXPECT_LE(changed, 0.6) << "finger " << f;
  }
}

TEST(Distort, Deterministic) {
  const auto clean = synth_clean(2, 3, desk()).image;
  const auto p = sample_distortion(77);
  EXPECT_EQ(distort(clean, p).image, distort(clean, p).image);
}

TEST(Distort, RejectsOutOfRangeParams) {
  const auto clean = synth_clean(2, 3, desk()).image;
  DistortionParams p;
  p.noise_std = 0.31;
  EXPECT_THROW(distort(clean, p), ValidationError);
  p = {};
  p.contrast_gamma = 0.3;
  EXPECT_THROW(distort(clean, p), ValidationError);
  p = {};
  p.occlusion_count = 9;
  EXPECT_THROW(distort(clean, p), ValidationError);
  p = {};
  p.elastic_warp_amplitude = 6.5;
  EXPECT_THROW(distort(clean, p), ValidationError);
}

TEST(Distort, OutputStaysInUnitRange) {
  const auto clean = synth_clean(0, 0, desk()).image;
  for (std::uint64_t s = 0; s < 20; ++s) {
    DistortionParams p = sample_distortion(s);
    p.noise_std = 0.3;
    p.contrast_gamma = s % 2 ? 0.4 : 2.5;
    EXPECT_NO_THROW(validate(distort(clean, p).image));
  }
}

TEST(DistortProperty, OcclusionNeverGrowsForeground) {
  SynthOptions opts;
  opts.image_size = 128;
  // One block of slack: a block sitting exactly on the coherence threshold can flip
  // when Sobel support near it changes.
  const double one_block = 1.0 / 64.0;
  for (int trial = 0; trial < 12; ++trial) {
    const auto clean = synth_clean(trial, 21, opts).image;
    DistortionParams p = sample_distortion(500 + static_cast<std::uint64_t>(trial));
    p.occlusion_count = 1 + trial % 4;
    double previous = 2.0;
    for (double area : {0.0, 0.1, 0.2, 0.3, 0.45, 0.6}) {
      p.occlusion_area_fraction = area;
      const double fg = foreground_fraction(distort(clean, p).image);
      EXPECT_LE(fg, previous + one_block + 1e-12) << "trial " << trial << " area " << area;
      previous = fg;
    }
  }
}

TEST(BuildDataset, CountsSplitsAndDeterminism) {
  lfr::testing::TempDir tmp;
  DatasetOptions opts;
  opts.n_fingers = 10;
  opts.impressions_per_finger = 2;
  opts.latents_per_impression = 3;
  opts.split_fractions = {0.8, 0.1, 0.1};
  opts.global_seed = 42;
  opts.synth = desk();
  opts.extract.block_size = 8;
  const auto m1 = build_dataset(tmp.path() / "a", opts);
  EXPECT_EQ(m1.records.size(), 60u);
  EXPECT_NO_THROW(check_subject_disjoint(m1));
  EXPECT_EQ(m1.indices(Split::kTrain).size(), 48u);
  EXPECT_EQ(m1.indices(Split::kVal).size(), 6u);
  EXPECT_EQ(m1.indices(Split::kTest).size(), 6u);

  std::size_t latents = 0;
  for (const auto& e : fs::directory_iterator(tmp.path() / "a" / "latent")) latents += e.is_regular_file();
  EXPECT_EQ(latents, 60u);

  const auto reread = read_manifest(tmp.path() / "a" / "manifest.csv");
  EXPECT_EQ(reread.records, m1.records);
  EXPECT_EQ(reread.global_seed, 42u);
  EXPECT_EQ(reread.impression_index(0), 0);
  EXPECT_EQ(reread.impression_index(3), 1);

  const auto m2 = build_dataset(tmp.path() / "b", opts);
  EXPECT_EQ(dataset_checksum(reread), dataset_checksum(read_manifest(tmp.path() / "b" / "manifest.csv")));

  // Targets are the clean print's stack, not the latent's.
  const auto& r = m1.records.front();
  EXPECT_EQ(io::read_stack(m1.resolve(r.stack)),
            mapextract::make_target_stack(io::read_png(m1.resolve(r.clean)), opts.extract));
}

TEST(BuildDataset, RefusesExistingRootAndCleansUpOnFailure) {
  lfr::testing::TempDir tmp;
  DatasetOptions opts;
  opts.n_fingers = 2;
  opts.impressions_per_finger = 1;
  opts.latents_per_impression = 1;
  opts.synth = desk();
  fs::create_directories(tmp.path() / "exists");
  EXPECT_THROW(build_dataset(tmp.path() / "exists", opts), IoError);

  // Parent is a regular file: creating the staging directory fails.
  std::ofstream(tmp.path() / "blocker") << "x";
  EXPECT_THROW(build_dataset(tmp.path() / "blocker" / "ds", opts), IoError);
  EXPECT_FALSE(fs::exists(tmp.path() / "blocker" / "ds.partial"));

  opts.split_fractions = {0.5, 0.4, 0.2};
  EXPECT_THROW(build_dataset(tmp.path() / "bad", opts), ValidationError);
  EXPECT_FALSE(fs::exists(tmp.path() / "bad.partial"));
}

TEST(Manifest, RejectsWrongHeader) {
  lfr::testing::TempDir tmp;
  std::ofstream(tmp.path() / "m.csv") << "a,b,c\n";
  EXPECT_THROW(read_manifest(tmp.path() / "m.csv"), ValidationError);
}

}  // namespace
}  // namespace lfr::synth

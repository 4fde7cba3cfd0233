#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "gratings.hpp"
#include "lfr/checkpoint.hpp"
#include "lfr/errors.hpp"
#include "lfr/evalkit.hpp"
#include "lfr/io.hpp"
#include "lfr/trainer.hpp"
#include "temp_dir.hpp"

using namespace lfr;
using namespace lfr::eval;
namespace fs = std::filesystem;

namespace {

ScoreMatrix matrix(std::size_t p, std::size_t g, std::vector<int> pl, std::vector<int> gl) {
  ScoreMatrix m;
  m.probes = p;
  m.gallery = g;
  m.scores.assign(p * g, 0.0);
  m.probe_labels = std::move(pl);
  m.gallery_labels = std::move(gl);
  return m;
}

// Rank of the first mate by counting, for every mate, how many gallery entries
// beat it (higher score, or equal score at a lower index).
std::vector<int> brute_force_ranks(const ScoreMatrix& m) {
  std::vector<int> ranks(m.probes, 0);
  for (std::size_t p = 0; p < m.probes; ++p) {
    int best = 0;
    for (std::size_t g = 0; g < m.gallery; ++g) {
      if (m.gallery_labels[g] != m.probe_labels[p]) continue;
      int ahead = 0;
      for (std::size_t k = 0; k < m.gallery; ++k) {
        if (m.at(p, k) > m.at(p, g) || (m.at(p, k) == m.at(p, g) && k < g)) ++ahead;
      }
      if (best == 0 || ahead + 1 < best) best = ahead + 1;
    }
    ranks[p] = best;
  }
  return ranks;
}

ScoreMatrix random_matrix(std::mt19937_64& rng, std::size_t p, std::size_t g, int ids, bool coarse) {
  std::uniform_int_distribution<int> label(0, ids - 1);
  std::vector<int> gl(g);
  for (auto& l : gl) l = label(rng);
  std::vector<int> pl(p);
  for (auto& l : pl) l = gl[std::uniform_int_distribution<std::size_t>(0, g - 1)(rng)];
  auto m = matrix(p, g, pl, gl);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> level(0, 4);
  for (auto& s : m.scores) s = coarse ? level(rng) * 0.25 : u(rng);
  return m;
}

void expect_matches_oracle(const ScoreMatrix& m) {
  const auto got = cmc(m);
  const auto ranks = brute_force_ranks(m);
  ASSERT_EQ(got.ranks, ranks);
  for (std::size_t k = 1; k <= m.gallery; ++k) {
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [&](int r) { return r >= 1 && r <= static_cast<int>(k); });
    ASSERT_EQ(got.rank_accuracies[k - 1], static_cast<double>(hits) / static_cast<double>(m.probes)) << "rank " << k;
  }
}

synth::SynthOptions desk(int size = 64) {
  synth::SynthOptions o;
  o.image_size = size;
  o.min_period = 4.5;
  o.max_period = 6.5;
  return o;
}

mapextract::ExtractOptions desk_extract() {
  mapextract::ExtractOptions o;
  o.block_size = 8;
  return o;
}

fs::path save_fresh_generator(const fs::path& dir, std::uint64_t seed) {
  torch::manual_seed(static_cast<std::int64_t>(seed));
  nets::Generator g;
  nets::init_weights(*g);
  checkpoint::Meta meta;
  meta.kind = "generator";
  meta.input_size = 64;
  checkpoint::save(dir / "generator", *g, meta);
  return dir / "generator";
}

}  // namespace

TEST(Cmc, IdentityMatrixIsPerfect) {
  auto m = matrix(4, 4, {0, 1, 2, 3}, {0, 1, 2, 3});
  for (std::size_t i = 0; i < 4; ++i) m.scores[i * 4 + i] = 1.0;
  const auto r = cmc(m);
  EXPECT_EQ(r.at_rank(1), 1.0);
  EXPECT_EQ(r.excluded_probes, 0);
}

TEST(Cmc, AdversarialMatrixIsWorstCase) {
  auto m = matrix(3, 5, {0, 1, 2}, {0, 1, 2, 3, 4});
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t g = 0; g < 5; ++g) m.scores[p * 5 + g] = g == p ? -1.0 : 1.0;
  }
  const auto r = cmc(m);
  EXPECT_EQ(r.at_rank(1), 0.0);
  EXPECT_EQ(r.at_rank(4), 0.0);
  EXPECT_EQ(r.rank_accuracies.back(), 1.0);
}

TEST(Cmc, TiesBrokenByGalleryIndex) {
  auto m = matrix(1, 4, {7}, {1, 2, 7, 3});
  const auto r = cmc(m);  // all zero: order is 0, 1, 2, 3
  EXPECT_EQ(r.ranks[0], 3);
}

TEST(Cmc, ProbeWithoutMateIsExcludedAndCounted) {
  auto m = matrix(2, 2, {0, 9}, {0, 1});
  m.scores = {1.0, 0.0, 0.5, 0.4};
  const auto r = cmc(m);
  EXPECT_EQ(r.excluded_probes, 1);
  EXPECT_EQ(r.ranks[1], 0);
  EXPECT_EQ(r.at_rank(1), 1.0);
}

TEST(Cmc, ExcludedPairsAreNotRanked) {
  auto m = matrix(1, 3, {0}, {1, 0, 2});
  m.scores = {0.9, 0.5, 0.1};
  m.excluded = {1, 0, 0};
  EXPECT_EQ(cmc(m).ranks[0], 1);
  m.excluded = {0, 1, 0};
  EXPECT_EQ(cmc(m).excluded_probes, 1);
}

TEST(Cmc, RejectsNonFiniteScoresAndBadLabels) {
  auto m = matrix(1, 2, {0}, {0, 1});
  m.scores[1] = std::nan("");
  EXPECT_THROW(cmc(m), ValidationError);
  auto n = matrix(1, 2, {0}, {0});
  EXPECT_THROW(cmc(n), ValidationError);
}

TEST(Cmc, MatchesBruteForceOnRandomMatrices) {
  std::mt19937_64 rng(2024);
  auto m = random_matrix(rng, 20, 40, 12, false);
  expect_matches_oracle(m);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = std::uniform_int_distribution<std::size_t>(1, 50)(rng);
    const auto g = std::uniform_int_distribution<std::size_t>(1, 100)(rng);
    expect_matches_oracle(random_matrix(rng, p, g, std::max(2, static_cast<int>(g) / 3), trial % 2 == 0));
  }
}

TEST(Cmc, MonotoneAndInvariantUnderIncreasingTransforms) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto m = random_matrix(rng, 15, 25, 8, trial % 3 == 0);
    const auto base = cmc(m);
    for (std::size_t k = 1; k < base.rank_accuracies.size(); ++k) {
      EXPECT_LE(base.rank_accuracies[k - 1], base.rank_accuracies[k]);
    }
    EXPECT_EQ(base.rank_accuracies.back(), 1.0);
    auto t = m;
    for (auto& s : t.scores) s = std::exp(3.0 * s) * 2.0 + 7.0;
    EXPECT_EQ(cmc(t).rank_accuracies, base.rank_accuracies);
    EXPECT_EQ(cmc(t).ranks, base.ranks);
  }
}

TEST(ScoreAll, ShapeAndElementwiseOracle) {
  std::vector<match::Template> probes;
  std::vector<match::Template> gallery;
  for (int i = 0; i < 3; ++i) {
    probes.push_back(match::make_template(
        mapextract::make_target_stack(lfr::testing::grating(64, 5.0 + i, 20.0 * i), desk_extract())));
  }
  for (int i = 0; i < 4; ++i) {
    gallery.push_back(match::make_template(
        mapextract::make_target_stack(lfr::testing::grating(64, 5.5 + 0.5 * i, 15.0 * i), desk_extract())));
  }
  const auto a = score_all(probes, {0, 1, 2}, gallery, {0, 1, 2, 3}, {}, 1);
  ASSERT_EQ(a.matrix.probes, 3u);
  ASSERT_EQ(a.matrix.gallery, 4u);
  ASSERT_EQ(a.matrix.scores.size(), 12u);
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t g = 0; g < 4; ++g) EXPECT_EQ(a.matrix.at(p, g), match::match_internal(probes[p], gallery[g]).score);
  }
  const auto b = score_all(probes, {0, 1, 2}, gallery, {0, 1, 2, 3}, {}, 4);
  EXPECT_EQ(a.matrix.scores, b.matrix.scores);
}

TEST(ScoreAll, FailurePolicies) {
  auto scorer = [](std::size_t p, std::size_t g) -> double {
    if (p == 1 && g == 0) throw MatcherFailure("bad", 2, "boom");
    if (p == 0 && g == 1) throw UnparseableOutput("bad", "??");
    return static_cast<double>(p * 10 + g);
  };
  const auto zero = score_all(2, 2, {0, 1}, {0, 1}, scorer, FailurePolicy::kZero, 2);
  EXPECT_EQ(zero.matrix.scores, (std::vector<double>{0.0, 0.0, 0.0, 11.0}));
  ASSERT_EQ(zero.failures.size(), 2u);
  EXPECT_EQ(zero.failures[0].kind, "unparseable");
  EXPECT_EQ(zero.failures[1].kind, "matcher_failure");
  EXPECT_TRUE(zero.matrix.excluded.empty());

  const auto excl = score_all(2, 2, {0, 1}, {0, 1}, scorer, FailurePolicy::kExclude, 2);
  EXPECT_TRUE(excl.matrix.is_excluded(1, 0));
  EXPECT_TRUE(excl.matrix.is_excluded(0, 1));
  EXPECT_FALSE(excl.matrix.is_excluded(0, 0));

  auto missing = [](std::size_t, std::size_t) -> double { throw MissingExecutable("no matcher"); };
  EXPECT_THROW(score_all(2, 2, {0, 1}, {0, 1}, missing), MissingExecutable);
  EXPECT_THROW(score_all(0, 2, {}, {0, 1}, scorer), ValidationError);
}

TEST(Reconstruct, MaskingRuleAndRanges) {
  MapStack s;
  for (auto& c : s.channels) c = Plane(8, 8, 0.7f);
  s.segmentation() = Plane(8, 8, 0.0f);
  const auto masked = mask_ridge(s);
  for (float v : masked.values()) EXPECT_EQ(v, 0.0f);

  lfr::testing::TempDir tmp;
  const auto stem = save_fresh_generator(tmp.path(), 3);
  const auto latent = synth::distort(synth::synth_clean(1, 5, desk()).image, synth::sample_distortion(9)).image;
  const auto r = reconstruct(latent, stem);
  ASSERT_EQ(r.stack.height(), 64);
  for (const auto& c : r.stack.channels) {
    for (float v : c.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const float expect = r.stack.segmentation().at(y, x) >= 0.5f ? r.stack.ridge().at(y, x) : 0.0f;
      EXPECT_EQ(r.masked_ridge.at(y, x), expect);
    }
  }
}

TEST(Reconstruct, BatchMatchesSingle) {
  lfr::testing::TempDir tmp;
  auto g = train::load_generator(save_fresh_generator(tmp.path(), 4));
  std::vector<FingerprintImage> latents;
  for (int i = 0; i < 3; ++i) latents.push_back(synth::synth_clean(i, 1, desk()).image);
  const auto batch = reconstruct(latents, g, 2);
  ASSERT_EQ(batch.size(), 3u);
  const auto one = reconstruct(latents[2], g);
  for (std::size_t i = 0; i < one.masked_ridge.size(); ++i) {
    EXPECT_NEAR(batch[2].masked_ridge.values()[i], one.masked_ridge.values()[i], 1e-5);
  }
}

TEST(Reconstruct, CheckpointMismatchIsCheckpointError) {
  lfr::testing::TempDir tmp;
  nets::Discriminator d;
  checkpoint::Meta meta;
  meta.kind = "discriminator";
  checkpoint::save(tmp.path() / "disc", *d, meta);
  const auto latent = synth::synth_clean(1, 5, desk()).image;
  EXPECT_THROW(reconstruct(latent, tmp.path() / "disc"), CheckpointError);
  EXPECT_THROW(reconstruct(latent, tmp.path() / "missing"), CheckpointError);
}

TEST(Reconstruct, OccludedHalfGetsLessForeground) {
  // A small generator trained briefly at 32 px learns where ridges are.
  lfr::testing::TempDir tmp;
  synth::DatasetOptions d;
  d.n_fingers = 6;
  d.impressions_per_finger = 1;
  d.latents_per_impression = 6;
  d.split_fractions = {1.0, 0.0, 0.0};
  d.global_seed = 8;
  d.synth = desk(32);
  d.extract.block_size = 4;
  const auto manifest = synth::build_dataset(tmp.path() / "data", d);

  train::TrainConfig cfg;
  cfg.image_size = 32;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 80;
  cfg.batch_size = 4;
  cfg.learning_rate = 5e-4;
  cfg.use_pidi = false;
  cfg.seed = 3;
  nets::PidiExtractor unused;
  const auto state = train::train_cgan(train::load_pairs(manifest, synth::Split::kTrain), unused, cfg, tmp.path() / "run");
  auto g = state.generator;

  double left = 0.0;
  double right = 0.0;
  for (int f = 0; f < 4; ++f) {
    auto img = synth::synth_clean(100 + f, 21, desk(32)).image;
    for (int y = 0; y < 32; ++y) {
      for (int x = 16; x < 32; ++x) img.pixels.at(y, x) = 0.97f;
    }
    const auto r = reconstruct(img, g);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) (x < 16 ? left : right) += r.stack.segmentation().at(y, x) >= 0.5f ? 1.0 : 0.0;
    }
  }
  EXPECT_LT(right, left);
}

TEST(Quality, GratingIsBestConstantIsWorst) {
  EXPECT_EQ(quality_score(lfr::testing::grating(64, 5.5, 30.0), desk_extract()), 1);
  EXPECT_EQ(quality_score(lfr::testing::grating(64, 6.0, 100.0), desk_extract()), 1);
  EXPECT_EQ(quality_score(lfr::testing::constant_image(64, 0.5f), desk_extract()), 5);
  EXPECT_EQ(quality_score(lfr::testing::constant_image(64, 1.0f), desk_extract()), 5);
}

TEST(Quality, BinsFollowFrozenThresholds) {
  EXPECT_EQ(quality_bin(1.0), 1);
  EXPECT_EQ(quality_bin(0.55), 1);
  EXPECT_EQ(quality_bin(0.5499), 2);
  EXPECT_EQ(quality_bin(0.45), 2);
  EXPECT_EQ(quality_bin(0.35), 3);
  EXPECT_EQ(quality_bin(0.20), 4);
  EXPECT_EQ(quality_bin(0.1999), 5);
  EXPECT_EQ(quality_bin(0.0), 5);
}

TEST(Quality, OcclusionNeverImprovesTheScore) {
  for (int f = 0; f < 12; ++f) {
    const auto clean = synth::synth_clean(f, 31, desk()).image;
    int previous = quality_score(clean, desk_extract());
    for (double area : {0.1, 0.2, 0.3, 0.45, 0.6}) {
      synth::DistortionParams p;
      p.occlusion_count = 1;
      p.occlusion_area_fraction = area;
      p.seed = 1000 + static_cast<std::uint64_t>(f);
      const int q = quality_score(synth::distort(clean, p).image, desk_extract());
      EXPECT_GE(q, previous) << "finger " << f << " area " << area;
      previous = std::max(previous, q);
    }
  }
}

TEST(Quality, StackOverloadScoresTheMaskedRidgeImage) {
  auto stack = mapextract::make_target_stack(lfr::testing::grating(64, 5.5, 30.0), desk_extract());
  EXPECT_EQ(quality_score(stack, desk_extract()), quality_score(ridge_image(mask_ridge(stack)), desk_extract()));
  stack.segmentation() = Plane(64, 64, 0.0f);
  EXPECT_EQ(quality_score(stack, desk_extract()), 5);
}

TEST(RunExperiment, ReportRowsRanksAndDeterminism) {
  lfr::testing::TempDir tmp;
  synth::DatasetOptions d;
  d.n_fingers = 6;
  d.impressions_per_finger = 2;
  d.latents_per_impression = 2;
  d.split_fractions = {0.5, 0.0, 0.5};
  d.global_seed = 12;
  d.synth = desk();
  d.extract.block_size = 8;
  const auto manifest = synth::build_dataset(tmp.path() / "data", d);

  ExperimentConfig cfg;
  cfg.generators = {{"cGAN", save_fresh_generator(tmp.path() / "g1", 1)},
                    {"cGAN+PIDI", save_fresh_generator(tmp.path() / "g2", 2)}};
  cfg.seed = 4;
  cfg.threads = 2;
  const auto report = run_experiment(manifest, cfg, tmp.path() / "eval");
  ASSERT_EQ(report.matching.size(), 2u);
  for (const auto& p : report.matching) {
    ASSERT_EQ(p.rows.size(), 3u);
    EXPECT_EQ(p.rows[0].name, "raw");
    EXPECT_EQ(p.rows[1].name, "cGAN");
    EXPECT_EQ(p.rows[2].name, "cGAN+PIDI");
    for (const auto& r : p.rows) {
      for (std::size_t k = 1; k < r.cmc.rank_accuracies.size(); ++k) {
        EXPECT_LE(r.cmc.rank_accuracies[k - 1], r.cmc.rank_accuracies[k]);
      }
    }
  }
  EXPECT_EQ(report.matching[0].rows[0].gallery, 6u);  // 3 test fingers x 2 clean impressions
  EXPECT_EQ(report.matching[0].rows[0].probes, 12u);
  ASSERT_EQ(report.quality.size(), 3u);
  for (const auto& q : report.quality) {
    int n = 0;
    for (int c : q.histogram) n += c;
    EXPECT_EQ(n, 12);
  }

  // rank_table.csv holds the cmc values at ranks 1, 10, 25 and 50.
  std::ifstream csv(tmp.path() / "eval" / "rank_table.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "protocol,row,rank_1,rank_10,rank_25,rank_50");
  for (const auto& p : report.matching) {
    for (const auto& r : p.rows) {
      ASSERT_TRUE(std::getline(csv, line));
      std::stringstream ss(line);
      std::string protocol, name, cell;
      std::getline(ss, protocol, ',');
      std::getline(ss, name, ',');
      EXPECT_EQ(protocol, to_string(p.protocol));
      EXPECT_EQ(name, r.name);
      for (int k : {1, 10, 25, 50}) {
        std::getline(ss, cell, ',');
        EXPECT_NEAR(std::stod(cell), r.cmc.at_rank(k), 1e-6);
      }
    }
  }
  for (const char* f : {"report.json", "failures.csv", "cmc_latent_to_clean.svg", "cmc_latent_to_latent.svg",
                        "quality_histogram.svg"}) {
    EXPECT_TRUE(fs::exists(tmp.path() / "eval" / f)) << f;
  }

  const auto again = run_experiment(manifest, cfg, tmp.path() / "eval2");
  EXPECT_EQ(again.to_json(), report.to_json());
}

TEST(RunExperiment, ExternalMatcherRowsAndErrors) {
  lfr::testing::TempDir tmp;
  synth::DatasetOptions d;
  d.n_fingers = 4;
  d.impressions_per_finger = 1;
  d.latents_per_impression = 2;
  d.split_fractions = {0.5, 0.0, 0.5};
  d.global_seed = 3;
  d.synth = desk();
  d.extract.block_size = 8;
  const auto manifest = synth::build_dataset(tmp.path() / "data", d);

  ExperimentConfig cfg;
  cfg.protocols = {Protocol::kLatentToClean};
  proc::AdapterConfig echo;
  echo.executable = "/bin/sh";
  echo.args = {"-c", "echo 42", "x", "{probe}", "{gallery}"};
  cfg.external_matcher = echo;
  const auto report = run_experiment(manifest, cfg, tmp.path() / "eval");
  ASSERT_EQ(report.matching.size(), 1u);
  EXPECT_EQ(report.matching[0].rows[0].failures, 0u);

  cfg.external_matcher->args = {"-c", "echo fail >&2; exit 1"};
  const auto failing = run_experiment(manifest, cfg, tmp.path() / "eval2");
  EXPECT_EQ(failing.matching[0].rows[0].failures, 8u);  // 4 probes x 2 clean prints

  cfg.external_matcher->executable = "/nonexistent/matcher";
  EXPECT_THROW(run_experiment(manifest, cfg, tmp.path() / "eval3"), MissingExecutable);
}

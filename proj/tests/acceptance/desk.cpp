#include "desk.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "lfr/checksum.hpp"
#include "lfr/errors.hpp"

namespace lfr::acceptance {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in, nullptr, false);
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, p);
}

bool finished(const fs::path& dir, Stage& stage) {
  const auto j = read_json(dir / "stage.json");
  if (j.is_discarded() || !j.contains("seconds")) return false;
  stage.seconds = j["seconds"].get<double>();
  stage.cached = true;
  return true;
}

void finish(const fs::path& dir, const nlohmann::json& config, double seconds) {
  write_json(dir / "stage.json", {{"seconds", seconds}, {"config", config}});
}

nlohmann::json dataset_json(const synth::DatasetOptions& o) {
  return {{"n_fingers", o.n_fingers},
          {"impressions_per_finger", o.impressions_per_finger},
          {"latents_per_impression", o.latents_per_impression},
          {"split_fractions", o.split_fractions},
          {"global_seed", o.global_seed},
          {"image_size", o.synth.image_size},
          {"ridge_period", {o.synth.min_period, o.synth.max_period}},
          {"block_size", o.extract.block_size}};
}

}  // namespace

synth::SynthOptions desk_synth() {
  synth::SynthOptions s;
  s.image_size = 64;
  s.min_period = 4.5;
  s.max_period = 6.5;
  return s;
}

DeskPlan desk_plan() {
  DeskPlan p;
  p.dataset.n_fingers = 50;
  p.dataset.impressions_per_finger = 2;
  p.dataset.latents_per_impression = 10;
  p.dataset.split_fractions = {0.6, 0.1, 0.3};
  p.dataset.global_seed = 2024;
  p.dataset.synth = desk_synth();
  p.dataset.extract.block_size = 8;

  p.verifier.epochs = 10;
  p.verifier.steps_per_epoch = 125;
  p.verifier.batch_size = 8;
  p.verifier.seed = 11;

  p.cgan.epochs = 30;
  p.cgan.steps_per_epoch = 125;
  p.cgan.batch_size = 8;
  p.cgan.seed = 17;
  p.cgan.checkpoint_interval = 625;
  return p;
}

fs::path workdir() {
  if (const char* env = std::getenv("ACCEPTANCE_WORKDIR"); env != nullptr && *env != '\0') return env;
  return fs::temp_directory_path() / "lfr_acceptance";
}

std::string config_key(const nlohmann::json& j) { return sha256_hex(j.dump()).substr(0, 12); }

Stage ensure_dataset(const fs::path& work, const DeskPlan& plan) {
  const auto config = dataset_json(plan.dataset);
  Stage s;
  s.key = config_key(config);
  s.dir = work / ("dataset-" + s.key);
  if (finished(s.dir, s)) return s;
  fs::create_directories(s.dir);
  const auto t0 = Clock::now();
  fs::remove_all(s.dir / "data");
  synth::build_dataset(s.dir / "data", plan.dataset);
  s.seconds = since(t0);
  finish(s.dir, config, s.seconds);
  return s;
}

Stage ensure_verifier(const fs::path& work, const DeskPlan& plan, const Stage& dataset) {
  const nlohmann::json config = {{"train", train::to_json(plan.verifier)}, {"dataset", dataset.key}};
  Stage s;
  s.key = config_key(config);
  s.dir = work / ("verifier-" + s.key);
  if (finished(s.dir, s)) return s;
  fs::remove_all(s.dir);
  const auto t0 = Clock::now();
  const auto manifest = synth::read_manifest(dataset.dir / "data" / "manifest.csv");
  train::train_verifier(manifest, plan.verifier, s.dir);
  s.seconds = since(t0);
  finish(s.dir, config, s.seconds);
  return s;
}

Stage ensure_cgan(const fs::path& work, const DeskPlan& plan, const Stage& dataset, const Stage& verifier,
                  bool use_pidi) {
  train::TrainConfig cfg = plan.cgan;
  cfg.use_pidi = use_pidi;
  const nlohmann::json config = {
      {"train", train::to_json(cfg)}, {"dataset", dataset.key}, {"verifier", verifier.key}};
  Stage s;
  s.key = config_key(config);
  s.dir = work / ((use_pidi ? "cgan_pidi-" : "cgan-") + s.key);
  if (finished(s.dir, s)) return s;

  // Resume from the newest complete checkpoint of an interrupted run.
  train::CganOptions options;
  double prior = 0.0;
  if (fs::exists(s.dir / "checkpoints")) {
    std::vector<fs::path> done;
    for (const auto& e : fs::directory_iterator(s.dir / "checkpoints")) {
      if (e.is_directory() && fs::exists(e.path() / "state.json")) done.push_back(e.path());
    }
    std::sort(done.begin(), done.end());
    if (!done.empty()) {
      options.resume_from = done.back();
      const auto progress = read_json(s.dir / "progress.json");
      if (!progress.is_discarded() && progress.contains("seconds")) prior = progress["seconds"].get<double>();
      std::cerr << "resuming " << s.dir.filename().string() << " from " << done.back().filename().string() << '\n';
    }
  }
  fs::create_directories(s.dir);

  const auto t0 = Clock::now();
  const int every = cfg.steps_per_epoch;
  options.on_step = [&](const train::CganMetrics& m, nets::Generator&) {
    if ((m.step + 1) % every == 0) {
      write_json(s.dir / "progress.json", {{"seconds", prior + since(t0)}, {"step", m.step + 1}});
      std::cerr << s.dir.filename().string() << " epoch " << m.epoch + 1 << '/' << cfg.epochs << " d " << m.d_loss
                << " l1_R " << m.l1_r << " total " << m.total << '\n';
    }
    return true;
  };
  const auto manifest = synth::read_manifest(dataset.dir / "data" / "manifest.csv");
  train::train_cgan(manifest, verifier.dir / "verifier", cfg, s.dir, options);
  s.seconds = prior + since(t0);
  finish(s.dir, config, s.seconds);
  return s;
}

}  // namespace lfr::acceptance

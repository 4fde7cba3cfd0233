#include "run_config.hpp"

#include <fstream>
#include <set>

#include "lfr/errors.hpp"

namespace lfr::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) {
      throw ConfigError("unknown config field '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + where + "." + key + "' has the wrong type");
  }
}

// Section defaults overlaid with the user's keys, then parsed strictly.
train::TrainConfig train_section(const json& user, const train::TrainConfig& defaults, const std::string& where) {
  json merged = train::to_json(defaults);
  if (!user.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    if (key == "loss_weights" && value.is_object() && merged[key].is_object()) {
      for (const auto& [k, v] : value.items()) merged[key][k] = v;
    } else {
      merged[key] = value;
    }
  }
  try {
    return train::config_from_json(merged);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

json dataset_json(const synth::DatasetOptions& d) {
  return {{"n_fingers", d.n_fingers},
          {"impressions_per_finger", d.impressions_per_finger},
          {"latents_per_impression", d.latents_per_impression},
          {"split_fractions", d.split_fractions},
          {"global_seed", d.global_seed},
          {"image_size", d.synth.image_size},
          {"min_period", d.synth.min_period},
          {"max_period", d.synth.max_period},
          {"block_size", d.extract.block_size}};
}

synth::DatasetOptions dataset_from_json(const json& j, synth::DatasetOptions d) {
  reject_unknown(j,
                 {"n_fingers", "impressions_per_finger", "latents_per_impression", "split_fractions", "global_seed",
                  "image_size", "min_period", "max_period", "block_size"},
                 "dataset");
  read(j, "n_fingers", d.n_fingers, "dataset");
  read(j, "impressions_per_finger", d.impressions_per_finger, "dataset");
  read(j, "latents_per_impression", d.latents_per_impression, "dataset");
  read(j, "split_fractions", d.split_fractions, "dataset");
  read(j, "global_seed", d.global_seed, "dataset");
  read(j, "image_size", d.synth.image_size, "dataset");
  read(j, "min_period", d.synth.min_period, "dataset");
  read(j, "max_period", d.synth.max_period, "dataset");
  read(j, "block_size", d.extract.block_size, "dataset");
  return d;
}

json evaluate_json(const EvaluateSection& e) {
  json protocols = json::array();
  for (auto p : e.protocols) protocols.push_back(eval::to_string(p));
  return {{"protocols", protocols},
          {"split", synth::to_string(e.split)},
          {"seed", e.seed},
          {"latent_gallery_fraction", e.latent_gallery_fraction},
          {"report_ranks", e.report_ranks},
          {"failure_policy", eval::to_string(e.failure_policy)},
          {"include_raw", e.include_raw},
          {"plots", e.plots},
          {"threads", e.threads}};
}

EvaluateSection evaluate_from_json(const json& j, EvaluateSection e) {
  reject_unknown(j,
                 {"protocols", "split", "seed", "latent_gallery_fraction", "report_ranks", "failure_policy",
                  "include_raw", "plots", "threads"},
                 "evaluate");
  if (j.contains("protocols")) {
    std::vector<std::string> names;
    read(j, "protocols", names, "evaluate");
    e.protocols.clear();
    for (const auto& n : names) e.protocols.push_back(eval::protocol_from_string(n));
  }
  if (j.contains("split")) {
    std::string s;
    read(j, "split", s, "evaluate");
    try {
      e.split = synth::split_from_string(s);
    } catch (const Error&) {
      throw ConfigError("config field 'evaluate.split' must be train, val or test");
    }
  }
  if (j.contains("failure_policy")) {
    std::string s;
    read(j, "failure_policy", s, "evaluate");
    e.failure_policy = eval::failure_policy_from_string(s);
  }
  read(j, "seed", e.seed, "evaluate");
  read(j, "latent_gallery_fraction", e.latent_gallery_fraction, "evaluate");
  read(j, "report_ranks", e.report_ranks, "evaluate");
  read(j, "include_raw", e.include_raw, "evaluate");
  read(j, "plots", e.plots, "evaluate");
  read(j, "threads", e.threads, "evaluate");
  return e;
}

}  // namespace

RunConfig::RunConfig() {
  dataset.n_fingers = 50;
  dataset.impressions_per_finger = 2;
  dataset.latents_per_impression = 10;
  dataset.split_fractions = {0.6, 0.1, 0.3};
  dataset.global_seed = 2024;
  dataset.synth.image_size = 64;
  dataset.synth.min_period = 4.5;
  dataset.synth.max_period = 6.5;
  dataset.extract.block_size = 8;

  verifier.epochs = 10;
  verifier.seed = 11;
  train.seed = 17;
  train.checkpoint_interval = 625;
}

void RunConfig::validate() const {
  if (name.empty() || name.find('/') != std::string::npos) {
    throw ConfigError("config field 'name' must be a non-empty name without '/'");
  }
  const auto& d = dataset;
  if (d.n_fingers < 2) throw ConfigError("config field 'dataset.n_fingers' must be >= 2");
  if (d.impressions_per_finger < 1) throw ConfigError("config field 'dataset.impressions_per_finger' must be >= 1");
  if (d.latents_per_impression < 1) throw ConfigError("config field 'dataset.latents_per_impression' must be >= 1");
  double sum = 0.0;
  for (double f : d.split_fractions) {
    if (f < 0.0) throw ConfigError("config field 'dataset.split_fractions' must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("config field 'dataset.split_fractions' must sum to 1");
  if (d.synth.image_size < 16 || d.synth.image_size % 16 != 0) {
    throw ConfigError("config field 'dataset.image_size' must be a positive multiple of 16");
  }
  if (!(d.synth.min_period > 2.0 && d.synth.min_period <= d.synth.max_period)) {
    throw ConfigError("config field 'dataset.min_period' must exceed 2 and not exceed max_period");
  }
  if (d.extract.block_size < 4 || d.synth.image_size % d.extract.block_size != 0) {
    throw ConfigError("config field 'dataset.block_size' must be >= 4 and divide image_size");
  }
  try {
    verifier.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("verifier: ") + e.what());
  }
  try {
    train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  if (verifier.image_size != d.synth.image_size) {
    throw ConfigError("config field 'verifier.image_size' must equal dataset.image_size");
  }
  if (train.image_size != d.synth.image_size) {
    throw ConfigError("config field 'train.image_size' must equal dataset.image_size");
  }
  const auto& e = evaluate;
  if (e.protocols.empty()) throw ConfigError("config field 'evaluate.protocols' must not be empty");
  if (!(e.latent_gallery_fraction > 0.0 && e.latent_gallery_fraction < 1.0)) {
    throw ConfigError("config field 'evaluate.latent_gallery_fraction' must lie in (0, 1)");
  }
  for (int k : e.report_ranks) {
    if (k < 1) throw ConfigError("config field 'evaluate.report_ranks' must hold positive ranks");
  }
  if (e.threads < 0) throw ConfigError("config field 'evaluate.threads' must be >= 0");
  try {
    if (matcher) matcher->validate();
  } catch (const ConfigError& ex) {
    throw ConfigError(std::string("matcher: ") + ex.what());
  }
  try {
    if (quality) quality->validate();
  } catch (const ConfigError& ex) {
    throw ConfigError(std::string("quality: ") + ex.what());
  }
}

json to_json(const RunConfig& cfg) {
  json j = {{"name", cfg.name},
            {"dataset", dataset_json(cfg.dataset)},
            {"verifier", train::to_json(cfg.verifier)},
            {"train", train::to_json(cfg.train)},
            {"evaluate", evaluate_json(cfg.evaluate)}};
  if (cfg.matcher) j["matcher"] = proc::to_json(*cfg.matcher);
  if (cfg.quality) j["quality"] = proc::to_json(*cfg.quality);
  return j;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"name", "dataset", "verifier", "train", "evaluate", "matcher", "quality"}, "");
  RunConfig cfg;
  read(j, "name", cfg.name, "");
  if (j.contains("dataset")) cfg.dataset = dataset_from_json(j["dataset"], cfg.dataset);
  if (j.contains("verifier")) cfg.verifier = train_section(j["verifier"], cfg.verifier, "verifier");
  if (j.contains("train")) cfg.train = train_section(j["train"], cfg.train, "train");
  if (j.contains("evaluate")) cfg.evaluate = evaluate_from_json(j["evaluate"], cfg.evaluate);
  try {
    if (j.contains("matcher")) cfg.matcher = proc::adapter_from_json(j["matcher"]);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("matcher: ") + e.what());
  }
  try {
    if (j.contains("quality")) cfg.quality = proc::adapter_from_json(j["quality"]);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("quality: ") + e.what());
  }
  // Image size is a dataset property; training sections follow it unless set.
  if (!j.contains("train") || !j["train"].contains("image_size")) cfg.train.image_size = cfg.dataset.synth.image_size;
  if (!j.contains("verifier") || !j["verifier"].contains("image_size")) {
    cfg.verifier.image_size = cfg.dataset.synth.image_size;
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return run_config_from_json(j);
}

void apply(RunConfig& cfg, const Overrides& o) {
  if (o.seed) {
    cfg.dataset.global_seed = *o.seed;
    cfg.verifier.seed = *o.seed;
    cfg.train.seed = *o.seed;
    cfg.evaluate.seed = *o.seed;
  }
  if (o.deterministic) {
    cfg.verifier.deterministic_mode = true;
    cfg.train.deterministic_mode = true;
  }
  if (o.no_pidi) cfg.train.use_pidi = false;
  cfg.validate();
}

}  // namespace lfr::cli

#include "lfr/trainer.hpp"

#include <ATen/Context.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "lfr/checkpoint.hpp"
#include "lfr/convert.hpp"
#include "lfr/errors.hpp"
#include "lfr/io.hpp"
#include "lfr/rng.hpp"

namespace lfr::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kGeneratorInit = 0x67656e;
constexpr std::uint64_t kDiscriminatorInit = 0x646973;
constexpr std::uint64_t kVerifierInit = 0x706964;
constexpr std::uint64_t kBatchOrder = 0x626174;
constexpr std::uint64_t kVerifierPairs = 0x706169;

void field(bool ok, const std::string& name, const std::string& what) {
  if (!ok) throw ConfigError("config field '" + name + "': " + what);
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) throw ConfigError("unknown config key '" + where + item.key() + "'");
  }
}

torch::optim::Adam make_adam(const std::vector<torch::Tensor>& params, const TrainConfig& cfg) {
  return torch::optim::Adam(params, torch::optim::AdamOptions(cfg.learning_rate).betas({cfg.beta1, cfg.beta2}));
}

nets::Generator new_generator(const TrainConfig& cfg) {
  torch::manual_seed(derive_seed(cfg.seed, {kGeneratorInit}));
  nets::Generator g;
  nets::init_weights(*g);
  return g;
}

nets::Discriminator new_discriminator(const TrainConfig& cfg) {
  torch::manual_seed(derive_seed(cfg.seed, {kDiscriminatorInit}));
  nets::Discriminator d(cfg.use_pidi);
  nets::init_weights(*d);
  return d;
}

void freeze(nets::PidiExtractor& p) {
  p->eval();
  for (auto& t : p->parameters()) t.requires_grad_(false);
}

bool finite(double v) { return std::isfinite(v); }

std::vector<std::size_t> as_sizes(const std::vector<std::int64_t>& v) { return {v.begin(), v.end()}; }

std::string indices_str(const std::vector<std::int64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// Balanced pairs: even slots genuine (two impressions of one finger), odd slots impostor.
struct Pairs {
  std::vector<std::int64_t> a;
  std::vector<std::int64_t> b;
  std::vector<double> genuine;
};

class PairSampler {
 public:
  explicit PairSampler(const StackData& data) {
    for (std::size_t i = 0; i < data.finger_ids.size(); ++i) {
      by_finger_[data.finger_ids[i]].push_back(static_cast<std::int64_t>(i));
    }
    for (const auto& [finger, rows] : by_finger_) {
      fingers_.push_back(finger);
      if (rows.size() >= 2) multi_.push_back(finger);
    }
    if (multi_.empty()) {
      throw ConfigError("verifier training needs at least one finger with two clean impressions");
    }
    if (fingers_.size() < 2) throw ConfigError("verifier training needs at least two fingers for impostor pairs");
  }

  Pairs sample(Rng& rng, int count) const {
    Pairs p;
    for (int j = 0; j < count; ++j) {
      if (j % 2 == 0) {
        const auto& rows = by_finger_.at(multi_[pick(rng, multi_.size())]);
        const std::size_t x = pick(rng, rows.size());
        std::size_t y = pick(rng, rows.size() - 1);
        if (y >= x) ++y;
        p.a.push_back(rows[x]);
        p.b.push_back(rows[y]);
        p.genuine.push_back(1.0);
      } else {
        const std::size_t fa = pick(rng, fingers_.size());
        std::size_t fb = pick(rng, fingers_.size() - 1);
        if (fb >= fa) ++fb;
        const auto& ra = by_finger_.at(fingers_[fa]);
        const auto& rb = by_finger_.at(fingers_[fb]);
        p.a.push_back(ra[pick(rng, ra.size())]);
        p.b.push_back(rb[pick(rng, rb.size())]);
        p.genuine.push_back(0.0);
      }
    }
    return p;
  }

 private:
  static std::size_t pick(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n) - 1));
  }

  std::map<int, std::vector<std::int64_t>> by_finger_;
  std::vector<int> fingers_;
  std::vector<int> multi_;
};

torch::Tensor rows(const torch::Tensor& t, const std::vector<std::int64_t>& idx) {
  return t.index_select(0, torch::tensor(idx, torch::kInt64));
}

json config_for_resume(const TrainConfig& cfg) {
  json j = to_json(cfg);
  j.erase("epochs");
  j.erase("checkpoint_interval");
  return j;
}

void restore(const fs::path& dir, CganState& state, const TrainConfig& cfg, torch::optim::Adam* opt_g,
             torch::optim::Adam* opt_d) {
  std::ifstream in(dir / "state.json");
  if (!in) throw CheckpointError("missing training state " + (dir / "state.json").string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt training state " + (dir / "state.json").string() + ": " + e.what());
  }
  const TrainConfig saved = config_from_json(j.at("config"));
  if (config_for_resume(saved) != config_for_resume(cfg)) {
    throw ConfigError("resume config differs from the checkpointed run in fields other than epochs/checkpoint_interval");
  }
  checkpoint::load(dir / "generator", *state.generator, "generator");
  checkpoint::load(dir / "discriminator", *state.discriminator, "discriminator");
  if (opt_g) checkpoint::load_optimizer(dir / "opt_g.pt", *opt_g);
  if (opt_d) checkpoint::load_optimizer(dir / "opt_d.pt", *opt_d);
  state.global_step = j.at("global_step").get<std::int64_t>();
  state.metrics.clear();
  for (const auto& m : j.at("metrics")) state.metrics.push_back(cgan_metrics_from_json(m));
}

}  // namespace

void TrainConfig::validate() const {
  field(epochs >= 0, "epochs", "must be >= 0");
  field(steps_per_epoch >= 1, "steps_per_epoch", "must be >= 1");
  field(batch_size >= 1, "batch_size", "must be >= 1");
  field(learning_rate > 0.0, "learning_rate", "must be > 0");
  field(beta1 >= 0.0 && beta1 < 1.0, "beta1", "must lie in [0, 1)");
  field(beta2 >= 0.0 && beta2 < 1.0, "beta2", "must lie in [0, 1)");
  field(checkpoint_interval >= 0, "checkpoint_interval", "must be >= 0");
  field(image_size >= 16 && image_size % 16 == 0, "image_size", "must be a positive multiple of 16");
  field(contrastive_margin >= 0.0, "contrastive_margin", "must be >= 0");
  field(probability_eps >= 0.0 && probability_eps < 0.5, "probability_eps", "must lie in [0, 0.5)");
  try {
    loss_weights.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("config field 'loss_weights': ") + e.what());
  }
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"loss_weights",
           {{"alpha_R", c.loss_weights.alpha_r},
            {"alpha_F", c.loss_weights.alpha_f},
            {"alpha_O", c.loss_weights.alpha_o},
            {"alpha_S", c.loss_weights.alpha_s},
            {"lambda", c.loss_weights.lambda}}},
          {"seed", c.seed},
          {"checkpoint_interval", c.checkpoint_interval},
          {"deterministic_mode", c.deterministic_mode},
          {"image_size", c.image_size},
          {"use_pidi", c.use_pidi},
          {"pidi_grad_to_generator", c.pidi_grad_to_generator},
          {"contrastive_margin", c.contrastive_margin},
          {"probability_eps", c.probability_eps}};
}

TrainConfig config_from_json(const json& j) {
  reject_unknown(j,
                 {"epochs", "steps_per_epoch", "batch_size", "learning_rate", "beta1", "beta2", "loss_weights", "seed",
                  "checkpoint_interval", "deterministic_mode", "image_size", "use_pidi", "pidi_grad_to_generator",
                  "contrastive_margin", "probability_eps"},
                 "");
  TrainConfig c;
  read_field(j, "epochs", c.epochs);
  read_field(j, "steps_per_epoch", c.steps_per_epoch);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "beta1", c.beta1);
  read_field(j, "beta2", c.beta2);
  read_field(j, "seed", c.seed);
  read_field(j, "checkpoint_interval", c.checkpoint_interval);
  read_field(j, "deterministic_mode", c.deterministic_mode);
  read_field(j, "image_size", c.image_size);
  read_field(j, "use_pidi", c.use_pidi);
  read_field(j, "pidi_grad_to_generator", c.pidi_grad_to_generator);
  read_field(j, "contrastive_margin", c.contrastive_margin);
  read_field(j, "probability_eps", c.probability_eps);
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    reject_unknown(w, {"alpha_R", "alpha_F", "alpha_O", "alpha_S", "lambda"}, "loss_weights.");
    read_field(w, "alpha_R", c.loss_weights.alpha_r);
    read_field(w, "alpha_F", c.loss_weights.alpha_f);
    read_field(w, "alpha_O", c.loss_weights.alpha_o);
    read_field(w, "alpha_S", c.loss_weights.alpha_s);
    read_field(w, "lambda", c.loss_weights.lambda);
  }
  c.validate();
  return c;
}

PairData load_pairs(const synth::DatasetManifest& manifest, synth::Split split) {
  PairData out;
  std::vector<torch::Tensor> latents;
  std::vector<torch::Tensor> stacks;
  for (std::size_t i : manifest.indices(split)) {
    const auto& r = manifest.records[i];
    latents.push_back(to_tensor(io::read_png(manifest.resolve(r.latent)).pixels));
    stacks.push_back(to_tensor(io::read_stack(manifest.resolve(r.stack))));
    if (latents.back().sizes().slice(1) != stacks.back().sizes().slice(1)) {
      throw ValidationError("latent and stack sizes differ for " + r.latent);
    }
    out.records.push_back(i);
  }
  if (latents.empty()) throw ConfigError(std::string("manifest has no records in split ") + synth::to_string(split));
  out.latents = torch::stack(latents);
  out.stacks = torch::stack(stacks);
  return out;
}

StackData load_clean_stacks(const synth::DatasetManifest& manifest, synth::Split split) {
  StackData out;
  std::set<std::string> seen;
  std::vector<torch::Tensor> stacks;
  for (std::size_t i : manifest.indices(split)) {
    const auto& r = manifest.records[i];
    if (!seen.insert(r.stack).second) continue;
    stacks.push_back(to_tensor(io::read_stack(manifest.resolve(r.stack))));
    out.finger_ids.push_back(r.finger_id);
  }
  if (stacks.empty()) throw ConfigError(std::string("manifest has no records in split ") + synth::to_string(split));
  out.stacks = torch::stack(stacks);
  return out;
}

std::vector<std::int64_t> batch_indices(std::uint64_t seed, std::int64_t step, std::int64_t n, int batch_size,
                                        int steps_per_epoch) {
  if (n <= 0) throw ValidationError("cannot batch an empty dataset");
  const std::int64_t epoch = step / steps_per_epoch;
  const std::int64_t local = step % steps_per_epoch;
  Rng rng(derive_seed(seed, {kBatchOrder, static_cast<std::uint64_t>(epoch)}));
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = rng.uniform_int(0, static_cast<int>(i));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  std::vector<std::int64_t> out;
  for (int b = 0; b < batch_size; ++b) out.push_back(perm[static_cast<std::size_t>((local * batch_size + b) % n)]);
  return out;
}

void enable_deterministic_mode() {
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, false);
}

json to_json(const CganMetrics& m) {
  return {{"step", m.step}, {"epoch", m.epoch}, {"d_loss", m.d_loss}, {"g_adv", m.g_adv}, {"l1_R", m.l1_r},
          {"l1_F", m.l1_f}, {"l1_O", m.l1_o},   {"l1_S", m.l1_s},     {"total", m.total}};
}

CganMetrics cgan_metrics_from_json(const json& j) {
  CganMetrics m;
  m.step = j.at("step").get<std::int64_t>();
  m.epoch = j.at("epoch").get<int>();
  m.d_loss = j.at("d_loss").get<double>();
  m.g_adv = j.at("g_adv").get<double>();
  m.l1_r = j.at("l1_R").get<double>();
  m.l1_f = j.at("l1_F").get<double>();
  m.l1_o = j.at("l1_O").get<double>();
  m.l1_s = j.at("l1_S").get<double>();
  m.total = j.at("total").get<double>();
  return m;
}

std::vector<CganMetrics> read_metrics(const fs::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw IoError("cannot read metrics " + jsonl.string());
  std::vector<CganMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(cgan_metrics_from_json(json::parse(line)));
  }
  return out;
}

VerifierResult train_verifier(const StackData& data, const TrainConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  if (data.stacks.size(2) != cfg.image_size || data.stacks.size(3) != cfg.image_size) {
    throw ConfigError("config field 'image_size' does not match the dataset stacks");
  }
  const PairSampler sampler(data);
  if (cfg.deterministic_mode) enable_deterministic_mode();

  torch::manual_seed(derive_seed(cfg.seed, {kVerifierInit}));
  VerifierResult result;
  result.extractor = nets::PidiExtractor();
  nets::init_weights(*result.extractor);
  auto& p = result.extractor;
  p->train();
  auto opt = make_adam(p->parameters(), cfg);

  fs::create_directories(out_dir);
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  for (std::int64_t step = 0; step < cfg.total_steps(); ++step) {
    Rng rng(derive_seed(cfg.seed, {kVerifierPairs, static_cast<std::uint64_t>(step)}));
    const Pairs pairs = sampler.sample(rng, cfg.batch_size);
    const auto both = torch::cat({rows(data.stacks, pairs.a), rows(data.stacks, pairs.b)}, 0);
    const auto emb = p->forward(both).embedding;
    const auto loss = objectives::contrastive_loss(emb.narrow(0, 0, cfg.batch_size),
                                                   emb.narrow(0, cfg.batch_size, cfg.batch_size),
                                                   torch::tensor(pairs.genuine, torch::kFloat32),
                                                   cfg.contrastive_margin);
    const double value = loss.item<double>();
    if (!finite(value)) {
      std::vector<std::int64_t> idx = pairs.a;
      idx.insert(idx.end(), pairs.b.begin(), pairs.b.end());
      throw TrainingDiverged("verifier loss is not finite at step " + std::to_string(step) + " (stack rows " +
                                 indices_str(idx) + ")",
                             step, as_sizes(idx));
    }
    opt.zero_grad();
    loss.backward();
    opt.step();
    VerifierMetrics m{step, static_cast<int>(step / cfg.steps_per_epoch), value};
    result.metrics.push_back(m);
    metrics << json{{"step", m.step}, {"epoch", m.epoch}, {"loss", m.loss}}.dump() << '\n';
  }
  metrics.flush();

  freeze(p);
  result.checkpoint = out_dir / "verifier";
  checkpoint::Meta meta;
  meta.kind = "pidi";
  meta.input_size = cfg.image_size;
  meta.epoch = cfg.epochs;
  meta.global_step = cfg.total_steps();
  meta.seed = cfg.seed;
  meta.extra = {{"config", to_json(cfg)}};
  checkpoint::save(result.checkpoint, *p, meta);
  return result;
}

VerifierResult train_verifier(const synth::DatasetManifest& manifest, const TrainConfig& cfg, const fs::path& out_dir) {
  return train_verifier(load_clean_stacks(manifest, synth::Split::kTrain), cfg, out_dir);
}

nets::PidiExtractor load_verifier(const fs::path& stem) {
  nets::PidiExtractor p;
  checkpoint::load(stem, *p, "pidi");
  freeze(p);
  return p;
}

Separation verifier_separation(nets::PidiExtractor& extractor, const StackData& data, int pairs, std::uint64_t seed) {
  const PairSampler sampler(data);
  torch::NoGradGuard guard;
  const bool was_training = extractor->is_training();
  extractor->eval();
  Rng rng(seed);
  const Pairs p = sampler.sample(rng, pairs);
  auto embed = [&](const std::vector<std::int64_t>& idx) {
    const auto e = extractor->forward(rows(data.stacks, idx)).embedding;
    return e / e.norm(2, 1, true).clamp_min(1e-12);
  };
  const auto d = (embed(p.a) - embed(p.b)).norm(2, 1);
  Separation s;
  int genuine = 0;
  for (int i = 0; i < pairs; ++i) {
    const double v = d[i].item<double>();
    if (p.genuine[static_cast<std::size_t>(i)] > 0.5) {
      s.mean_genuine += v;
      ++genuine;
    } else {
      s.mean_impostor += v;
    }
  }
  s.mean_genuine /= std::max(genuine, 1);
  s.mean_impostor /= std::max(pairs - genuine, 1);
  s.pairs = pairs;
  if (was_training) extractor->train();
  return s;
}

void save_state(const fs::path& dir, const CganState& state, const TrainConfig& cfg, const torch::optim::Adam* opt_g,
                const torch::optim::Adam* opt_d) {
  fs::path staging = dir;
  staging += ".partial";
  fs::remove_all(staging);
  fs::create_directories(staging);
  checkpoint::Meta meta;
  meta.input_size = cfg.image_size;
  meta.epoch = static_cast<int>(state.global_step / cfg.steps_per_epoch);
  meta.global_step = state.global_step;
  meta.seed = cfg.seed;
  meta.kind = "generator";
  checkpoint::save(staging / "generator", *state.generator, meta);
  meta.kind = "discriminator";
  meta.extra = {{"use_pidi", cfg.use_pidi}};
  checkpoint::save(staging / "discriminator", *state.discriminator, meta);
  if (opt_g) checkpoint::save_optimizer(staging / "opt_g.pt", *opt_g);
  if (opt_d) checkpoint::save_optimizer(staging / "opt_d.pt", *opt_d);
  json metrics = json::array();
  for (const auto& m : state.metrics) metrics.push_back(to_json(m));
  const json j = {{"global_step", state.global_step},
                  {"epoch", meta.epoch},
                  {"config", to_json(cfg)},
                  {"metrics", metrics}};
  std::ofstream(staging / "state.json") << j.dump() << '\n';
  fs::remove_all(dir);
  fs::rename(staging, dir);
}

CganState load_state(const fs::path& dir, const TrainConfig& cfg, torch::optim::Adam* opt_g,
                     torch::optim::Adam* opt_d) {
  CganState state;
  state.generator = nets::Generator();
  state.discriminator = nets::Discriminator(cfg.use_pidi);
  restore(dir, state, cfg, opt_g, opt_d);
  return state;
}

nets::Generator load_generator(const fs::path& path) {
  const fs::path stem = fs::is_directory(path) ? path / "generator" : path;
  nets::Generator g;
  checkpoint::load(stem, *g, "generator");
  g->eval();
  return g;
}

CganState train_cgan(const PairData& data, nets::PidiExtractor verifier, const TrainConfig& cfg, const fs::path& out_dir,
                     const CganOptions& options) {
  cfg.validate();
  if (data.latents.size(2) != cfg.image_size || data.latents.size(3) != cfg.image_size) {
    throw ConfigError("config field 'image_size' does not match the training latents");
  }
  if (!verifier) throw ConfigError("cGAN training needs a verifier");
  if (cfg.deterministic_mode) enable_deterministic_mode();
  freeze(verifier);

  CganState state;
  state.generator = new_generator(cfg);
  state.discriminator = new_discriminator(cfg);
  auto& g = state.generator;
  auto& d = state.discriminator;
  auto opt_g = make_adam(g->parameters(), cfg);
  auto opt_d = make_adam(d->parameters(), cfg);
  if (options.resume_from) restore(*options.resume_from, state, cfg, &opt_g, &opt_d);

  fs::create_directories(out_dir);
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  for (const auto& m : state.metrics) metrics << to_json(m).dump() << '\n';

  const auto& w = cfg.loss_weights;
  const double eps = cfg.probability_eps;
  g->train();
  d->train();
  for (std::int64_t step = state.global_step; step < cfg.total_steps(); ++step) {
    const auto idx = batch_indices(cfg.seed, step, data.latents.size(0), cfg.batch_size, cfg.steps_per_epoch);
    const auto latent = rows(data.latents, idx);
    const auto real = rows(data.stacks, idx);

    const auto fake = g->forward(latent);

    // Discriminator step: same latent condition for both inputs, PIDI without gradient.
    nets::PidiFeatures real_pidi;
    nets::PidiFeatures fake_pidi;
    if (cfg.use_pidi) {
      torch::NoGradGuard guard;
      real_pidi = verifier->forward(real);
      fake_pidi = verifier->forward(fake.detach());
    }
    const auto d_real = d->forward(latent, real, cfg.use_pidi ? &real_pidi : nullptr);
    const auto d_fake = d->forward(latent, fake.detach(), cfg.use_pidi ? &fake_pidi : nullptr);
    const auto adv = objectives::cgan_value(d_real, d_fake, eps);
    opt_d.zero_grad();
    adv.discriminator_loss.backward();
    opt_d.step();

    // Generator step.
    nets::PidiFeatures g_pidi;
    if (cfg.use_pidi) {
      if (cfg.pidi_grad_to_generator) {
        g_pidi = verifier->forward(fake);
      } else {
        torch::NoGradGuard guard;
        g_pidi = verifier->forward(fake.detach());
      }
    }
    const auto d_fake_g = d->forward(latent, fake, cfg.use_pidi ? &g_pidi : nullptr);
    const auto g_adv = -torch::log(eps > 0.0 ? d_fake_g.clamp(eps, 1.0 - eps) : d_fake_g).mean();
    const auto l1 = objectives::l1_multi(fake, real, w);
    const auto total = objectives::generator_objective(g_adv, l1.total, w);
    opt_g.zero_grad();
    total.backward();
    opt_g.step();

    CganMetrics m;
    m.step = step;
    m.epoch = static_cast<int>(step / cfg.steps_per_epoch);
    m.d_loss = adv.discriminator_loss.item<double>();
    m.g_adv = g_adv.item<double>();
    m.l1_r = l1.terms[0].item<double>();
    m.l1_f = l1.terms[1].item<double>();
    m.l1_o = l1.terms[2].item<double>();
    m.l1_s = l1.terms[3].item<double>();
    m.total = total.item<double>();
    if (!finite(m.d_loss) || !finite(m.total)) {
      std::vector<std::int64_t> records;
      for (auto i : idx) {
        records.push_back(data.records.empty() ? i
                                               : static_cast<std::int64_t>(data.records[static_cast<std::size_t>(i)]));
      }
      throw TrainingDiverged("cGAN loss is not finite at step " + std::to_string(step) + " (d_loss " +
                                 std::to_string(m.d_loss) + ", total " + std::to_string(m.total) +
                                 "); batch records " + indices_str(records),
                             step, as_sizes(records));
    }
    state.metrics.push_back(m);
    state.global_step = step + 1;
    metrics << to_json(m).dump() << '\n';
    metrics.flush();

    if (cfg.checkpoint_interval > 0 && state.global_step % cfg.checkpoint_interval == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%07lld", static_cast<long long>(state.global_step));
      save_state(out_dir / "checkpoints" / name, state, cfg, &opt_g, &opt_d);
    }
    if (options.on_step && !options.on_step(m, g)) break;
  }
  save_state(out_dir / "final", state, cfg, &opt_g, &opt_d);
  g->eval();
  d->eval();
  return state;
}

CganState train_cgan(const synth::DatasetManifest& manifest, const fs::path& verifier_stem, const TrainConfig& cfg,
                     const fs::path& out_dir, const CganOptions& options) {
  return train_cgan(load_pairs(manifest, synth::Split::kTrain), load_verifier(verifier_stem), cfg, out_dir, options);
}

}  // namespace lfr::train

#include "commands.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>

#include <opencv2/core/version.hpp>
#include <torch/version.h>

#include "lfr/checksum.hpp"
#include "lfr/errors.hpp"
#include "lfr/evalkit.hpp"
#include "lfr/io.hpp"
#include "lfr/mapextract.hpp"
#include "lfr/nets.hpp"

#ifndef LFR_VERSION
#define LFR_VERSION "0.0.0"
#endif

namespace lfr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::ostream& log(const Context& ctx) { return ctx.log != nullptr ? *ctx.log : std::cerr; }

fs::path dataset_dir(const Context& ctx) { return ctx.run_dir / "dataset"; }
fs::path verifier_dir(const Context& ctx) { return ctx.run_dir / "verifier"; }
fs::path model_dir(const Context& ctx, bool use_pidi) { return ctx.run_dir / (use_pidi ? "cgan_pidi" : "cgan"); }
std::string model_stage(bool use_pidi) { return use_pidi ? "train.cgan_pidi" : "train.cgan"; }

synth::DatasetManifest dataset(const Context& ctx, const RunManifest& run) {
  if (!run.stage("synth") || !fs::exists(dataset_dir(ctx) / "manifest.csv")) {
    throw StageError("no dataset in " + ctx.run_dir.string() + "; run `lfr synth` first");
  }
  return synth::read_manifest(dataset_dir(ctx) / "manifest.csv");
}

// True when the stage already ran with this config hash and its outputs are intact.
bool up_to_date(const Context& ctx, const RunManifest& run, const std::string& stage, const std::string& hash,
                const fs::path& output, const std::function<std::string()>& checksum) {
  const auto entry = run.stage(stage);
  if (!entry) {
    if (fs::exists(output)) {
      throw StageError(output.string() + " exists but is not recorded in the run manifest; refusing to overwrite");
    }
    return false;
  }
  if (entry->value("config_hash", "") != hash) {
    throw StageError("stage '" + stage + "' already ran in " + ctx.run_dir.string() +
                     " with a different config; use a new --run-dir");
  }
  if (!fs::exists(output) || checksum() != entry->value("output_checksum", "")) {
    throw StageError("outputs of stage '" + stage + "' no longer match the run manifest");
  }
  log(ctx) << "[lfr] " << stage << " is up to date\n";
  return true;
}

std::string file_checksum(const fs::path& p) { return sha256_file(p); }

// SHA-256 over the relative paths and contents of every regular file under dir.
std::string tree_checksum(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += fs::relative(f, dir).generic_string() + ":" + sha256_file(f) + "\n";
  return sha256_hex(acc);
}

void replace_dir(const fs::path& staging, const fs::path& target) {
  fs::remove_all(target);
  fs::rename(staging, target);
}

}  // namespace

json tool_versions() {
  return {{"lfr", LFR_VERSION}, {"libtorch", TORCH_VERSION}, {"opencv", CV_VERSION}, {"compiler", __VERSION__}};
}

std::string hash_json(const json& j) { return sha256_hex(j.dump()); }

RunManifest::RunManifest(fs::path run_dir) : path_(run_dir / "run_manifest.json") {
  if (fs::exists(path_)) {
    std::ifstream in(path_);
    data_ = json::parse(in, nullptr, false);
    if (data_.is_discarded() || !data_.is_object()) throw StageError("run manifest " + path_.string() + " is corrupt");
  } else {
    data_ = {{"stages", json::object()}};
  }
}

std::optional<json> RunManifest::stage(const std::string& name) const {
  if (!data_.contains("stages") || !data_["stages"].contains(name)) return std::nullopt;
  return std::optional<json>(std::in_place, data_["stages"][name]);
}

void RunManifest::record(const std::string& name, json entry, const RunConfig& cfg) {
  entry["finished_at"] = utc_now();
  entry["versions"] = tool_versions();
  data_["run"] = cfg.name;
  data_["config"] = to_json(cfg);
  data_["stages"][name] = std::move(entry);
  fs::create_directories(path_.parent_path());
  const fs::path tmp = path_.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << data_.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path_);
}

void cmd_synth(const Context& ctx) {
  RunManifest run(ctx.run_dir);
  const auto& d = ctx.cfg.dataset;
  const json section = to_json(ctx.cfg)["dataset"];
  const std::string hash = hash_json(section);
  const fs::path out = dataset_dir(ctx);
  auto checksum = [&] { return synth::dataset_checksum(synth::read_manifest(out / "manifest.csv")); };
  if (up_to_date(ctx, run, "synth", hash, out, checksum)) return;

  log(ctx) << "[lfr] synth: " << d.n_fingers << " fingers x " << d.impressions_per_finger << " impressions x "
           << d.latents_per_impression << " latents at " << d.synth.image_size << " px\n";
  const auto t0 = Clock::now();
  const auto manifest = synth::build_dataset(out, d);
  const std::string sum = synth::dataset_checksum(manifest);
  run.record("synth",
             {{"config_hash", hash},
              {"config", section},
              {"seed", d.global_seed},
              {"records", manifest.records.size()},
              {"output", "dataset"},
              {"output_checksum", sum},
              {"seconds", since(t0)}},
             ctx.cfg);
  log(ctx) << "[lfr] synth: " << manifest.records.size() << " latents written to " << out.string() << '\n';
}

void cmd_extract(const Context& ctx, const ExtractArgs& args) {
  const auto& opts = ctx.cfg.dataset.extract;
  if (args.input) {
    // Free-standing extraction over user images.
    if (!args.out) throw ConfigError("extract --input needs --out");
    std::vector<fs::path> inputs;
    if (fs::is_directory(*args.input)) {
      for (const auto& e : fs::directory_iterator(*args.input)) {
        if (e.is_regular_file() && e.path().extension() == ".png") inputs.push_back(e.path());
      }
      std::sort(inputs.begin(), inputs.end());
    } else if (fs::is_regular_file(*args.input)) {
      inputs.push_back(*args.input);
    } else {
      throw StageError("extract input " + args.input->string() + " does not exist");
    }
    fs::create_directories(*args.out);
    for (const auto& in : inputs) {
      const fs::path target = *args.out / (in.stem().string() + ".stack");
      const auto stack = mapextract::make_target_stack(io::read_png(in), opts);
      if (fs::exists(target)) {
        if (io::read_stack(target) == stack) continue;
        throw StageError(target.string() + " exists with different content; refusing to overwrite");
      }
      io::write_stack(target, stack);
      io::write_stack_pngs(*args.out / in.stem(), stack);
    }
    log(ctx) << "[lfr] extract: " << inputs.size() << " stacks in " << args.out->string() << '\n';
    return;
  }

  // Pipeline mode: recompute every target stack of the run's dataset and check it
  // against the stack synth stored, writing PNG previews.
  RunManifest run(ctx.run_dir);
  const auto manifest = dataset(ctx, run);
  const fs::path out = args.out.value_or(ctx.run_dir / "extract");
  const std::string hash = hash_json({{"dataset", run.stage("synth")->value("output_checksum", "")},
                                      {"block_size", opts.block_size},
                                      {"var_threshold", opts.var_threshold}});
  if (up_to_date(ctx, run, "extract", hash, out, [&] { return tree_checksum(out); })) return;

  const auto t0 = Clock::now();
  const fs::path staging = out.string() + ".partial";
  fs::remove_all(staging);
  fs::create_directories(staging);
  std::set<std::string> seen;
  std::size_t n = 0;
  for (const auto& r : manifest.records) {
    if (!seen.insert(r.clean).second) continue;
    const auto stack = mapextract::make_target_stack(io::read_png(manifest.resolve(r.clean)), opts);
    if (!(io::read_stack(manifest.resolve(r.stack)) == stack)) {
      fs::remove_all(staging);
      throw StageError("target stack for " + r.clean + " differs from the dataset's " + r.stack);
    }
    const fs::path stem = staging / fs::path(r.clean).stem();
    io::write_stack(stem.string() + ".stack", stack);
    io::write_stack_pngs(stem, stack);
    ++n;
  }
  replace_dir(staging, out);
  run.record("extract",
             {{"config_hash", hash},
              {"inputs", {{"dataset", run.stage("synth")->value("output_checksum", "")}}},
              {"stacks", n},
              {"output", fs::relative(out, ctx.run_dir).generic_string()},
              {"output_checksum", tree_checksum(out)},
              {"seconds", since(t0)}},
             ctx.cfg);
  log(ctx) << "[lfr] extract: " << n << " target stacks verified and written to " << out.string() << '\n';
}

void cmd_train_verifier(const Context& ctx) {
  RunManifest run(ctx.run_dir);
  const auto manifest = dataset(ctx, run);
  const std::string data_sum = run.stage("synth")->value("output_checksum", "");
  const json section = train::to_json(ctx.cfg.verifier);
  const std::string hash = hash_json({{"verifier", section}, {"dataset", data_sum}});
  const fs::path out = verifier_dir(ctx);
  if (up_to_date(ctx, run, "train-verifier", hash, out, [&] { return file_checksum(out / "verifier.pt"); })) return;

  log(ctx) << "[lfr] train-verifier: " << ctx.cfg.verifier.total_steps() << " steps\n";
  const auto t0 = Clock::now();
  const fs::path staging = out.string() + ".partial";
  fs::remove_all(staging);
  train::train_verifier(manifest, ctx.cfg.verifier, staging);
  replace_dir(staging, out);
  run.record("train-verifier",
             {{"config_hash", hash},
              {"config", section},
              {"seed", ctx.cfg.verifier.seed},
              {"inputs", {{"dataset", data_sum}}},
              {"output", "verifier"},
              {"output_checksum", file_checksum(out / "verifier.pt")},
              {"seconds", since(t0)}},
             ctx.cfg);
}

void cmd_train(const Context& ctx, const TrainArgs& args) {
  RunManifest run(ctx.run_dir);
  const auto manifest = dataset(ctx, run);
  const auto& cfg = ctx.cfg.train;
  const bool pidi = cfg.use_pidi;
  const std::string data_sum = run.stage("synth")->value("output_checksum", "");
  const auto verifier_entry = run.stage("train-verifier");
  if (pidi && !verifier_entry) throw StageError("cGAN+PIDI training needs a verifier; run `lfr train-verifier` first");
  const std::string verifier_sum = verifier_entry ? verifier_entry->value("output_checksum", "") : "";
  const json section = train::to_json(cfg);
  const std::string hash = hash_json({{"train", section}, {"dataset", data_sum}, {"verifier", pidi ? verifier_sum : ""}});
  const fs::path out = model_dir(ctx, pidi);
  const std::string stage = model_stage(pidi);
  auto checksum = [&] { return file_checksum(out / "final" / "generator.pt"); };

  train::CganOptions options;
  if (args.resume && !run.stage(stage) && fs::exists(out / "checkpoints")) {
    std::vector<fs::path> done;
    for (const auto& e : fs::directory_iterator(out / "checkpoints")) {
      if (e.is_directory() && fs::exists(e.path() / "state.json")) done.push_back(e.path());
    }
    std::sort(done.begin(), done.end());
    if (!done.empty()) options.resume_from = done.back();
  }
  if (!options.resume_from && up_to_date(ctx, run, stage, hash, out, checksum)) return;

  log(ctx) << "[lfr] train (" << (pidi ? "cGAN+PIDI" : "cGAN") << "): " << cfg.total_steps() << " steps"
           << (options.resume_from ? ", resuming from " + options.resume_from->filename().string() : "") << '\n';
  const int every = std::max(1, cfg.steps_per_epoch);
  options.on_step = [&](const train::CganMetrics& m, nets::Generator&) {
    if ((m.step + 1) % every == 0) {
      log(ctx) << "[lfr] epoch " << m.epoch + 1 << '/' << cfg.epochs << " d_loss " << m.d_loss << " g_adv " << m.g_adv
               << " l1_R " << m.l1_r << " total " << m.total << '\n';
    }
    return true;
  };
  const auto t0 = Clock::now();
  if (pidi) {
    train::train_cgan(manifest, verifier_dir(ctx) / "verifier", cfg, out, options);
  } else {
    // The plain cGAN never consults the verifier.
    train::train_cgan(train::load_pairs(manifest, synth::Split::kTrain), nets::PidiExtractor(), cfg, out, options);
  }
  run.record(stage,
             {{"config_hash", hash},
              {"config", section},
              {"seed", cfg.seed},
              {"inputs", {{"dataset", data_sum}, {"verifier", pidi ? json(verifier_sum) : json(nullptr)}}},
              {"output", fs::relative(out, ctx.run_dir).generic_string()},
              {"output_checksum", checksum()},
              {"seconds", since(t0)}},
             ctx.cfg);
}

void cmd_reconstruct(const Context& ctx, const ReconstructArgs& args) {
  RunManifest run(ctx.run_dir);
  const auto manifest = dataset(ctx, run);
  const bool pidi = ctx.cfg.train.use_pidi;
  const auto split = args.split ? synth::split_from_string(*args.split) : ctx.cfg.evaluate.split;
  fs::path ckpt;
  std::string ckpt_sum;
  if (args.checkpoint) {
    ckpt = *args.checkpoint;
    ckpt_sum = file_checksum((fs::is_directory(ckpt) ? ckpt / "generator" : ckpt).string() + ".pt");
  } else {
    const auto entry = run.stage(model_stage(pidi));
    if (!entry) throw StageError("no trained " + std::string(pidi ? "cGAN+PIDI" : "cGAN") + " model; run `lfr train` first");
    ckpt = model_dir(ctx, pidi) / "final";
    ckpt_sum = entry->value("output_checksum", "");
  }
  const std::string name = std::string(pidi ? "cgan_pidi" : "cgan") + "_" + synth::to_string(split);
  const std::string stage = "reconstruct." + name;
  const fs::path out = ctx.run_dir / "reconstruct" / name;
  const std::string hash = hash_json({{"generator", ckpt_sum}, {"split", synth::to_string(split)}});
  if (up_to_date(ctx, run, stage, hash, out, [&] { return tree_checksum(out); })) return;

  auto g = train::load_generator(ckpt);
  const auto idx = manifest.indices(split);
  std::vector<FingerprintImage> latents;
  for (auto i : idx) latents.push_back(io::read_png(manifest.resolve(manifest.records[i].latent)));
  const auto t0 = Clock::now();
  const auto recon = eval::reconstruct(latents, g);
  const fs::path staging = out.string() + ".partial";
  fs::remove_all(staging);
  fs::create_directories(staging);
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const std::string stem = fs::path(manifest.records[idx[i]].latent).stem().string();
    io::write_png(staging / (stem + "_masked.png"), eval::ridge_image(recon[i].masked_ridge).pixels);
    io::write_stack(staging / (stem + ".stack"), recon[i].stack);
  }
  replace_dir(staging, out);
  run.record(stage,
             {{"config_hash", hash},
              {"inputs", {{"generator", ckpt_sum}, {"split", synth::to_string(split)}}},
              {"latents", recon.size()},
              {"output", fs::relative(out, ctx.run_dir).generic_string()},
              {"output_checksum", tree_checksum(out)},
              {"seconds", since(t0)}},
             ctx.cfg);
  log(ctx) << "[lfr] reconstruct: " << recon.size() << " latents of split " << synth::to_string(split) << " -> "
           << out.string() << '\n';
}

void cmd_evaluate(const Context& ctx) {
  RunManifest run(ctx.run_dir);
  const auto manifest = dataset(ctx, run);
  const auto& e = ctx.cfg.evaluate;
  eval::ExperimentConfig cfg;
  cfg.protocols = e.protocols;
  cfg.split = e.split;
  cfg.seed = e.seed;
  cfg.latent_gallery_fraction = e.latent_gallery_fraction;
  cfg.report_ranks = e.report_ranks;
  cfg.failure_policy = e.failure_policy;
  cfg.include_raw = e.include_raw;
  cfg.plots = e.plots;
  cfg.threads = e.threads;
  cfg.external_matcher = ctx.cfg.matcher;
  cfg.external_quality = ctx.cfg.quality;

  json inputs = {{"dataset", run.stage("synth")->value("output_checksum", "")}};
  std::string rows = cfg.include_raw ? "raw" : "";
  for (bool pidi : {false, true}) {
    if (pidi && ctx.no_pidi) continue;
    const auto entry = run.stage(model_stage(pidi));
    if (!entry) continue;
    cfg.generators.push_back({pidi ? "cGAN+PIDI" : "cGAN", model_dir(ctx, pidi) / "final"});
    inputs[pidi ? "cgan_pidi" : "cgan"] = entry->value("output_checksum", "");
    rows += std::string(rows.empty() ? "" : "+") + (pidi ? "cgan_pidi" : "cgan");
  }
  if (cfg.generators.empty()) log(ctx) << "[lfr] evaluate: no trained model in the run, reporting the raw baseline only\n";

  json section = to_json(ctx.cfg)["evaluate"];
  if (ctx.cfg.matcher) section["matcher"] = proc::to_json(*ctx.cfg.matcher);
  if (ctx.cfg.quality) section["quality"] = proc::to_json(*ctx.cfg.quality);
  if (rows.empty()) throw StageError("nothing to evaluate: include_raw is off and no model is trained");
  // One result set per combination of rows, so evaluating again after another
  // model finishes adds a directory instead of overwriting.
  const std::string stage = "evaluate." + rows;
  const fs::path out = ctx.run_dir / "evaluate" / rows;
  const std::string hash = hash_json({{"evaluate", section}, {"inputs", inputs}});
  if (up_to_date(ctx, run, stage, hash, out, [&] { return file_checksum(out / "report.json"); })) return;

  const auto t0 = Clock::now();
  const fs::path staging = out.string() + ".partial";
  fs::remove_all(staging);
  const auto report = eval::run_experiment(manifest, cfg, staging);
  replace_dir(staging, out);
  run.record(stage,
             {{"config_hash", hash},
              {"config", section},
              {"seed", e.seed},
              {"inputs", inputs},
              {"output", fs::relative(out, ctx.run_dir).generic_string()},
              {"output_checksum", file_checksum(out / "report.json")},
              {"seconds", since(t0)}},
             ctx.cfg);

  for (const auto& p : report.matching) {
    log(ctx) << "[lfr] " << eval::to_string(p.protocol) << '\n';
    for (const auto& r : p.rows) {
      log(ctx) << "[lfr]   " << r.name;
      for (int k : e.report_ranks) log(ctx) << "  rank-" << k << ' ' << r.cmc.at_rank(k);
      log(ctx) << '\n';
    }
  }
  for (const auto& q : report.quality) log(ctx) << "[lfr] quality " << q.name << " mean " << q.mean << '\n';
}

void cmd_inspect(const InspectArgs& args, std::ostream& out) {
  if (args.size < 16 || args.size % 16 != 0) throw ConfigError("inspect --size must be a positive multiple of 16");
  torch::NoGradGuard guard;
  const auto n = static_cast<std::int64_t>(args.size);
  nets::Generator g;
  nets::PidiExtractor p;
  nets::Discriminator d(true);
  g->eval();
  p->eval();
  d->eval();
  nets::Trace tg, tp, td;
  const auto latent = torch::full({1, 1, n, n}, 0.5);
  const auto stack = g->forward(latent, &tg);
  const auto features = p->forward(stack, &tp);
  d->forward(latent, stack, &features, &td);

  auto layer_params = [](const torch::nn::Module& m, int layer) {
    for (const auto& child : m.named_children()) {
      if (child.key() == "l" + std::to_string(layer)) return nets::count_params(*child.value());
    }
    return std::int64_t{0};
  };
  struct Net {
    const char* name;
    const torch::nn::Module* module;
    const nets::Trace* trace;
  };
  const Net all[] = {{"generator", g.get(), &tg}, {"pidi", p.get(), &tp}, {"discriminator", d.get(), &td}};

  if (args.json) {
    json j = {{"input_size", args.size}};
    for (const auto& net : all) {
      json layers = json::array();
      for (const auto& l : *net.trace) {
        layers.push_back({{"layer", l.layer},
                          {"type", l.type},
                          {"stride", l.stride},
                          {"kernels", l.kernels},
                          {"input", l.input},
                          {"output", l.output},
                          {"final_output", l.final_output},
                          {"concat_with", l.concat_with},
                          {"params", layer_params(*net.module, l.layer)}});
      }
      j[net.name] = {{"layers", layers},
                     {"params", nets::count_params(*net.module)},
                     {"architecture_hash", nets::architecture_hash(net.name, *net.module)}};
    }
    out << j.dump(2) << '\n';
    return;
  }
  for (const auto& net : all) {
    out << nets::format_trace(std::string(net.name) + " @ " + std::to_string(args.size) + "x" +
                                  std::to_string(args.size),
                              *net.trace);
    out << "  params per layer:";
    for (const auto& l : *net.trace) out << " L" << l.layer << '=' << layer_params(*net.module, l.layer);
    out << "\n  total params " << nets::count_params(*net.module) << ", architecture "
        << nets::architecture_hash(net.name, *net.module) << "\n\n";
  }
}

}  // namespace lfr::cli

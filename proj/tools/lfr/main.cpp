#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "lfr/errors.hpp"

namespace {

using namespace lfr::cli;

int run(int argc, char** argv) {
  CLI::App app{"Latent fingerprint reconstruction: data synthesis, training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", LFR_VERSION);

  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  bool no_pidi = false;
  std::filesystem::path run_dir;
  app.add_option("--config", config_path, "JSON run config; defaults describe the desk benchmark")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override every seed in the config");
  app.add_flag("--deterministic", deterministic, "single-threaded, deterministic libtorch kernels");
  app.add_option("--run-dir", run_dir, "run directory holding all stage outputs");
  app.add_flag("--no-pidi", no_pidi, "train and evaluate the plain cGAN without PIDI fusion");

  auto* synth = app.add_subcommand("synth", "render the synthetic clean/latent dataset");
  auto* extract = app.add_subcommand("extract", "extract [R,F,O,S] target stacks");
  ExtractArgs extract_args;
  extract->add_option("--input", extract_args.input, "PNG file or directory (default: the run's dataset)");
  extract->add_option("--out", extract_args.out, "output directory");
  auto* train_verifier = app.add_subcommand("train-verifier", "train the Siamese PIDI verifier");
  auto* train = app.add_subcommand("train", "train the cGAN generator");
  TrainArgs train_args;
  train->add_flag("--resume", train_args.resume, "continue from the newest checkpoint");
  auto* reconstruct = app.add_subcommand("reconstruct", "reconstruct the latents of a split");
  ReconstructArgs recon_args;
  reconstruct->add_option("--split", recon_args.split, "train, val or test (default: evaluate.split)");
  reconstruct->add_option("--checkpoint", recon_args.checkpoint, "generator state directory or stem");
  auto* evaluate = app.add_subcommand("evaluate", "matching and quality experiments");
  auto* inspect = app.add_subcommand("inspect", "print the layer tables of the three networks");
  InspectArgs inspect_args;
  inspect->add_option("--size", inspect_args.size, "input resolution");
  inspect->add_flag("--json", inspect_args.json, "machine-readable output");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (inspect->parsed()) {
    cmd_inspect(inspect_args, std::cout);
    return kExitOk;
  }
  if (run_dir.empty()) throw lfr::ConfigError("--run-dir is required for " + app.get_subcommands().front()->get_name());

  Context ctx;
  if (config_path) ctx.cfg = load_run_config(*config_path);
  apply(ctx.cfg, {seed, deterministic, no_pidi});
  ctx.run_dir = run_dir;
  ctx.no_pidi = no_pidi;
  std::filesystem::create_directories(run_dir);

  if (synth->parsed()) cmd_synth(ctx);
  if (extract->parsed()) cmd_extract(ctx, extract_args);
  if (train_verifier->parsed()) cmd_train_verifier(ctx);
  if (train->parsed()) cmd_train(ctx, train_args);
  if (reconstruct->parsed()) cmd_reconstruct(ctx, recon_args);
  if (evaluate->parsed()) cmd_evaluate(ctx);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const lfr::ConfigError& e) {
    std::cerr << "lfr: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const lfr::MatcherError& e) {
    std::cerr << "lfr: external matcher failed: " << e.what() << '\n';
    return kExitMatcher;
  } catch (const std::exception& e) {
    std::cerr << "lfr: " << e.what() << '\n';
    return kExitStage;
  }
}

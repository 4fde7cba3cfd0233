#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "lfr/errors.hpp"
#include "run_config.hpp"

namespace lfr::cli {

// Exit codes of the lfr tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitStage = 3;
inline constexpr int kExitMatcher = 4;

// A stage could not run or would overwrite something it did not produce.
class StageError : public Error {
 public:
  using Error::Error;
};

// <run>/run_manifest.json: the config, tool versions and one entry per finished
// stage with its config hash, seeds, input and output checksums. Entries are only
// written after a stage succeeds.
class RunManifest {
 public:
  explicit RunManifest(std::filesystem::path run_dir);

  const nlohmann::json& data() const { return data_; }
  std::optional<nlohmann::json> stage(const std::string& name) const;
  void record(const std::string& name, nlohmann::json entry, const RunConfig& cfg);

 private:
  std::filesystem::path path_;
  nlohmann::json data_;
};

nlohmann::json tool_versions();
std::string hash_json(const nlohmann::json& j);

struct Context {
  RunConfig cfg;
  std::filesystem::path run_dir;
  bool no_pidi = false;
  std::ostream* log = nullptr;
};

void cmd_synth(const Context& ctx);

struct ExtractArgs {
  std::optional<std::filesystem::path> input;  // PNG file or directory; default: the run's dataset
  std::optional<std::filesystem::path> out;
};
void cmd_extract(const Context& ctx, const ExtractArgs& args);

void cmd_train_verifier(const Context& ctx);

struct TrainArgs {
  bool resume = false;
};
void cmd_train(const Context& ctx, const TrainArgs& args);

struct ReconstructArgs {
  std::optional<std::string> split;
  std::optional<std::filesystem::path> checkpoint;
};
void cmd_reconstruct(const Context& ctx, const ReconstructArgs& args);

void cmd_evaluate(const Context& ctx);

struct InspectArgs {
  int size = 256;
  bool json = false;
};
void cmd_inspect(const InspectArgs& args, std::ostream& out);

}  // namespace lfr::cli

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace lfr::proc {

struct ProcessResult {
  int exit_code = 0;
  std::string out;
  std::string err;
};

// Runs argv[0] (searched on PATH when it has no slash) without a shell and collects
// both streams. Throws MissingExecutable when it cannot be found and MatcherTimeout
// when it outlives the timeout (the child is killed).
ProcessResult run(const std::vector<std::string>& argv, double timeout_s);

// Resolves a command name the way execvp would; empty when not found.
std::filesystem::path find_executable(const std::string& name);

// An external tool invoked once per item. Arguments may contain placeholders that
// are substituted verbatim, e.g. {probe} {gallery} for matchers or {image} for NFIQ.
struct AdapterConfig {
  std::string executable;
  std::vector<std::string> args;
  std::string parse_regex = R"(([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?))";
  double timeout_s = 30.0;

  void validate() const;  // throws ConfigError
};

nlohmann::json to_json(const AdapterConfig& cfg);
AdapterConfig adapter_from_json(const nlohmann::json& j);

// Runs the adapter and returns the number captured by the first group of the parse
// regex (or the whole match) in stdout. Nonzero exit is MatcherFailure carrying
// stderr; no match or a non-numeric capture is UnparseableOutput.
double run_adapter(const AdapterConfig& cfg, const std::map<std::string, std::string>& substitutions);

double match_external(const std::filesystem::path& probe, const std::filesystem::path& gallery,
                      const AdapterConfig& cfg);

// NFIQ-style external quality: the parsed value must be an integer in 1..5.
int quality_external(const std::filesystem::path& image, const AdapterConfig& cfg);

}  // namespace lfr::proc

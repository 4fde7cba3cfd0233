#include "lfr/subprocess.hpp"

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <regex>
#include <sstream>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "lfr/errors.hpp"

extern char** environ;

namespace lfr::proc {

namespace fs = std::filesystem;

namespace {

struct Pipe {
  int fd[2] = {-1, -1};
  Pipe() {
    if (::pipe2(fd, O_CLOEXEC) != 0) throw IoError(std::string("pipe: ") + std::strerror(errno));
  }
  ~Pipe() {
    for (int f : fd) {
      if (f >= 0) ::close(f);
    }
  }
  void close_end(int i) {
    if (fd[i] >= 0) ::close(fd[i]);
    fd[i] = -1;
  }
};

bool is_executable(const fs::path& p) {
  std::error_code ec;
  return fs::is_regular_file(p, ec) && ::access(p.c_str(), X_OK) == 0;
}

std::string command_line(const std::vector<std::string>& argv) {
  std::string s;
  for (const auto& a : argv) s += (s.empty() ? "" : " ") + a;
  return s;
}

}  // namespace

fs::path find_executable(const std::string& name) {
  if (name.empty()) return {};
  if (name.find('/') != std::string::npos) return is_executable(name) ? fs::path(name) : fs::path();
  const char* path = std::getenv("PATH");
  std::stringstream dirs(path != nullptr ? path : "/usr/bin:/bin");
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    const fs::path candidate = fs::path(dir.empty() ? "." : dir) / name;
    if (is_executable(candidate)) return candidate;
  }
  return {};
}

ProcessResult run(const std::vector<std::string>& argv, double timeout_s) {
  if (argv.empty()) throw ValidationError("empty command");
  const fs::path exe = find_executable(argv[0]);
  if (exe.empty()) throw MissingExecutable("executable not found: " + argv[0]);

  Pipe out;
  Pipe err;
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, out.fd[1], STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, err.fd[1], STDERR_FILENO);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);

  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, exe.c_str(), &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) throw MissingExecutable("cannot start " + exe.string() + ": " + std::strerror(rc));
  out.close_end(1);
  err.close_end(1);

  ProcessResult result;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  pollfd fds[2] = {{out.fd[0], POLLIN, 0}, {err.fd[0], POLLIN, 0}};
  std::string* sinks[2] = {&result.out, &result.err};
  int open = 2;
  bool timed_out = false;
  char buf[4096];
  while (open > 0) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      timed_out = true;
      break;
    }
    const int ready = ::poll(fds, 2, static_cast<int>(left.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      break;
    }
    for (int i = 0; i < 2; ++i) {
      if (fds[i].fd < 0 || (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) == 0) continue;
      const ssize_t n = ::read(fds[i].fd, buf, sizeof buf);
      if (n > 0) {
        sinks[i]->append(buf, static_cast<std::size_t>(n));
      } else if (n == 0 || errno != EINTR) {
        fds[i].fd = -1;
        --open;
      }
    }
  }

  int status = 0;
  if (timed_out) {
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &status, 0);
    throw MatcherTimeout(command_line(argv) + " timed out after " + std::to_string(timeout_s) + " s");
  }
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  return result;
}

void AdapterConfig::validate() const {
  if (executable.empty()) throw ConfigError("adapter field 'executable' is empty");
  if (!(timeout_s > 0.0) || !std::isfinite(timeout_s)) throw ConfigError("adapter field 'timeout_s' must be positive");
  try {
    std::regex re(parse_regex);
  } catch (const std::regex_error& e) {
    throw ConfigError("adapter field 'parse_regex' is not a valid regex: " + std::string(e.what()));
  }
}

nlohmann::json to_json(const AdapterConfig& cfg) {
  return {{"executable", cfg.executable},
          {"args", cfg.args},
          {"parse_regex", cfg.parse_regex},
          {"timeout_s", cfg.timeout_s}};
}

AdapterConfig adapter_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("adapter config must be an object");
  AdapterConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "executable") {
        cfg.executable = value.get<std::string>();
      } else if (key == "args") {
        cfg.args = value.get<std::vector<std::string>>();
      } else if (key == "parse_regex") {
        cfg.parse_regex = value.get<std::string>();
      } else if (key == "timeout_s") {
        cfg.timeout_s = value.get<double>();
      } else {
        throw ConfigError("unknown adapter field '" + key + "'");
      }
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("adapter field '" + key + "' has the wrong type");
    }
  }
  cfg.validate();
  return cfg;
}

double run_adapter(const AdapterConfig& cfg, const std::map<std::string, std::string>& substitutions) {
  std::vector<std::string> argv = {cfg.executable};
  for (std::string a : cfg.args) {
    for (const auto& [key, value] : substitutions) {
      const std::string token = "{" + key + "}";
      for (auto pos = a.find(token); pos != std::string::npos; pos = a.find(token, pos + value.size())) {
        a.replace(pos, token.size(), value);
      }
    }
    argv.push_back(std::move(a));
  }
  const auto r = run(argv, cfg.timeout_s);
  if (r.exit_code != 0) {
    throw MatcherFailure(cfg.executable + " exited with status " + std::to_string(r.exit_code) + ": " + r.err,
                         r.exit_code, r.err);
  }
  std::smatch m;
  const std::regex re(cfg.parse_regex);
  if (!std::regex_search(r.out, m, re)) {
    throw UnparseableOutput("no score in output of " + cfg.executable, r.out);
  }
  const std::string captured = m.size() > 1 && m[1].matched ? m[1].str() : m[0].str();
  char* end = nullptr;
  const double v = std::strtod(captured.c_str(), &end);
  if (end == captured.c_str() || *end != '\0' || !std::isfinite(v)) {
    throw UnparseableOutput("score '" + captured + "' from " + cfg.executable + " is not a number", r.out);
  }
  return v;
}

double match_external(const fs::path& probe, const fs::path& gallery, const AdapterConfig& cfg) {
  return run_adapter(cfg, {{"probe", probe.string()}, {"gallery", gallery.string()}});
}

int quality_external(const fs::path& image, const AdapterConfig& cfg) {
  const double v = run_adapter(cfg, {{"image", image.string()}});
  if (v != std::floor(v) || v < 1.0 || v > 5.0) {
    throw UnparseableOutput("quality value " + std::to_string(v) + " is not an integer in 1..5", std::to_string(v));
  }
  return static_cast<int>(v);
}

}  // namespace lfr::proc

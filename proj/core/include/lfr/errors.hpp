#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lfr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Arguments outside their documented ranges.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Tensor or image shapes that do not fit an architecture.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Mathematical domain violations, e.g. log(0) without clamping.
class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Raised when a loss turns non-finite. Carries the manifest indices of the batch.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::int64_t step, std::vector<std::size_t> batch)
      : Error(what), step_(step), batch_(std::move(batch)) {}
  std::int64_t step() const { return step_; }
  const std::vector<std::size_t>& batch_indices() const { return batch_; }

 private:
  std::int64_t step_;
  std::vector<std::size_t> batch_;
};

class MatcherError : public Error {
 public:
  using Error::Error;
};

class MissingExecutable : public MatcherError {
 public:
  using MatcherError::MatcherError;
};

class MatcherFailure : public MatcherError {
 public:
  MatcherFailure(const std::string& what, int exit_code, std::string stderr_text)
      : MatcherError(what), exit_code_(exit_code), stderr_(std::move(stderr_text)) {}
  int exit_code() const { return exit_code_; }
  const std::string& stderr_text() const { return stderr_; }

 private:
  int exit_code_;
  std::string stderr_;
};

class UnparseableOutput : public MatcherError {
 public:
  UnparseableOutput(const std::string& what, std::string output)
      : MatcherError(what), output_(std::move(output)) {}
  const std::string& output() const { return output_; }

 private:
  std::string output_;
};

class MatcherTimeout : public MatcherError {
 public:
  using MatcherError::MatcherError;
};

}  // namespace lfr

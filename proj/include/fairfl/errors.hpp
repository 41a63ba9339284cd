#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace fairfl {

/// Precondition or invariant violated by caller-supplied values.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed tabular input. `line()` is the 1-based line in the source file.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A partition quota asks for more samples than a (group, label) pool holds.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite objective.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, std::optional<int> client_id = std::nullopt)
      : std::runtime_error(make_message(epoch, client_id)), epoch_(epoch), client_id_(client_id) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::optional<int> client_id() const noexcept { return client_id_; }

  DivergenceError with_client(int id) const { return DivergenceError(epoch_, id); }

 private:
  static std::string make_message(std::size_t epoch, std::optional<int> client_id) {
    std::string msg = "training diverged (non-finite loss) in epoch " + std::to_string(epoch);
    if (client_id) msg += " on client " + std::to_string(*client_id);
    return msg;
  }

  std::size_t epoch_;
  std::optional<int> client_id_;
};

/// An iterative numeric procedure failed to converge.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Experiment configuration rejected. `path()` names the offending field, e.g. `algorithm.gamma`.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace fairfl

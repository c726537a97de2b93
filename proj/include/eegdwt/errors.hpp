#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace eegdwt {

// Library error hierarchy. Everything thrown by eegdwt derives from Error,
// so callers can catch the base or pick the specific failure class.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller passed a value that violates an operation's preconditions.
struct ArgumentError : Error {
  using Error::Error;
};

// A config struct (or config file) is internally inconsistent.
struct ConfigError : ArgumentError {
  using ArgumentError::ArgumentError;
};

// On-disk data does not match its declared layout.
struct FormatError : Error {
  using Error::Error;
};

// Filesystem-level failure (missing file, short read/write).
struct IoError : Error {
  using Error::Error;
};

// A name was not found in a keyed collection (split, subject, node id).
struct LookupError : Error {
  using Error::Error;
};

// Input is outside the mathematical domain of the operation
// (e.g. taxonomy nodes with no common ancestor).
struct DomainError : Error {
  using Error::Error;
};

// A label could not be resolved for semantic scoring; carries the label.
struct ScoringError : Error {
  ScoringError(const std::string& msg, std::string label)
      : Error(msg), label(std::move(label)) {}
  std::string label;
};

// Training aborted (non-finite loss, empty dataset).
struct TrainingError : Error {
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string str(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

}  // namespace eegdwt

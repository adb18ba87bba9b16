#pragma once

#include <stdexcept>
#include <string>

namespace krls {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape / dimension disagreement between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid hyperparameter or argument value.
struct ParameterError : Error {
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct ValidationError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Checkpoint load failures carry a distinct reason so callers can
// tell "not a checkpoint" from version or vocabulary mismatches.
struct CheckpointError : Error {
  enum class Reason { not_a_checkpoint, version_mismatch, vocab_hash_mismatch, truncated };
  CheckpointError(Reason r, const std::string& msg) : Error(msg), reason(r) {}
  Reason reason;
};

}  // namespace krls

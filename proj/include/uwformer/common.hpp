#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace uwf {

using i64 = std::int64_t;

// Argument/shape contract violations.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid model or training configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset-level problems (missing pair files, unreadable directories).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed image or checkpoint payload. `offset` is the byte position at
// which decoding gave up.
struct DecodeError : std::runtime_error {
  DecodeError(const std::string& msg, std::size_t at)
      : std::runtime_error(msg + " (byte " + std::to_string(at) + ")"), offset(at) {}
  std::size_t offset = 0;
};

// Filesystem read/write failures.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value where a finite one is required (e.g. NaN loss).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

}  // namespace uwf

#pragma once

#include <stdexcept>
#include <string>

namespace ponet {

// Error taxonomy shared across the library. The CLI maps these to exit codes:
// UsageError -> 2, NumericError -> 3, everything else that escapes -> 1.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StateError : std::runtime_error {
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Counts multiplication ops of the token-mixing block per the complexity
// accounting used throughout: parameter projections (m*k*n per matmul),
// attention query-key dots and weighted value sums, and fusion elementwise
// products. Scalar normalizers (softmax scale, mean divide) are not counted.
struct OpCounter {
  unsigned long long mults = 0;
  void add(unsigned long long n) { mults += n; }
  void reset() { mults = 0; }
};

}  // namespace ponet

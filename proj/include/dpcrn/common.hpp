// Copyright 2026 The dpcrn Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dpcrn {

// Engine-wide constants. Everything numeric that is not a learned parameter
// lives here so the weight-file header and the kernels agree.
inline constexpr int kSampleRate = 16000;
inline constexpr double kBnEps = 1e-5;
inline constexpr double kIlnEps = 1e-8;
inline constexpr double kBnMomentum = 0.99;
inline constexpr double kPreluInit = 0.25;

enum class ErrorKind { kValidation, kDivergence, kIo };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(const std::string& what) {
  throw Error(ErrorKind::kValidation, what);
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void check(bool cond, const std::string& what) {
  if (!cond) fail(what);
}

// Process exit code for the CLI.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation: return 2;
    case ErrorKind::kDivergence: return 3;
    case ErrorKind::kIo: return 4;
  }
  return 1;
}

// Uniform double in [0, 1) from the top 53 bits of a 64-bit engine. Used
// instead of std::uniform_real_distribution so weight init is identical
// across standard libraries.
template <typename Engine>
double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Engine>
double uniform(Engine& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Box-Muller on uniform01 for the same reason.
template <typename Engine>
double gaussian(Engine& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace dpcrn

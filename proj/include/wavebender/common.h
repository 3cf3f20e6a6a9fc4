// Copyright 2026 The Wavebender Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef WAVEBENDER_COMMON_H_
#define WAVEBENDER_COMMON_H_

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wavebender {

inline constexpr char kVersion[] = "0.1.0";

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error categories. The HTTP service maps these onto status codes.
enum class ErrorKind {
  kInvalidArgument,
  kFingerprintMismatch,
  kNotFound,
  kChecksum,
  kNumerical,
  kIo,
};

// All library errors carry a kind and the pipeline stage that raised them.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string stage, const std::string& message)
      : std::runtime_error(stage.empty() ? message : stage + ": " + message),
        kind_(kind),
        stage_(std::move(stage)),
        detail_(message) {}

  ErrorKind kind() const { return kind_; }
  const std::string& stage() const { return stage_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorKind kind_;
  std::string stage_;
  std::string detail_;
};

[[noreturn]] inline void Fail(ErrorKind kind, std::string stage, const std::string& message) {
  throw Error(kind, std::move(stage), message);
}

// Re-throws `e` with `stage` prepended, keeping the original kind.
[[noreturn]] inline void Restage(const Error& e, const std::string& stage) {
  throw Error(e.kind(), stage + "/" + e.stage(), e.detail());
}

// Lowercase hex SHA-256 of `data`.
std::string Sha256Hex(std::string_view data);

// Short fingerprint (first 16 hex digits of the SHA-256).
std::string Fingerprint(std::string_view canonical);

// 64-bit mix used to derive per-item seeds from a global seed.
uint64_t MixSeed(uint64_t seed, uint64_t salt);
uint64_t MixSeed(uint64_t seed, std::string_view salt);

// Seeded generator with distribution code owned here, so sequences do not
// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }
  // Uniform in [0, 1).
  double Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Uniform integer in [0, n).
  uint64_t Below(uint64_t n) { return n == 0 ? 0 : engine_() % n; }
  double Normal();

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Locale-independent round-trippable formatting of a double.
std::string FormatDouble(double value);

}  // namespace wavebender

#endif  // WAVEBENDER_COMMON_H_

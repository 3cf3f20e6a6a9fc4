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

#include "wavebender/signal.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <unsupported/Eigen/FFT>

#include "wavebender/common.h"

namespace wavebender {

void ValidateFrameConfig(const FrameConfig& config) {
  if (config.hop <= 0 || config.frame_length <= 0 || config.hop > config.frame_length) {
    Fail(ErrorKind::kInvalidArgument, "framing",
         "need 0 < hop <= frame_length (got hop " + std::to_string(config.hop) + ", frame " +
             std::to_string(config.frame_length) + ")");
  }
}

int PaddingSamples(const FrameConfig& config) {
  return config.padding == FramePadding::kReflect ? (config.frame_length - config.hop) / 2 : 0;
}

size_t MinimumSamples(const FrameConfig& config) {
  const int pad = PaddingSamples(config);
  size_t need = static_cast<size_t>(config.frame_length - 2 * pad);
  if (pad > 0) need = std::max(need, static_cast<size_t>(pad + 1));
  return need;
}

int FrameCount(size_t num_samples, const FrameConfig& config) {
  ValidateFrameConfig(config);
  const size_t min_len = MinimumSamples(config);
  if (num_samples < min_len) {
    Fail(ErrorKind::kInvalidArgument, "framing",
         "waveform has " + std::to_string(num_samples) + " samples; at least " +
             std::to_string(min_len) + " are needed for one analysis frame");
  }
  const size_t padded = num_samples + 2 * PaddingSamples(config);
  return 1 + static_cast<int>((padded - config.frame_length) / config.hop);
}

std::vector<double> PadSignal(std::span<const double> samples, const FrameConfig& config) {
  const int pad = PaddingSamples(config);
  if (pad == 0) return {samples.begin(), samples.end()};
  const int n = static_cast<int>(samples.size());
  std::vector<double> out(samples.size() + 2 * pad);
  for (int i = 0; i < pad; ++i) {
    out[i] = samples[pad - i];
    out[pad + n + i] = samples[n - 2 - i];
  }
  std::copy(samples.begin(), samples.end(), out.begin() + pad);
  return out;
}

std::vector<double> HannWindow(int length, bool periodic) {
  std::vector<double> w(length);
  const double denom = periodic ? length : std::max(1, length - 1);
  for (int i = 0; i < length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / denom);
  }
  return w;
}

struct RealFft::Impl {
  Eigen::FFT<double> fft;
  std::vector<double> in;
};

RealFft::RealFft(int size) : size_(size), impl_(std::make_unique<Impl>()) {
  if (size < 2 || size % 2 != 0) {
    Fail(ErrorKind::kInvalidArgument, "fft", "FFT size must be even and >= 2");
  }
  impl_->fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  impl_->in.resize(size);
}

RealFft::~RealFft() = default;
RealFft::RealFft(RealFft&&) noexcept = default;
RealFft& RealFft::operator=(RealFft&&) noexcept = default;

void RealFft::Forward(std::span<const double> input, std::vector<std::complex<double>>& spectrum) {
  std::fill(impl_->in.begin(), impl_->in.end(), 0.0);
  std::copy_n(input.begin(), std::min<size_t>(input.size(), size_), impl_->in.begin());
  impl_->fft.fwd(spectrum, impl_->in);
  spectrum.resize(bins());
}

void RealFft::Inverse(std::span<const std::complex<double>> spectrum, std::vector<double>& output) {
  std::vector<std::complex<double>> half(spectrum.begin(), spectrum.end());
  half.resize(bins());
  impl_->fft.inv(output, half, size_);
}

}  // namespace wavebender

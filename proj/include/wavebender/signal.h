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

// Framing and FFT primitives shared by the feature extractor, the mel
// front-end and the reference vocoder. Both analysis paths must frame a
// waveform identically so that parameter tracks and mel spectrograms line
// up frame for frame.

#ifndef WAVEBENDER_SIGNAL_H_
#define WAVEBENDER_SIGNAL_H_

#include <complex>
#include <memory>
#include <span>
#include <vector>

namespace wavebender {

enum class FramePadding {
  kNone,     // frames start at sample 0
  kReflect,  // (frame_length - hop) / 2 reflected samples on each side
};

struct FrameConfig {
  int frame_length = 1024;
  int hop = 256;
  FramePadding padding = FramePadding::kReflect;

  bool operator==(const FrameConfig&) const = default;
};

void ValidateFrameConfig(const FrameConfig& config);
int PaddingSamples(const FrameConfig& config);
size_t MinimumSamples(const FrameConfig& config);

// Number of analysis frames for a signal of `num_samples`. Throws when the
// signal is shorter than MinimumSamples().
int FrameCount(size_t num_samples, const FrameConfig& config);

// Applies the configured padding; frame t then starts at t * hop.
std::vector<double> PadSignal(std::span<const double> samples, const FrameConfig& config);

std::vector<double> HannWindow(int length, bool periodic = true);

// Real-input FFT of fixed size returning the n/2+1 non-negative bins.
class RealFft {
 public:
  explicit RealFft(int size);
  ~RealFft();
  RealFft(RealFft&&) noexcept;
  RealFft& operator=(RealFft&&) noexcept;

  int size() const { return size_; }
  int bins() const { return size_ / 2 + 1; }

  void Forward(std::span<const double> input, std::vector<std::complex<double>>& spectrum);
  // Inverse of Forward (scaled by 1/n).
  void Inverse(std::span<const std::complex<double>> spectrum, std::vector<double>& output);

 private:
  struct Impl;
  int size_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace wavebender

#endif  // WAVEBENDER_SIGNAL_H_

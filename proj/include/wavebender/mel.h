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

#ifndef WAVEBENDER_MEL_H_
#define WAVEBENDER_MEL_H_

#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "wavebender/audio.h"
#include "wavebender/common.h"
#include "wavebender/signal.h"

namespace wavebender {

// Log-mel front-end parameters. The defaults follow the LJ Speech HiFi-GAN
// recipe: magnitude STFT, Slaney-normalized filterbank, natural log with an
// energy floor.
struct MelConfig {
  int sample_rate = 22050;
  int fft_size = 1024;
  int hop = 256;
  int win_length = 1024;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_clamp = 1e-5;

  bool operator==(const MelConfig&) const = default;

  std::string fingerprint() const;
  FrameConfig frame_config() const;
  double frame_rate() const { return static_cast<double>(sample_rate) / hop; }
};

void ValidateMelConfig(const MelConfig& config);
nlohmann::json MelConfigToJson(const MelConfig& config);
MelConfig MelConfigFromJson(const nlohmann::json& j);

struct MelSpectrogram {
  Matrix bins;  // T x n_mels
  double frame_rate = 0.0;
  std::string config_id;

  int frames() const { return static_cast<int>(bins.rows()); }
};

double HzToMel(double hz);
double MelToHz(double mel);

// n_mels x (fft_size / 2 + 1) Slaney filterbank.
Matrix MelFilterbank(const MelConfig& config);
// Center frequency (Hz) of each band.
std::vector<double> MelCenterFrequencies(const MelConfig& config);

// T x (fft_size / 2 + 1) STFT magnitudes using the front-end framing.
Matrix StftMagnitude(const Waveform& wave, const MelConfig& config);

MelSpectrogram ComputeMel(const Waveform& wave, const MelConfig& config);

// Binary matrix file: magic, shape, frame rate, config id, float64 data.
std::string EncodeMel(const MelSpectrogram& mel);
MelSpectrogram DecodeMel(std::string_view bytes);
void SaveMel(const std::string& path, const MelSpectrogram& mel);
MelSpectrogram LoadMel(const std::string& path);

}  // namespace wavebender

#endif  // WAVEBENDER_MEL_H_

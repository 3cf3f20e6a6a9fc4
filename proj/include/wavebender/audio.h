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

#ifndef WAVEBENDER_AUDIO_H_
#define WAVEBENDER_AUDIO_H_

#include <string>
#include <string_view>
#include <vector>

namespace wavebender {

// Mono audio, amplitudes in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 22050;

  double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

bool IsSupportedSampleRate(int sample_rate);

// Throws kInvalidArgument when the waveform is empty, has non-finite or
// out-of-range samples, or an unsupported sample rate.
void ValidateWaveform(const Waveform& wave);

enum class WavEncoding { kPcm16, kFloat32 };

// Decodes a RIFF/WAVE byte string. Accepts 16-bit PCM and 32-bit float,
// mono only.
Waveform DecodeWav(std::string_view bytes);
std::string EncodeWav(const Waveform& wave, WavEncoding encoding = WavEncoding::kPcm16);

Waveform ReadWav(const std::string& path);
void WriteWav(const std::string& path, const Waveform& wave,
              WavEncoding encoding = WavEncoding::kPcm16);

// Returns a copy with samples clamped to [-1, 1].
Waveform Clamped(Waveform wave);

double Rms(const std::vector<double>& samples);
double Peak(const std::vector<double>& samples);

std::string ReadFileBytes(const std::string& path);
void WriteFileBytes(const std::string& path, std::string_view bytes);

}  // namespace wavebender

#endif  // WAVEBENDER_AUDIO_H_

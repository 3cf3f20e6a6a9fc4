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

// Deterministic test signals and a small cascade formant synthesizer used to
// build desk-scale corpora when no recorded speech is available.

#ifndef WAVEBENDER_SYNTH_H_
#define WAVEBENDER_SYNTH_H_

#include <cstdint>
#include <vector>

#include "wavebender/audio.h"

namespace wavebender {

Waveform Sawtooth(double f0_hz, double seconds, int sample_rate, double amplitude = 0.5);
Waveform Sine(double hz, double seconds, int sample_rate, double amplitude = 0.5);
Waveform WhiteNoise(double seconds, int sample_rate, uint64_t seed, double amplitude = 0.3);

// Formant-synthesizer control values; interpolated linearly between points.
struct VoiceControl {
  double time_s = 0.0;
  double f0_hz = 120.0;
  double voicing = 1.0;    // 0..1 mix of the glottal source
  double frication = 0.0;  // 0..1 mix of high-band noise
  double aspiration = 0.02;
  double tilt = 0.3;  // 0..0.95 one-pole lowpass on the source
  double gain = 0.5;
  double f1 = 500.0, f2 = 1500.0, f3 = 2700.0, f4 = 3800.0;
  double b1 = 70.0, b2 = 90.0, b3 = 150.0, b4 = 250.0;
};

Waveform SynthesizeFormantSpeech(const std::vector<VoiceControl>& controls, double seconds,
                                 int sample_rate, uint64_t noise_seed);

// A sustained vowel with constant f0 and formants.
Waveform SyntheticVowel(double f0_hz, double f1_hz, double f2_hz, double seconds, int sample_rate,
                        uint64_t seed = 1);

struct SyntheticUtteranceOptions {
  int sample_rate = 22050;
  double min_seconds = 1.2;
  double max_seconds = 2.4;
  double base_f0_hz = 200.0;
};

// Random vowel/fricative sequence with an intonation contour.
Waveform RandomUtterance(uint64_t seed, const SyntheticUtteranceOptions& opt);

}  // namespace wavebender

#endif  // WAVEBENDER_SYNTH_H_

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

// Training-data augmentation by utterance-level pitch scaling and gain.
// Parameters for an augmented example are always re-extracted from the
// manipulated audio.

#ifndef WAVEBENDER_AUGMENTATION_H_
#define WAVEBENDER_AUGMENTATION_H_

#include <array>
#include <json.hpp>
#include <string>
#include <string_view>

#include "wavebender/audio.h"
#include "wavebender/features.h"

namespace wavebender {

struct AugmentationPolicy {
  std::array<double, 2> f0_scale_range = {0.7, 1.3};
  std::array<double, 2> gain_db_range = {-12.0, 6.0};
  double augment_probability = 0.5;
  uint64_t seed = 0;
};

void ValidatePolicy(const AugmentationPolicy& policy);
nlohmann::json PolicyToJson(const AugmentationPolicy& policy);
AugmentationPolicy PolicyFromJson(const nlohmann::json& j);

struct AugmentationDraw {
  bool apply = false;
  double f0_scale = 1.0;
  double gain_db = 0.0;

  std::string fingerprint() const;
};

// Draws from `rng`: apply with the policy probability, then a uniform scale
// and gain.
AugmentationDraw DrawAugmentation(const AugmentationPolicy& policy, Rng& rng);

// Per-utterance draw, independent of corpus order.
AugmentationDraw DrawForUtterance(const AugmentationPolicy& policy, std::string_view utterance_id,
                                  int round = 0);

// Pitch-synchronous overlap-add pitch shift by a constant factor, keeping
// duration and spectral envelope.
Waveform PitchShift(const Waveform& wave, double scale, const ExtractionOptions& options = {});

struct AugmentedExample {
  Waveform wave;
  ParameterTrack track;
  AugmentationDraw draw;
  // False when the draw was not applied or the manipulation fell back.
  bool augmented = false;
};

// Applies the draw and re-extracts parameters from the result. Gain is
// reduced if needed so the peak stays at or below 1. If pitch shifting
// fails the unaugmented sample is returned with a warning on the track.
AugmentedExample Augment(const Waveform& wave, const AugmentationDraw& draw,
                         const ExtractionOptions& options = {});

}  // namespace wavebender

#endif  // WAVEBENDER_AUGMENTATION_H_

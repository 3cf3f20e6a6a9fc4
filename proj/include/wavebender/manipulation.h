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

// Desired-trajectory construction, F1/F2 coupling and the
// parameters -> mel -> enhanced mel -> audio pipeline.

#ifndef WAVEBENDER_MANIPULATION_H_
#define WAVEBENDER_MANIPULATION_H_

#include <array>
#include <json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wavebender/features.h"
#include "wavebender/trainer.h"
#include "wavebender/vocoder.h"
#include "wavebender/wavebender_net.h"

namespace wavebender {

enum class ActionKind { kKeep, kScale, kReplace };

struct FeatureAction {
  ActionKind kind = ActionKind::kKeep;
  double scale = 1.0;
  // Replacement values in the track's column units (log Hz for f0).
  std::vector<double> trajectory;

  static FeatureAction Keep() { return {}; }
  static FeatureAction Scale(double m) { return {ActionKind::kScale, m, {}}; }
  static FeatureAction Replace(std::vector<double> values) {
    return {ActionKind::kReplace, 1.0, std::move(values)};
  }
};

enum class CouplingPolicy { kIndependent, kPredictF2FromF1, kPredictF1FromF2 };

std::string_view CouplingPolicyName(CouplingPolicy policy);
std::optional<CouplingPolicy> ParseCouplingPolicy(std::string_view name);

struct ManipulationSpec {
  std::array<FeatureAction, kNumFeatures> actions;
  CouplingPolicy coupling = CouplingPolicy::kIndependent;

  FeatureAction& action(Feature f) { return actions[Index(f)]; }
  const FeatureAction& action(Feature f) const { return actions[Index(f)]; }
  bool all_keep() const;

  // Scales one feature; formants get the matching predict policy when
  // `couple` is set.
  static ManipulationSpec ScaleOne(Feature f, double m, bool couple = false);
};

// {"f0": {"scale": 1.2}, "f1": "keep", "f2": {"replace": [...]},
//  "coupling": "predict_f2_from_f1"}. Omitted features are kept.
nlohmann::json SpecToJson(const ManipulationSpec& spec);
ManipulationSpec SpecFromJson(const nlohmann::json& j);
// Every *.json in `dir`, sorted by file name.
std::vector<std::pair<std::string, ManipulationSpec>> LoadSpecDirectory(const std::string& dir);

// Checks scale factors, replacement lengths against `frames` (skipped when
// negative) and the formant rules of the coupling policy.
void ValidateSpec(const ManipulationSpec& spec, int frames = -1);

// Applies the actions to a denormalized track. Scaling is framewise; f0 is
// scaled in Hz, i.e. shifted by log(m) in the log domain.
ParameterTrack BuildDesired(const ParameterTrack& track, const ManipulationSpec& spec);

struct CouplingTrainingOptions {
  std::vector<int> widths = {64, 64, 1};
  int kernel_size = 5;
  int groups = 8;
  int epochs = 60;
  int batch_size = 4;
  int segment_frames = 192;
  double base_lr = 1e-3;
  uint64_t seed = 0;
};

// One direction of the F1/F2 coupling: a reduced Wavebender Net mapping the
// normalized input with the dependent formant zeroed to that formant.
struct CouplingPredictor {
  Feature source = Feature::kF1;
  Feature target = Feature::kF2;
  NetworkWeights net;
  // Held-out error of the normalized target column, all frames.
  double heldout_rmse = 0.0;
  double heldout_rmse_hz = 0.0;
  long heldout_frames = 0;
  double train_rmse = 0.0;
};

struct CouplingModel {
  std::string stats_id;
  NormalizationStats stats;
  CouplingPredictor f2_from_f1;
  CouplingPredictor f1_from_f2;

  const CouplingPredictor& For(CouplingPolicy policy) const;
  nn::TensorArchive ToArchive() const;
  static CouplingModel FromArchive(const nn::TensorArchive& archive);
  void Save(const std::string& path) const;
  static CouplingModel Load(const std::string& path);
  std::string fingerprint() const;
};

// Net input (in_channels x T, as built by NetInput) with `target` masked.
Matrix CouplingInput(const Matrix& net_input, Feature target);
// Normalized prediction of the target column for one net input.
Vector PredictCoupled(const CouplingPredictor& predictor, const Matrix& net_input);

// Inputs are NetInput matrices of normalized tracks; the held-out set only
// feeds the recorded error.
CouplingPredictor TrainCouplingPredictor(Feature source, Feature target,
                                         const std::vector<Matrix>& train_inputs,
                                         const std::vector<Matrix>& heldout_inputs,
                                         const NormalizationStats& stats,
                                         const CouplingTrainingOptions& options = {});
CouplingModel TrainCouplingModel(const std::vector<Matrix>& train_inputs,
                                 const std::vector<Matrix>& heldout_inputs,
                                 const NormalizationStats& stats,
                                 const CouplingTrainingOptions& options = {});

inline constexpr double kFormantMargin = 0.01;

// Replaces the dependent formant with the prediction, then projects voiced
// frames onto F2 >= (1 + margin) * F1 by moving only the dependent column.
// The independent policy is the identity.
ParameterTrack ApplyCoupling(const ParameterTrack& desired, const CouplingModel& model,
                             CouplingPolicy policy);

struct RenderResult {
  Waveform wave;
  MelSpectrogram mel;      // enhanced, fed to the vocoder
  MelSpectrogram mel_pre;  // network output before enhancement
};

// Immutable after construction; Render may be called concurrently.
class Pipeline {
 public:
  // Fails unless the checkpoint, coupling model and vocoder agree on
  // statistics and mel configuration.
  Pipeline(TrainedModel model, Vocoder vocoder,
           std::optional<CouplingModel> coupling = std::nullopt);

  ParameterTrack Analyze(const Waveform& wave) const;
  // BuildDesired plus coupling when the spec asks for it.
  ParameterTrack Desired(const ParameterTrack& track, const ManipulationSpec& spec) const;
  RenderResult Render(const ParameterTrack& desired, uint64_t noise_seed = 0) const;
  RenderResult Manipulate(const Waveform& wave, const ManipulationSpec& spec,
                          uint64_t noise_seed = 0) const;
  // The vocoder alone on the ground-truth mel.
  Waveform VocoderOnly(const Waveform& wave) const;

  const TrainedModel& model() const { return model_; }
  const Vocoder& vocoder() const { return vocoder_; }
  const CouplingModel* coupling() const { return coupling_ ? &*coupling_ : nullptr; }

 private:
  TrainedModel model_;
  Vocoder vocoder_;
  std::optional<CouplingModel> coupling_;
};

}  // namespace wavebender

#endif  // WAVEBENDER_MANIPULATION_H_

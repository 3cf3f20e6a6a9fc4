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

// Objective evaluation: copy-synthesis error, manipulation sweeps, the
// disentanglement matrix, report emission and listening-test stimuli.
//
// All errors are squared differences of z-normalized features, pooled over
// frames. Tracks are compared over min(T_desired, T_realized) frames with
// `edge` frames dropped at each end.

#ifndef WAVEBENDER_EVAL_H_
#define WAVEBENDER_EVAL_H_

#include <array>
#include <functional>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "wavebender/corpus.h"
#include "wavebender/features.h"
#include "wavebender/manipulation.h"

namespace wavebender {

using FeatureArray = std::array<double, kNumFeatures>;

// Per-utterance sums, so utterances can be resampled.
struct UtteranceErrors {
  std::string id;
  FeatureArray sum_sq{};
  long frames = 0;

  FeatureArray Mse() const;
  double Overall(int exclude = -1) const;
};

UtteranceErrors CompareTracks(const ParameterTrack& desired, const ParameterTrack& realized,
                              const NormalizationStats& stats, int edge = 2);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool Contains(double x) const { return x >= lo && x <= hi; }
  double width() const { return hi - lo; }
};

// Frame-pooled aggregate over utterances.
struct PooledErrors {
  FeatureArray mse{};
  long frames = 0;
  int utterances = 0;

  // Mean of the per-feature errors, optionally without one feature.
  double Overall(int exclude = -1) const;
};

PooledErrors Pool(const std::vector<UtteranceErrors>& utterances);

struct BootstrapOptions {
  int resamples = 1000;
  double level = 0.95;
  uint64_t seed = 0;
};

// Percentile interval of `statistic(Pool(resample))` over utterance-level
// resamples with replacement.
Interval BootstrapInterval(const std::vector<UtteranceErrors>& utterances,
                           const std::function<double(const PooledErrors&)>& statistic,
                           const BootstrapOptions& options);

struct EvalOptions {
  int edge = 2;
  BootstrapOptions bootstrap;
  ExtractionOptions extraction;
  uint64_t noise_seed = 0;
};

// Audio produced for a ground-truth utterance.
using CopySystem = std::function<Waveform(const Utterance&)>;

struct SystemErrors {
  std::string name;
  std::vector<UtteranceErrors> utterances;
  PooledErrors pooled;
  std::array<Interval, kNumFeatures> ci{};
  Interval overall_ci;
  // "<id>: <reason>" for clips whose re-analysis failed.
  std::vector<std::string> excluded;
};

struct ReconstructionReport {
  std::vector<std::string> ids;
  std::vector<SystemErrors> systems;
  uint64_t seed = 0;
  int resamples = 0;

  const SystemErrors& system(const std::string& name) const;
};

// Every system sees the same utterances, statistics and alignment window.
ReconstructionReport CopySynthesisError(
    const std::vector<const Utterance*>& utterances,
    const std::vector<std::pair<std::string, CopySystem>>& systems, const NormalizationStats& stats,
    const EvalOptions& options);

// Realized track for a desired track of an utterance; `spec` is the
// manipulation that produced `desired`.
using RenderSystem = std::function<ParameterTrack(const Utterance&, const ParameterTrack& desired,
                                                  const ManipulationSpec& spec)>;

// Renders through `pipeline` and re-analyzes the audio.
RenderSystem PipelineSystem(const Pipeline& pipeline, uint64_t noise_seed = 0);

struct SweepOptions {
  std::vector<Feature> features = {kAllFeatures.begin(), kAllFeatures.end()};
  std::vector<double> scales = {0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3};
  // Scale at which the disentanglement matrix is taken.
  double matrix_scale = 1.3;
};

struct SweepCell {
  Feature feature = Feature::kF1;
  double scale = 1.0;
  std::vector<UtteranceErrors> utterances;
  PooledErrors pooled;
  double overall_incl = 0.0;
  double overall_excl = 0.0;
  // Spread of the per-utterance overall errors.
  double std_incl = 0.0;
  double std_excl = 0.0;
  Interval ci_incl;
  std::vector<std::string> excluded;
};

struct ManipulationReport {
  std::vector<SweepCell> cells;  // feature-major, scales ascending
  uint64_t seed = 0;
  int resamples = 0;

  const SweepCell* Find(Feature f, double scale) const;
};

struct DisentanglementMatrix {
  double scale = 1.3;
  std::vector<Feature> rows;  // manipulated
  Matrix mse;                 // rows x 5, measured in track column order
};

// One feature at a time; formants use the matching predict policy when a
// coupling model is given, and the desired track includes the prediction.
ManipulationReport ManipulationSweep(const std::vector<const Utterance*>& utterances,
                                     const RenderSystem& system, const NormalizationStats& stats,
                                     const CouplingModel* coupling, const SweepOptions& sweep,
                                     const EvalOptions& options);

DisentanglementMatrix Disentanglement(const ManipulationReport& report, double scale);

// Least-squares slope of overall_incl against |m - 1|.
double ErrorGrowth(const ManipulationReport& report, Feature f);

struct ReportFiles {
  std::string recon_tsv, manip_tsv, disentangle_tsv;
  std::string recon_svg, manip_svg;  // empty when there is nothing to plot
};

ReportFiles RenderReport(const ReconstructionReport* recon, const ManipulationReport* manip,
                         const DisentanglementMatrix* matrix);
// Writes report/recon.tsv, report/manip.tsv, report/disentangle.tsv and the
// plots under `dir`.
void EmitReport(const std::string& dir, const ReportFiles& files);

struct StimulusOptions {
  uint64_t seed = 0;
  uint64_t noise_seed = 0;
};

// Writes reference/A/B trials for every pair of candidate renderings per
// utterance, with A/B order counterbalanced, plus key.tsv, a blank
// rating_sheet.tsv and stimuli.json.
void ExportStimuli(const std::string& dir, const Pipeline& pipeline,
                   const std::vector<const Utterance*>& utterances,
                   const std::vector<std::pair<std::string, ManipulationSpec>>& specs,
                   const StimulusOptions& options);

}  // namespace wavebender

#endif  // WAVEBENDER_EVAL_H_

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

// Framewise speech parameters: F1, F2, log-f0 (+ voicing flag), spectral
// centroid and spectral slope, together with corpus normalization and
// rank-correlation analysis.

#ifndef WAVEBENDER_FEATURES_H_
#define WAVEBENDER_FEATURES_H_

#include <array>
#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wavebender/audio.h"
#include "wavebender/common.h"
#include "wavebender/signal.h"

namespace wavebender {

// Column order of ParameterTrack::values.
enum class Feature : int {
  kF1 = 0,
  kF2 = 1,
  kLogF0 = 2,
  kCentroid = 3,
  kSlope = 4,
};

inline constexpr int kNumFeatures = 5;
inline constexpr std::array<Feature, kNumFeatures> kAllFeatures = {
    Feature::kF1, Feature::kF2, Feature::kLogF0, Feature::kCentroid, Feature::kSlope};

inline int Index(Feature f) { return static_cast<int>(f); }

// Short CLI/API names: f1, f2, f0, centroid, slope.
std::string_view FeatureName(Feature f);
// Serialized column names, e.g. "f1_hz".
std::string_view FeatureColumn(Feature f);
std::optional<Feature> ParseFeature(std::string_view name);

struct TrackMetadata {
  double frame_rate = 0.0;
  int sample_rate = 0;
  bool normalized = false;
  std::string stats_id;
  // Set when no frame was voiced; log-f0 then holds the fallback value.
  bool all_unvoiced = false;
  std::vector<std::string> warnings;
};

// T x 5 matrix of parameters plus a per-frame voicing flag.
struct ParameterTrack {
  Matrix values;
  std::vector<uint8_t> voicing;
  TrackMetadata meta;

  int frames() const { return static_cast<int>(values.rows()); }
  auto column(Feature f) { return values.col(Index(f)); }
  auto column(Feature f) const { return values.col(Index(f)); }
};

// Checks shape agreement, finiteness, binary voicing and (for denormalized
// tracks) F2 >= F1 > 0 on voiced frames.
void ValidateTrack(const ParameterTrack& track);

struct ExtractionOptions {
  FrameConfig frames;
  double f0_min_hz = 60.0;
  double f0_max_hz = 400.0;
  double voicing_threshold = 0.45;
  double pre_emphasis = 0.97;
  double max_formant_bandwidth_hz = 400.0;
  // log-f0 written into utterances without any voiced frame.
  double unvoiced_log_f0_fallback = 5.3;
};

// Missing keys keep their defaults.
nlohmann::json ExtractionOptionsToJson(const ExtractionOptions& options);
ExtractionOptions ExtractionOptionsFromJson(const nlohmann::json& j);

ParameterTrack ExtractParameters(const Waveform& wave, const ExtractionOptions& options = {});

// Per-frame pitch estimate from a normalized-autocorrelation search. Exposed
// for the pitch-synchronous resynthesis in augmentation.
struct PitchFrame {
  double f0_hz = 0.0;
  double periodicity = 0.0;
  bool voiced = false;
};
std::vector<PitchFrame> TrackPitch(const Waveform& wave, const ExtractionOptions& options = {});

// Linear interpolation of `log_f0` across unvoiced frames; edges hold the
// nearest voiced value. Returns false when nothing is voiced.
bool InterpolateUnvoiced(std::vector<double>& log_f0, const std::vector<uint8_t>& voicing);

struct NormalizationStats {
  std::array<double, kNumFeatures> mean{};
  std::array<double, kNumFeatures> std{};

  std::string id() const;
};

inline constexpr double kStdFloor = 1e-8;

NormalizationStats FitNormalization(const std::vector<ParameterTrack>& tracks);
ParameterTrack Normalize(const ParameterTrack& track, const NormalizationStats& stats);
ParameterTrack Denormalize(const ParameterTrack& track, const NormalizationStats& stats);

std::string FormatStats(const NormalizationStats& stats);
NormalizationStats ParseStats(std::string_view text);
void SaveStats(const std::string& path, const NormalizationStats& stats);
NormalizationStats LoadStats(const std::string& path);

struct CorrelationMatrix {
  Matrix rho;  // 5 x 5
  std::vector<std::string> warnings;
};

// Spearman's rho over frames pooled across all tracks (average ranks for
// ties). Constant columns yield zero off-diagonal entries and a warning.
CorrelationMatrix SpearmanCorrelation(const std::vector<ParameterTrack>& tracks);

// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> AverageRanks(std::span<const double> values);

// Greedy feature pruning: repeatedly drops the feature with the most
// |rho| > threshold partners. Returns the surviving features.
std::vector<Feature> SelectDecorrelatedFeatures(const CorrelationMatrix& corr, double threshold);

// Columnar text serialization with a JSON sidecar for the metadata.
std::string FormatTrackCsv(const ParameterTrack& track);
std::string FormatTrackMetadata(const TrackMetadata& meta);
TrackMetadata ParseTrackMetadata(std::string_view metadata_json);
ParameterTrack ParseTrack(std::string_view csv, std::string_view metadata_json);
void SaveTrack(const std::string& csv_path, const ParameterTrack& track);
ParameterTrack LoadTrack(const std::string& csv_path);

}  // namespace wavebender

#endif  // WAVEBENDER_FEATURES_H_

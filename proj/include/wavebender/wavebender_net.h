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

// Features-to-mel regression network: a stack of 1D residual blocks with
// per-frame group normalization and long-range additive skips.

#ifndef WAVEBENDER_WAVEBENDER_NET_H_
#define WAVEBENDER_WAVEBENDER_NET_H_

#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "wavebender/common.h"
#include "wavebender/features.h"
#include "wavebender/mel.h"
#include "wavebender/nn.h"

namespace wavebender {

struct WavebenderNetConfig {
  int in_channels = kNumFeatures + 1;
  // Output width of each block; the last entry is the number of mel bins.
  std::vector<int> widths = {128, 256, 512, 512, 512, 512, 256, 80};
  int kernel_size = 5;
  int groups = 16;
  // 1-based (source, target): output of `source` is added to the input of
  // `target`.
  std::vector<std::pair<int, int>> long_skips = {{1, 8}, {2, 7}};

  int n_blocks() const { return static_cast<int>(widths.size()); }
  int out_channels() const { return widths.back(); }
  // Frames on either side of t that can influence output frame t.
  int ReceptiveRadius() const { return n_blocks() * 2 * (kernel_size / 2); }
  std::string fingerprint() const;
};

void ValidateNetConfig(const WavebenderNetConfig& config);
nlohmann::json NetConfigToJson(const WavebenderNetConfig& config);
WavebenderNetConfig NetConfigFromJson(const nlohmann::json& j);

// Per-bin affine map between log-mel and the unit-scale targets the network
// is trained on.
struct MelNormalizer {
  Vector mean;
  Vector std;

  static MelNormalizer Identity(int n_mels);
  static MelNormalizer Fit(const std::vector<const Matrix*>& mels);
  // Both operate on T x M matrices.
  Matrix Normalize(const Matrix& log_mel) const;
  Matrix Denormalize(const Matrix& normalized) const;
  std::string id() const;
};

struct NetworkWeights {
  WavebenderNetConfig config;
  nn::ParameterSet params;
  MelNormalizer mel_norm;
  // Identity of the feature statistics the inputs must be normalized with;
  // empty accepts any normalized track.
  std::string stats_id;
  std::string mel_config_id;

  std::string fingerprint() const { return config.fingerprint(); }
};

NetworkWeights InitNetwork(const WavebenderNetConfig& config, uint64_t seed);
// Shapes consistent with the config and all values finite.
void ValidateWeights(const NetworkWeights& weights);

struct NetForwardOptions {
  bool long_skips = true;
};

class WavebenderNet {
 public:
  struct BlockTape {
    Matrix in, c1, g1, a1, c2, pre;
  };
  struct Tape {
    std::vector<BlockTape> blocks;
    std::vector<Matrix> outputs;
    bool long_skips = true;
  };

  explicit WavebenderNet(WavebenderNetConfig config);

  void Init(nn::ParameterSet& params, Rng& rng) const;
  // x is in_channels x T; returns out_channels x T.
  Matrix Forward(const nn::ParameterSet& params, const Matrix& x, Tape* tape = nullptr,
                 NetForwardOptions options = {}) const;
  // Accumulates parameter gradients; returns d loss / d x.
  Matrix Backward(nn::ParameterSet& params, const Tape& tape, const Matrix& dy) const;

  const WavebenderNetConfig& config() const { return config_; }

 private:
  struct Block {
    nn::Conv1d conv1, conv2, shortcut;
    nn::GroupNorm1d norm1, norm2;
    bool has_shortcut = false;
    bool final = false;
  };
  struct Skip {
    int source, target;  // 0-based block indices
    nn::Conv1d proj;
  };

  WavebenderNetConfig config_;
  std::vector<Block> blocks_;
  std::vector<Skip> skips_;
};

// Stacks the normalized features and voicing into an in_channels x T input.
Matrix NetInput(const ParameterTrack& normalized_track);

// Pre-enhancement mel prediction in normalized units (T x M).
Matrix PredictNormalizedMel(const ParameterTrack& normalized_track, const NetworkWeights& weights,
                            NetForwardOptions options = {});

// Pre-enhancement log-mel prediction.
MelSpectrogram Forward(const ParameterTrack& normalized_track, const NetworkWeights& weights,
                       NetForwardOptions options = {});
std::vector<MelSpectrogram> ForwardBatch(const std::vector<ParameterTrack>& normalized_tracks,
                                         const NetworkWeights& weights);

// Mean over entries of e * tanh(e / 2), e = prediction - target. When
// `grad` is set it receives d loss / d prediction.
double XSigmoidLoss(const Matrix& prediction, const Matrix& target, Matrix* grad = nullptr);

struct GradientCheckSample {
  Matrix input;   // in_channels x T
  Matrix target;  // out_channels x T
};

// Max relative deviation between the analytic gradient of the mean
// XSigmoid loss over `batch` and central differences with step `eps`.
double GradientCheck(const NetworkWeights& weights, const std::vector<GradientCheckSample>& batch,
                     double eps = 1e-4);

// Archive helpers; tensors live under "<prefix>" and the config, mel
// normalizer and ids under meta[prefix].
void ExportNetwork(const NetworkWeights& weights, const std::string& prefix,
                   nn::TensorArchive& archive);
NetworkWeights ImportNetwork(const nn::TensorArchive& archive, const std::string& prefix);

}  // namespace wavebender

#endif  // WAVEBENDER_WAVEBENDER_NET_H_

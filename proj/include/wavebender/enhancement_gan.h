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

// Noise-conditioned residual generator that refines predicted spectrograms,
// a patch discriminator, and the least-squares GAN objective.
//
// Both networks see a spectrogram as a one-channel image with mel bins as
// rows and frames as columns. A T x M column-major matrix already has that
// pixel layout, so no copies are needed to move between the two views.

#ifndef WAVEBENDER_ENHANCEMENT_GAN_H_
#define WAVEBENDER_ENHANCEMENT_GAN_H_

#include <json.hpp>
#include <string>
#include <vector>

#include "wavebender/common.h"
#include "wavebender/mel.h"
#include "wavebender/nn.h"
#include "wavebender/wavebender_net.h"

namespace wavebender {

struct GanConfig {
  int gen_layers = 6;
  int disc_layers = 12;
  int channels = 64;
  int kernel_size = 3;
  double leaky_slope = 0.2;
  // Per-bin additive noise in normalized log-mel units.
  double noise_std = 0.01;
  double lsgan_real_label = 1.0;
  double lsgan_fake_label = 0.0;
  double recon_weight_pre = 1.0;
  double recon_weight_post = 1.0;
  double adversarial_weight = 1.0;

  std::string fingerprint() const;
};

void ValidateGanConfig(const GanConfig& config);
nlohmann::json GanConfigToJson(const GanConfig& config);
GanConfig GanConfigFromJson(const nlohmann::json& j);

struct GanWeights {
  GanConfig config;
  nn::ParameterSet generator;
  nn::ParameterSet discriminator;
  MelNormalizer mel_norm;
  int n_mels = 80;
};

GanWeights InitGan(const GanConfig& config, int n_mels, uint64_t seed);
void ValidateGanWeights(const GanWeights& weights);

// out = x + G(x); the last layer starts at zero so G begins as identity.
class Generator {
 public:
  struct Tape {
    std::vector<Matrix> inputs;  // input of each conv layer
    std::vector<Matrix> pre;     // conv outputs before activation
    nn::Shape2d shape;
  };

  explicit Generator(const GanConfig& config);
  void Init(nn::ParameterSet& params, Rng& rng) const;
  // x and the result are T x M normalized spectrograms.
  Matrix Forward(const nn::ParameterSet& params, const Matrix& x, Tape* tape = nullptr) const;
  Matrix Backward(nn::ParameterSet& params, const Tape& tape, const Matrix& dy) const;

 private:
  std::vector<nn::Conv2d> layers_;
  double slope_;
};

// Fully convolutional; returns a score map (1 x patches) with a linear head.
class Discriminator {
 public:
  struct Tape {
    std::vector<Matrix> inputs;
    std::vector<Matrix> pre;
    std::vector<nn::Shape2d> shapes;
  };

  explicit Discriminator(const GanConfig& config);
  void Init(nn::ParameterSet& params, Rng& rng) const;
  Matrix Forward(const nn::ParameterSet& params, const Matrix& x, Tape* tape = nullptr) const;
  // Returns d loss / d x as a T x M matrix.
  Matrix Backward(nn::ParameterSet& params, const Tape& tape, const Matrix& dscores) const;

 private:
  std::vector<nn::Conv2d> layers_;
  double slope_;
};

// Adds N(0, std^2) per bin from a generator seeded with `seed`.
Matrix AddNoise(const Matrix& normalized, double std, uint64_t seed);

// Generator output in normalized units for a normalized input.
Matrix EnhanceNormalized(const Matrix& normalized, uint64_t noise_seed, const GanWeights& weights);
MelSpectrogram Enhance(const MelSpectrogram& mel_in, uint64_t noise_seed,
                       const GanWeights& weights);

struct LsganLosses {
  double d_loss = 0.0;
  double g_loss = 0.0;
};

// d = 1/2 mean((real - a)^2) + 1/2 mean((fake - b)^2),
// g = 1/2 mean((fake - a)^2), with labels a (real) and b (fake).
LsganLosses ComputeLsganLosses(const Matrix& disc_real, const Matrix& disc_fake,
                               double real_label = 1.0, double fake_label = 0.0);

// Gradients of the two losses w.r.t. the score maps.
struct LsganGradients {
  Matrix d_real, d_fake, g_fake;
};
LsganGradients LsganLossGradients(const Matrix& disc_real, const Matrix& disc_fake,
                                  double real_label = 1.0, double fake_label = 0.0);

double CompositeObjective(const Matrix& mel_pre, const Matrix& mel_post, const Matrix& mel_target,
                          double g_loss, const GanConfig& config);

void ExportGan(const GanWeights& weights, const std::string& prefix, nn::TensorArchive& archive);
GanWeights ImportGan(const nn::TensorArchive& archive, const std::string& prefix);

}  // namespace wavebender

#endif  // WAVEBENDER_ENHANCEMENT_GAN_H_

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

// Minimal layer library with explicit backward passes.
//
// Layers are stateless descriptions; weights live in a ParameterSet keyed by
// name. Forward reads parameter values, Backward accumulates into parameter
// gradients and returns the gradient w.r.t. the layer input. Callers keep
// whatever inputs Backward needs.
//
// 1D activations are C x T matrices (one column per frame). 2D activations
// are C x (H * W) matrices with pixel index h * W + w.

#ifndef WAVEBENDER_NN_H_
#define WAVEBENDER_NN_H_

#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "wavebender/common.h"

namespace wavebender::nn {

struct Parameter {
  Matrix value;
  Matrix grad;
};

class ParameterSet {
 public:
  Parameter& Add(const std::string& name, Matrix value);
  const Parameter& at(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Matrix& value(const std::string& name) const { return at(name).value; }
  Matrix& grad(const std::string& name) { return at(name).grad; }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void ZeroGrad();
  // Multiplies every gradient by `factor`.
  void ScaleGrad(double factor);
  size_t size() const { return params_.size(); }
  size_t NumScalars() const;
  bool AllFinite() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the common default for conv layers.
Matrix UniformInit(Eigen::Index rows, Eigen::Index cols, int fan_in, Rng& rng);

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::string name, int in_channels, int out_channels, int kernel);

  void Init(ParameterSet& params, Rng& rng, bool zero = false) const;
  Matrix Forward(const ParameterSet& params, const Matrix& x) const;
  Matrix Backward(ParameterSet& params, const Matrix& x, const Matrix& dy) const;

  const std::string& name() const { return name_; }
  int kernel() const { return kernel_; }

 private:
  std::string name_;
  int in_ = 0, out_ = 0, kernel_ = 1;
};

// Group normalization over the channels of each group, computed separately
// at every frame, with per-channel affine parameters.
class GroupNorm1d {
 public:
  GroupNorm1d() = default;
  GroupNorm1d(std::string name, int channels, int groups);

  void Init(ParameterSet& params) const;
  Matrix Forward(const ParameterSet& params, const Matrix& x) const;
  Matrix Backward(ParameterSet& params, const Matrix& x, const Matrix& dy) const;

 private:
  std::string name_;
  int channels_ = 0, groups_ = 1;
  static constexpr double kEps = 1e-5;
};

Matrix Silu(const Matrix& x);
Matrix SiluBackward(const Matrix& x, const Matrix& dy);
Matrix LeakyRelu(const Matrix& x, double slope);
Matrix LeakyReluBackward(const Matrix& x, const Matrix& dy, double slope);

struct Shape2d {
  int channels = 1, height = 1, width = 1;
  bool operator==(const Shape2d&) const = default;
};

// 3x3 (configurable) convolution with zero padding kernel/2 and a stride.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride);

  void Init(ParameterSet& params, Rng& rng, bool zero = false) const;
  Shape2d OutputShape(const Shape2d& in) const;
  Matrix Forward(const ParameterSet& params, const Matrix& x, const Shape2d& in) const;
  Matrix Backward(ParameterSet& params, const Matrix& x, const Shape2d& in, const Matrix& dy) const;

 private:
  std::string name_;
  int in_ = 0, out_ = 0, kernel_ = 3, stride_ = 1;
};

struct AdamConfig {
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-8;
};

// Adam with bias correction; moments keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void Step(ParameterSet& params, double lr);
  long steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

  // Moments exported as "<prefix>m/<name>" and "<prefix>v/<name>".
  void Export(const std::string& prefix, std::map<std::string, Matrix>& out,
              nlohmann::json& meta) const;
  void Import(const std::string& prefix, const std::map<std::string, Matrix>& in,
              const nlohmann::json& meta);

 private:
  AdamConfig config_;
  long steps_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

// base_lr * (1 + cos(pi * step / total)) / 2, clamped to [0, total].
double CosineLearningRate(double base_lr, long step, long total_steps);

// Named tensors plus a JSON header, stored in a deterministic binary layout.
struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Matrix> tensors;

  std::string Encode() const;
  static TensorArchive Decode(std::string_view bytes);
  void Save(const std::string& path) const;
  static TensorArchive Load(const std::string& path);
};

// Copies parameter values into/out of an archive under "<prefix><name>".
void ExportParameters(const ParameterSet& params, const std::string& prefix,
                      std::map<std::string, Matrix>& out);
void ImportParameters(ParameterSet& params, const std::string& prefix,
                      const std::map<std::string, Matrix>& in);

}  // namespace wavebender::nn

#endif  // WAVEBENDER_NN_H_

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

#include "wavebender/wavebender_net.h"

#include <algorithm>
#include <cmath>

namespace wavebender {
namespace {

constexpr char kStage[] = "wavebender_net";
constexpr double kMelStdFloor = 1e-3;

std::string BlockName(int b) { return "block" + std::to_string(b + 1); }

int BlockInputWidth(const WavebenderNetConfig& c, int b) {
  return b == 0 ? c.in_channels : c.widths[b - 1];
}

}  // namespace

std::string WavebenderNetConfig::fingerprint() const {
  return Fingerprint(NetConfigToJson(*this).dump());
}

void ValidateNetConfig(const WavebenderNetConfig& c) {
  auto bad = [](const std::string& msg) { Fail(ErrorKind::kInvalidArgument, kStage, msg); };
  if (c.widths.empty()) bad("at least one block is required");
  if (c.in_channels < 1) bad("in_channels must be positive");
  if (c.kernel_size < 1 || c.kernel_size % 2 == 0) {
    bad("kernel_size must be odd and positive");
  }
  if (c.groups < 1) bad("groups must be positive");
  for (int w : c.widths) {
    if (w < 1) bad("channel widths must be positive");
  }
  const int n = c.n_blocks();
  // Every normalized width: block outputs except the last, plus the final
  // block's inner width.
  for (int b = 0; b < n; ++b) {
    const int normalized = b + 1 < n ? c.widths[b] : BlockInputWidth(c, b);
    if (normalized % c.groups != 0) {
      bad("groups (" + std::to_string(c.groups) + ") must divide width " +
          std::to_string(normalized) + " of " + BlockName(b));
    }
  }
  if (n >= 3) {
    const int interior = *std::max_element(c.widths.begin() + 1, c.widths.end() - 1);
    if (interior < std::max(c.widths.front(), c.widths.back())) {
      bad("intermediate widths must be at least the end widths");
    }
  }
  for (const auto& [s, d] : c.long_skips) {
    if (s < 1 || d > n || s >= d) {
      bad("long skip " + std::to_string(s) + "->" + std::to_string(d) +
          " must satisfy 1 <= source < target <= " + std::to_string(n));
    }
    if (d == 1) bad("long skip target must not be the first block");
  }
}

nlohmann::json NetConfigToJson(const WavebenderNetConfig& c) {
  nlohmann::json skips = nlohmann::json::array();
  for (const auto& [s, d] : c.long_skips) skips.push_back({s, d});
  return {{"in_channels", c.in_channels},
          {"widths", c.widths},
          {"kernel_size", c.kernel_size},
          {"groups", c.groups},
          {"long_skips", skips}};
}

WavebenderNetConfig NetConfigFromJson(const nlohmann::json& j) {
  WavebenderNetConfig c;
  try {
    c.in_channels = j.value("in_channels", c.in_channels);
    c.widths = j.value("widths", c.widths);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.groups = j.value("groups", c.groups);
    if (j.contains("long_skips")) {
      c.long_skips.clear();
      for (const auto& p : j.at("long_skips")) {
        c.long_skips.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, kStage, std::string("bad network config: ") + e.what());
  }
  ValidateNetConfig(c);
  return c;
}

// ---- MelNormalizer ----

MelNormalizer MelNormalizer::Identity(int n_mels) {
  return {Vector::Zero(n_mels), Vector::Ones(n_mels)};
}

MelNormalizer MelNormalizer::Fit(const std::vector<const Matrix*>& mels) {
  if (mels.empty() || mels.front()->cols() == 0) {
    Fail(ErrorKind::kInvalidArgument, kStage, "no spectrograms to fit");
  }
  const Eigen::Index m = mels.front()->cols();
  Vector sum = Vector::Zero(m);
  double frames = 0.0;
  for (const Matrix* mel : mels) {
    if (mel->cols() != m) {
      Fail(ErrorKind::kInvalidArgument, kStage, "mel bin count differs");
    }
    sum += mel->colwise().sum().transpose();
    frames += static_cast<double>(mel->rows());
  }
  if (frames < 2) Fail(ErrorKind::kInvalidArgument, kStage, "too few frames");
  MelNormalizer n;
  n.mean = sum / frames;
  Vector sq = Vector::Zero(m);
  for (const Matrix* mel : mels) {
    sq +=
        (mel->rowwise() - n.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  }
  n.std = (sq / frames).cwiseSqrt().cwiseMax(kMelStdFloor);
  return n;
}

Matrix MelNormalizer::Normalize(const Matrix& log_mel) const {
  if (log_mel.cols() != mean.size()) {
    Fail(ErrorKind::kInvalidArgument, kStage, "mel bin count mismatch");
  }
  return ((log_mel.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array())
      .matrix();
}

Matrix MelNormalizer::Denormalize(const Matrix& normalized) const {
  if (normalized.cols() != mean.size()) {
    Fail(ErrorKind::kInvalidArgument, kStage, "mel bin count mismatch");
  }
  return ((normalized.array().rowwise() * std.transpose().array()).matrix().rowwise() +
          mean.transpose());
}

std::string MelNormalizer::id() const {
  std::string canonical;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    canonical += FormatDouble(mean(i)) + "," + FormatDouble(std(i)) + ";";
  }
  return Fingerprint(canonical);
}

// ---- WavebenderNet ----

WavebenderNet::WavebenderNet(WavebenderNetConfig config) : config_(std::move(config)) {
  ValidateNetConfig(config_);
  const int n = config_.n_blocks();
  const int k = config_.kernel_size;
  for (int b = 0; b < n; ++b) {
    const std::string name = BlockName(b);
    const int in = BlockInputWidth(config_, b);
    const int out = config_.widths[b];
    Block block;
    block.final = b + 1 == n;
    const int inner = block.final ? in : out;
    block.conv1 = nn::Conv1d(name + ".conv1", in, inner, k);
    block.norm1 = nn::GroupNorm1d(name + ".norm1", inner, config_.groups);
    block.conv2 = nn::Conv1d(name + ".conv2", inner, out, k);
    if (!block.final) {
      block.norm2 = nn::GroupNorm1d(name + ".norm2", out, config_.groups);
    }
    block.has_shortcut = in != out;
    if (block.has_shortcut) {
      block.shortcut = nn::Conv1d(name + ".shortcut", in, out, 1);
    }
    blocks_.push_back(std::move(block));
  }
  for (const auto& [s, d] : config_.long_skips) {
    skips_.push_back({s - 1, d - 1,
                      nn::Conv1d("skip" + std::to_string(s) + "_" + std::to_string(d),
                                 config_.widths[s - 1], BlockInputWidth(config_, d - 1), 1)});
  }
}

void WavebenderNet::Init(nn::ParameterSet& params, Rng& rng) const {
  for (const Block& b : blocks_) {
    b.conv1.Init(params, rng);
    b.norm1.Init(params);
    b.conv2.Init(params, rng);
    if (!b.final) b.norm2.Init(params);
    if (b.has_shortcut) b.shortcut.Init(params, rng);
  }
  for (const Skip& s : skips_) s.proj.Init(params, rng);
}

Matrix WavebenderNet::Forward(const nn::ParameterSet& params, const Matrix& x, Tape* tape,
                              NetForwardOptions options) const {
  if (x.rows() != config_.in_channels || x.cols() < 1) {
    Fail(ErrorKind::kInvalidArgument, kStage,
         "input must be " + std::to_string(config_.in_channels) + " x T with T >= 1");
  }
  const int n = config_.n_blocks();
  std::vector<Matrix> outputs(n);
  if (tape) {
    tape->blocks.assign(n, {});
    tape->long_skips = options.long_skips;
  }
  for (int b = 0; b < n; ++b) {
    const Block& block = blocks_[b];
    Matrix in = b == 0 ? x : outputs[b - 1];
    if (options.long_skips) {
      for (const Skip& s : skips_) {
        if (s.target == b) in += s.proj.Forward(params, outputs[s.source]);
      }
    }
    Matrix c1 = block.conv1.Forward(params, in);
    Matrix g1 = block.norm1.Forward(params, c1);
    Matrix a1 = nn::Silu(g1);
    Matrix c2 = block.conv2.Forward(params, a1);
    Matrix pre = block.final ? c2 : block.norm2.Forward(params, c2);
    pre += block.has_shortcut ? block.shortcut.Forward(params, in) : in;
    outputs[b] = block.final ? pre : nn::Silu(pre);
    if (tape) {
      tape->blocks[b] = {std::move(in), std::move(c1), std::move(g1),
                         std::move(a1), std::move(c2), std::move(pre)};
    }
  }
  Matrix y = outputs.back();
  if (tape) tape->outputs = std::move(outputs);
  return y;
}

Matrix WavebenderNet::Backward(nn::ParameterSet& params, const Tape& tape, const Matrix& dy) const {
  const int n = config_.n_blocks();
  std::vector<Matrix> d_out(n);
  d_out[n - 1] = dy;
  Matrix dx;
  for (int b = n - 1; b >= 0; --b) {
    const Block& block = blocks_[b];
    const BlockTape& t = tape.blocks[b];
    if (d_out[b].size() == 0) d_out[b] = Matrix::Zero(t.pre.rows(), t.pre.cols());
    const Matrix d_pre = block.final ? d_out[b] : nn::SiluBackward(t.pre, d_out[b]);
    const Matrix d_c2 = block.final ? d_pre : block.norm2.Backward(params, t.c2, d_pre);
    const Matrix d_a1 = block.conv2.Backward(params, t.a1, d_c2);
    const Matrix d_c1 = block.norm1.Backward(params, t.c1, nn::SiluBackward(t.g1, d_a1));
    Matrix d_in = block.conv1.Backward(params, t.in, d_c1);
    d_in += block.has_shortcut ? block.shortcut.Backward(params, t.in, d_pre) : d_pre;
    if (tape.long_skips) {
      for (const Skip& s : skips_) {
        if (s.target != b) continue;
        Matrix g = s.proj.Backward(params, tape.outputs[s.source], d_in);
        if (d_out[s.source].size() == 0) {
          d_out[s.source] = std::move(g);
        } else {
          d_out[s.source] += g;
        }
      }
    }
    if (b == 0) {
      dx = std::move(d_in);
    } else if (d_out[b - 1].size() == 0) {
      d_out[b - 1] = std::move(d_in);
    } else {
      d_out[b - 1] += d_in;
    }
  }
  return dx;
}

// ---- Weights ----

NetworkWeights InitNetwork(const WavebenderNetConfig& config, uint64_t seed) {
  NetworkWeights w;
  w.config = config;
  WavebenderNet net(config);
  Rng rng(seed);
  net.Init(w.params, rng);
  w.mel_norm = MelNormalizer::Identity(config.out_channels());
  return w;
}

void ValidateWeights(const NetworkWeights& weights) {
  nn::ParameterSet expected;
  Rng rng(0);
  WavebenderNet(weights.config).Init(expected, rng);
  if (expected.size() != weights.params.size()) {
    Fail(ErrorKind::kFingerprintMismatch, kStage, "weights do not match the network config");
  }
  for (const auto& [name, p] : expected) {
    if (!weights.params.contains(name)) {
      Fail(ErrorKind::kFingerprintMismatch, kStage, "missing tensor " + name);
    }
    const Matrix& v = weights.params.value(name);
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
      Fail(ErrorKind::kFingerprintMismatch, kStage, "tensor " + name + " has the wrong shape");
    }
    if (!v.allFinite()) {
      Fail(ErrorKind::kNumerical, kStage, "tensor " + name + " is not finite");
    }
  }
  if (weights.mel_norm.mean.size() != weights.config.out_channels() ||
      weights.mel_norm.std.size() != weights.config.out_channels()) {
    Fail(ErrorKind::kFingerprintMismatch, kStage, "mel normalizer size mismatch");
  }
}

Matrix NetInput(const ParameterTrack& track) {
  if (!track.meta.normalized) {
    Fail(ErrorKind::kInvalidArgument, kStage,
         "parameter track must be normalized before synthesis");
  }
  if (track.frames() < 1) {
    Fail(ErrorKind::kInvalidArgument, kStage, "parameter track is empty");
  }
  if (!track.values.allFinite()) {
    Fail(ErrorKind::kInvalidArgument, kStage, "parameter track has non-finite values");
  }
  if (static_cast<int>(track.voicing.size()) != track.frames()) {
    Fail(ErrorKind::kInvalidArgument, kStage, "voicing length mismatch");
  }
  Matrix x(kNumFeatures + 1, track.frames());
  x.topRows(kNumFeatures) = track.values.transpose();
  for (int t = 0; t < track.frames(); ++t) x(kNumFeatures, t) = track.voicing[t];
  return x;
}

Matrix PredictNormalizedMel(const ParameterTrack& track, const NetworkWeights& weights,
                            NetForwardOptions options) {
  if (!weights.stats_id.empty() && track.meta.stats_id != weights.stats_id) {
    Fail(ErrorKind::kFingerprintMismatch, kStage,
         "track was normalized with stats " + track.meta.stats_id + " but the network expects " +
             weights.stats_id);
  }
  const WavebenderNet net(weights.config);
  return net.Forward(weights.params, NetInput(track), nullptr, options).transpose();
}

MelSpectrogram Forward(const ParameterTrack& track, const NetworkWeights& weights,
                       NetForwardOptions options) {
  MelSpectrogram mel;
  mel.bins = weights.mel_norm.Denormalize(PredictNormalizedMel(track, weights, options));
  mel.frame_rate = track.meta.frame_rate;
  mel.config_id = weights.mel_config_id;
  return mel;
}

std::vector<MelSpectrogram> ForwardBatch(const std::vector<ParameterTrack>& tracks,
                                         const NetworkWeights& weights) {
  std::vector<MelSpectrogram> out;
  out.reserve(tracks.size());
  for (const ParameterTrack& t : tracks) out.push_back(Forward(t, weights));
  return out;
}

double XSigmoidLoss(const Matrix& prediction, const Matrix& target, Matrix* grad) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    Fail(ErrorKind::kInvalidArgument, "xsigmoid",
         "prediction is " + std::to_string(prediction.rows()) + "x" +
             std::to_string(prediction.cols()) + " but target is " + std::to_string(target.rows()) +
             "x" + std::to_string(target.cols()));
  }
  if (prediction.size() == 0) {
    Fail(ErrorKind::kInvalidArgument, "xsigmoid", "empty input");
  }
  const double n = static_cast<double>(prediction.size());
  const Eigen::ArrayXXd e = (prediction - target).array();
  const Eigen::ArrayXXd th = (e * 0.5).tanh();
  if (grad) *grad = ((th + 0.5 * e * (1.0 - th.square())) / n).matrix();
  return (e * th).sum() / n;
}

double GradientCheck(const NetworkWeights& weights, const std::vector<GradientCheckSample>& batch,
                     double eps) {
  if (batch.empty()) Fail(ErrorKind::kInvalidArgument, kStage, "empty batch");
  const WavebenderNet net(weights.config);
  nn::ParameterSet params = weights.params;
  const double scale = 1.0 / static_cast<double>(batch.size());
  auto loss = [&](const nn::ParameterSet& p) {
    double total = 0.0;
    for (const auto& s : batch) total += XSigmoidLoss(net.Forward(p, s.input), s.target);
    return total * scale;
  };
  params.ZeroGrad();
  for (const auto& s : batch) {
    WavebenderNet::Tape tape;
    const Matrix y = net.Forward(params, s.input, &tape);
    Matrix dy;
    XSigmoidLoss(y, s.target, &dy);
    net.Backward(params, tape, dy * scale);
  }
  double worst = 0.0;
  for (auto& [name, p] : params) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data()[i];
      p.value.data()[i] = saved + eps;
      const double up = loss(params);
      p.value.data()[i] = saved - eps;
      const double down = loss(params);
      p.value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p.grad.data()[i];
      const double denom = std::max(std::abs(numeric) + std::abs(analytic), 1e-6);
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

void ExportNetwork(const NetworkWeights& weights, const std::string& prefix,
                   nn::TensorArchive& archive) {
  nn::ExportParameters(weights.params, prefix, archive.tensors);
  archive.tensors[prefix + "mel_norm/mean"] = weights.mel_norm.mean;
  archive.tensors[prefix + "mel_norm/std"] = weights.mel_norm.std;
  archive.meta[prefix] = {{"config", NetConfigToJson(weights.config)},
                          {"fingerprint", weights.fingerprint()},
                          {"stats_id", weights.stats_id},
                          {"mel_config_id", weights.mel_config_id},
                          {"mel_norm_id", weights.mel_norm.id()}};
}

NetworkWeights ImportNetwork(const nn::TensorArchive& archive, const std::string& prefix) {
  if (!archive.meta.contains(prefix)) {
    Fail(ErrorKind::kNotFound, kStage, "archive has no network under " + prefix);
  }
  const nlohmann::json& m = archive.meta.at(prefix);
  NetworkWeights w = InitNetwork(NetConfigFromJson(m.at("config")), 0);
  if (w.fingerprint() != m.value("fingerprint", "")) {
    Fail(ErrorKind::kFingerprintMismatch, kStage, "network config fingerprint mismatch");
  }
  nn::ImportParameters(w.params, prefix, archive.tensors);
  auto tensor = [&](const std::string& key) -> const Matrix& {
    auto it = archive.tensors.find(prefix + key);
    if (it == archive.tensors.end()) {
      Fail(ErrorKind::kNotFound, kStage, "missing tensor " + prefix + key);
    }
    return it->second;
  };
  w.mel_norm.mean = tensor("mel_norm/mean").col(0);
  w.mel_norm.std = tensor("mel_norm/std").col(0);
  if (w.mel_norm.id() != m.value("mel_norm_id", "")) {
    Fail(ErrorKind::kFingerprintMismatch, kStage, "mel normalizer id mismatch");
  }
  w.stats_id = m.value("stats_id", "");
  w.mel_config_id = m.value("mel_config_id", "");
  ValidateWeights(w);
  return w;
}

}  // namespace wavebender

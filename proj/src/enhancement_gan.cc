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

#include "wavebender/enhancement_gan.h"

#include <cmath>

namespace wavebender {
namespace {

constexpr char kStage[] = "enhancement_gan";

// T x M spectrogram as a 1 x (M * T) image with M rows and T columns.
Matrix AsImage(const Matrix& mel) { return Eigen::Map<const Matrix>(mel.data(), 1, mel.size()); }

Matrix FromImage(const Matrix& image, Eigen::Index frames, Eigen::Index bins) {
  return Eigen::Map<const Matrix>(image.data(), frames, bins);
}

void CheckScores(const Matrix& s, const char* what) {
  if (s.size() == 0 || !s.allFinite()) {
    Fail(ErrorKind::kInvalidArgument, "lsgan",
         std::string(what) + " scores must be finite and non-empty");
  }
}

}  // namespace

std::string GanConfig::fingerprint() const {
  // Only the architecture determines weight compatibility.
  return Fingerprint(nlohmann::json{
      {"gen_layers", gen_layers},
      {"disc_layers", disc_layers},
      {"channels", channels},
      {"kernel_size",
       kernel_size}}.dump());
}

void ValidateGanConfig(const GanConfig& c) {
  auto bad = [](const std::string& msg) { Fail(ErrorKind::kInvalidArgument, kStage, msg); };
  if (c.gen_layers < 1 || c.disc_layers < 1) bad("layer counts must be >= 1");
  if (c.channels < 1) bad("channels must be positive");
  if (c.kernel_size < 1 || c.kernel_size % 2 == 0) bad("kernel_size must be odd");
  if (!(c.noise_std >= 0.0)) bad("noise_std must be >= 0");
  if (!(c.recon_weight_pre >= 0.0) || !(c.recon_weight_post >= 0.0) ||
      !(c.adversarial_weight >= 0.0)) {
    bad("loss weights must be >= 0");
  }
  if (!(c.leaky_slope >= 0.0 && c.leaky_slope < 1.0)) bad("leaky_slope must be in [0, 1)");
}

nlohmann::json GanConfigToJson(const GanConfig& c) {
  return {{"gen_layers", c.gen_layers},
          {"disc_layers", c.disc_layers},
          {"channels", c.channels},
          {"kernel_size", c.kernel_size},
          {"leaky_slope", c.leaky_slope},
          {"noise_std", c.noise_std},
          {"lsgan_real_label", c.lsgan_real_label},
          {"lsgan_fake_label", c.lsgan_fake_label},
          {"recon_weight_pre", c.recon_weight_pre},
          {"recon_weight_post", c.recon_weight_post},
          {"adversarial_weight", c.adversarial_weight}};
}

GanConfig GanConfigFromJson(const nlohmann::json& j) {
  GanConfig c;
  try {
    c.gen_layers = j.value("gen_layers", c.gen_layers);
    c.disc_layers = j.value("disc_layers", c.disc_layers);
    c.channels = j.value("channels", c.channels);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.lsgan_real_label = j.value("lsgan_real_label", c.lsgan_real_label);
    c.lsgan_fake_label = j.value("lsgan_fake_label", c.lsgan_fake_label);
    c.recon_weight_pre = j.value("recon_weight_pre", c.recon_weight_pre);
    c.recon_weight_post = j.value("recon_weight_post", c.recon_weight_post);
    c.adversarial_weight = j.value("adversarial_weight", c.adversarial_weight);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, kStage, std::string("bad gan config: ") + e.what());
  }
  ValidateGanConfig(c);
  return c;
}

// ---- Generator ----

Generator::Generator(const GanConfig& config) : slope_(config.leaky_slope) {
  ValidateGanConfig(config);
  const int n = config.gen_layers, c = config.channels;
  for (int l = 0; l < n; ++l) {
    const int in = l == 0 ? 1 : c;
    const int out = l + 1 == n ? 1 : c;
    layers_.emplace_back("gen.conv" + std::to_string(l + 1), in, out, config.kernel_size, 1);
  }
}

void Generator::Init(nn::ParameterSet& params, Rng& rng) const {
  for (size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].Init(params, rng, /*zero=*/l + 1 == layers_.size());
  }
}

Matrix Generator::Forward(const nn::ParameterSet& params, const Matrix& x, Tape* tape) const {
  nn::Shape2d shape{1, static_cast<int>(x.cols()), static_cast<int>(x.rows())};
  Matrix h = AsImage(x);
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
    tape->shape = shape;
  }
  for (size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = layers_[l].Forward(params, h, shape);
    shape = layers_[l].OutputShape(shape);
    const bool last = l + 1 == layers_.size();
    Matrix next = last ? z : nn::LeakyRelu(z, slope_);
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->pre.push_back(std::move(z));
    }
    h = std::move(next);
  }
  return x + FromImage(h, x.rows(), x.cols());
}

Matrix Generator::Backward(nn::ParameterSet& params, const Tape& tape, const Matrix& dy) const {
  Matrix g = AsImage(dy);
  std::vector<nn::Shape2d> shapes{tape.shape};
  for (const auto& layer : layers_) shapes.push_back(layer.OutputShape(shapes.back()));
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    if (l + 1 != static_cast<int>(layers_.size())) {
      g = nn::LeakyReluBackward(tape.pre[l], g, slope_);
    }
    g = layers_[l].Backward(params, tape.inputs[l], shapes[l], g);
  }
  return dy + FromImage(g, dy.rows(), dy.cols());
}

// ---- Discriminator ----

Discriminator::Discriminator(const GanConfig& config) : slope_(config.leaky_slope) {
  ValidateGanConfig(config);
  const int n = config.disc_layers, c = config.channels;
  for (int l = 0; l < n; ++l) {
    const int in = l == 0 ? 1 : c;
    const int out = l + 1 == n ? 1 : c;
    // Downsample on every second layer, keeping the first and the head at
    // full stride.
    const int stride = (l % 2 == 1 && l + 1 < n) ? 2 : 1;
    layers_.emplace_back("disc.conv" + std::to_string(l + 1), in, out, config.kernel_size, stride);
  }
}

void Discriminator::Init(nn::ParameterSet& params, Rng& rng) const {
  for (const auto& layer : layers_) layer.Init(params, rng);
}

Matrix Discriminator::Forward(const nn::ParameterSet& params, const Matrix& x, Tape* tape) const {
  nn::Shape2d shape{1, static_cast<int>(x.cols()), static_cast<int>(x.rows())};
  Matrix h = AsImage(x);
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
    tape->shapes.clear();
  }
  for (size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = layers_[l].Forward(params, h, shape);
    const bool last = l + 1 == layers_.size();
    Matrix next = last ? z : nn::LeakyRelu(z, slope_);
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->pre.push_back(std::move(z));
      tape->shapes.push_back(shape);
    }
    shape = layers_[l].OutputShape(shape);
    h = std::move(next);
  }
  return h;
}

Matrix Discriminator::Backward(nn::ParameterSet& params, const Tape& tape,
                               const Matrix& dscores) const {
  Matrix g = dscores;
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    if (l + 1 != static_cast<int>(layers_.size())) {
      g = nn::LeakyReluBackward(tape.pre[l], g, slope_);
    }
    g = layers_[l].Backward(params, tape.inputs[l], tape.shapes[l], g);
  }
  const nn::Shape2d& in = tape.shapes.front();
  return FromImage(g, in.width, in.height);
}

// ---- Weights ----

GanWeights InitGan(const GanConfig& config, int n_mels, uint64_t seed) {
  GanWeights w;
  w.config = config;
  w.n_mels = n_mels;
  Rng rng(seed);
  Generator(config).Init(w.generator, rng);
  Discriminator(config).Init(w.discriminator, rng);
  w.mel_norm = MelNormalizer::Identity(n_mels);
  return w;
}

void ValidateGanWeights(const GanWeights& weights) {
  const GanWeights expected = InitGan(weights.config, weights.n_mels, 0);
  auto check = [](const nn::ParameterSet& want, const nn::ParameterSet& have) {
    if (want.size() != have.size()) {
      Fail(ErrorKind::kFingerprintMismatch, kStage, "weights do not match the gan config");
    }
    for (const auto& [name, p] : want) {
      if (!have.contains(name)) {
        Fail(ErrorKind::kFingerprintMismatch, kStage, "missing tensor " + name);
      }
      const Matrix& v = have.value(name);
      if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
        Fail(ErrorKind::kFingerprintMismatch, kStage, "tensor " + name + " has the wrong shape");
      }
      if (!v.allFinite()) Fail(ErrorKind::kNumerical, kStage, "tensor " + name + " is not finite");
    }
  };
  check(expected.generator, weights.generator);
  check(expected.discriminator, weights.discriminator);
  if (weights.mel_norm.mean.size() != weights.n_mels) {
    Fail(ErrorKind::kFingerprintMismatch, kStage, "mel normalizer size mismatch");
  }
}

Matrix AddNoise(const Matrix& normalized, double std, uint64_t seed) {
  Matrix out = normalized;
  if (std <= 0.0) return out;
  Rng rng(seed);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += std * rng.Normal();
  return out;
}

Matrix EnhanceNormalized(const Matrix& normalized, uint64_t noise_seed, const GanWeights& weights) {
  if (normalized.cols() != weights.n_mels || normalized.rows() < 1) {
    Fail(ErrorKind::kInvalidArgument, kStage,
         "expected T x " + std::to_string(weights.n_mels) + " spectrogram, got " +
             std::to_string(normalized.rows()) + "x" + std::to_string(normalized.cols()));
  }
  if (!normalized.allFinite()) {
    Fail(ErrorKind::kInvalidArgument, kStage, "spectrogram has non-finite values");
  }
  const Generator gen(weights.config);
  return gen.Forward(weights.generator, AddNoise(normalized, weights.config.noise_std, noise_seed));
}

MelSpectrogram Enhance(const MelSpectrogram& mel_in, uint64_t noise_seed,
                       const GanWeights& weights) {
  if (mel_in.bins.cols() != weights.n_mels) {
    Fail(ErrorKind::kInvalidArgument, kStage,
         "spectrogram has " + std::to_string(mel_in.bins.cols()) + " bins; the generator expects " +
             std::to_string(weights.n_mels));
  }
  MelSpectrogram out = mel_in;
  out.bins = weights.mel_norm.Denormalize(
      EnhanceNormalized(weights.mel_norm.Normalize(mel_in.bins), noise_seed, weights));
  return out;
}

LsganLosses ComputeLsganLosses(const Matrix& real, const Matrix& fake, double real_label,
                               double fake_label) {
  CheckScores(real, "real");
  CheckScores(fake, "fake");
  LsganLosses l;
  l.d_loss = 0.5 * (real.array() - real_label).square().mean() +
             0.5 * (fake.array() - fake_label).square().mean();
  l.g_loss = 0.5 * (fake.array() - real_label).square().mean();
  return l;
}

LsganGradients LsganLossGradients(const Matrix& real, const Matrix& fake, double real_label,
                                  double fake_label) {
  CheckScores(real, "real");
  CheckScores(fake, "fake");
  const double nr = static_cast<double>(real.size());
  const double nf = static_cast<double>(fake.size());
  LsganGradients g;
  g.d_real = (real.array() - real_label).matrix() / nr;
  g.d_fake = (fake.array() - fake_label).matrix() / nf;
  g.g_fake = (fake.array() - real_label).matrix() / nf;
  return g;
}

double CompositeObjective(const Matrix& mel_pre, const Matrix& mel_post, const Matrix& mel_target,
                          double g_loss, const GanConfig& config) {
  return config.recon_weight_pre * XSigmoidLoss(mel_pre, mel_target) +
         config.recon_weight_post * XSigmoidLoss(mel_post, mel_target) +
         config.adversarial_weight * g_loss;
}

void ExportGan(const GanWeights& weights, const std::string& prefix, nn::TensorArchive& archive) {
  nn::ExportParameters(weights.generator, prefix, archive.tensors);
  nn::ExportParameters(weights.discriminator, prefix, archive.tensors);
  archive.tensors[prefix + "mel_norm/mean"] = weights.mel_norm.mean;
  archive.tensors[prefix + "mel_norm/std"] = weights.mel_norm.std;
  archive.meta[prefix] = {{"config", GanConfigToJson(weights.config)},
                          {"fingerprint", weights.config.fingerprint()},
                          {"n_mels", weights.n_mels},
                          {"mel_norm_id", weights.mel_norm.id()}};
}

GanWeights ImportGan(const nn::TensorArchive& archive, const std::string& prefix) {
  if (!archive.meta.contains(prefix)) {
    Fail(ErrorKind::kNotFound, kStage, "archive has no gan under " + prefix);
  }
  const nlohmann::json& m = archive.meta.at(prefix);
  GanWeights w = InitGan(GanConfigFromJson(m.at("config")), m.at("n_mels").get<int>(), 0);
  if (w.config.fingerprint() != m.value("fingerprint", "")) {
    Fail(ErrorKind::kFingerprintMismatch, kStage, "gan config fingerprint mismatch");
  }
  nn::ImportParameters(w.generator, prefix, archive.tensors);
  nn::ImportParameters(w.discriminator, prefix, archive.tensors);
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
  ValidateGanWeights(w);
  return w;
}

}  // namespace wavebender

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

#include "wavebender/manipulation.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "wavebender/enhancement_gan.h"

namespace wavebender {
namespace {

constexpr char kStage[] = "manipulation";
constexpr char kCouplingKind[] = "wavebender-coupling";
constexpr int kCouplingVersion = 1;

[[noreturn]] void Bad(const std::string& msg) { Fail(ErrorKind::kInvalidArgument, kStage, msg); }

bool IsFormant(Feature f) { return f == Feature::kF1 || f == Feature::kF2; }

Feature Dependent(CouplingPolicy p) {
  return p == CouplingPolicy::kPredictF2FromF1 ? Feature::kF2 : Feature::kF1;
}

std::string DirectionKey(Feature source, Feature target) {
  return std::string(FeatureName(target)) + "_from_" + std::string(FeatureName(source));
}

FeatureAction ActionFromJson(const nlohmann::json& v, std::string_view name) {
  const std::string where = "action for " + std::string(name);
  if (v.is_string()) {
    if (v.get<std::string>() != "keep") Bad(where + ": unknown action " + v.dump());
    return FeatureAction::Keep();
  }
  if (!v.is_object() || v.size() != 1) {
    Bad(where + ": expected \"keep\", {\"scale\": m} or {\"replace\": [...]}");
  }
  const auto& [key, arg] = *v.items().begin();
  if (key == "keep") return FeatureAction::Keep();
  if (key == "scale") {
    if (!arg.is_number()) Bad(where + ": scale must be a number");
    return FeatureAction::Scale(arg.get<double>());
  }
  if (key == "replace") {
    if (!arg.is_array()) Bad(where + ": replace must be an array of numbers");
    std::vector<double> values;
    values.reserve(arg.size());
    for (const auto& x : arg) {
      if (!x.is_number()) Bad(where + ": replace must be an array of numbers");
      values.push_back(x.get<double>());
    }
    return FeatureAction::Replace(std::move(values));
  }
  Bad(where + ": unknown action " + key);
}

std::string ListFrames(const std::vector<int>& frames) {
  std::ostringstream out;
  const size_t shown = std::min<size_t>(frames.size(), 20);
  for (size_t i = 0; i < shown; ++i) out << (i ? "," : "") << frames[i];
  if (frames.size() > shown) out << ",... (" << frames.size() << " frames)";
  return out.str();
}

// ValidateTrack without the formant-order rule, which a desired track may
// break until coupling has run.
void CheckTrackShape(const ParameterTrack& t) {
  if (t.frames() < 1 || t.values.cols() != kNumFeatures ||
      static_cast<int>(t.voicing.size()) != t.frames()) {
    Bad("expected a T x 5 track with T >= 1 and one voicing flag per frame");
  }
  if (!t.values.allFinite()) Bad("track has non-finite values");
}

void CheckCouplingInput(const Matrix& x, int in_channels) {
  if (x.rows() != in_channels || x.cols() < 1) {
    Bad("coupling input must be " + std::to_string(in_channels) + " x T");
  }
}

nlohmann::json PredictorMeta(const CouplingPredictor& p) {
  return {{"source", FeatureName(p.source)},    {"target", FeatureName(p.target)},
          {"heldout_rmse", p.heldout_rmse},     {"heldout_rmse_hz", p.heldout_rmse_hz},
          {"heldout_frames", p.heldout_frames}, {"train_rmse", p.train_rmse}};
}

CouplingPredictor PredictorFromArchive(const nn::TensorArchive& a, Feature source, Feature target) {
  const std::string key = DirectionKey(source, target);
  CouplingPredictor p;
  p.source = source;
  p.target = target;
  p.net = ImportNetwork(a, key + "/");
  const nlohmann::json& m = a.meta.at("predictors").at(key);
  p.heldout_rmse = m.at("heldout_rmse").get<double>();
  p.heldout_rmse_hz = m.at("heldout_rmse_hz").get<double>();
  p.heldout_frames = m.at("heldout_frames").get<long>();
  p.train_rmse = m.at("train_rmse").get<double>();
  return p;
}

// Pooled RMSE of the normalized target column over `inputs`.
std::pair<double, long> PooledRmse(const CouplingPredictor& p, const std::vector<Matrix>& inputs) {
  double sum = 0.0;
  long n = 0;
  for (const Matrix& in : inputs) {
    const Vector pred = PredictCoupled(p, in);
    const Vector truth = in.row(Index(p.target)).transpose();
    sum += (pred - truth).squaredNorm();
    n += truth.size();
  }
  return {n ? std::sqrt(sum / static_cast<double>(n)) : 0.0, n};
}

}  // namespace

std::string_view CouplingPolicyName(CouplingPolicy policy) {
  switch (policy) {
    case CouplingPolicy::kIndependent:
      return "independent";
    case CouplingPolicy::kPredictF2FromF1:
      return "predict_f2_from_f1";
    case CouplingPolicy::kPredictF1FromF2:
      return "predict_f1_from_f2";
  }
  return "independent";
}

std::optional<CouplingPolicy> ParseCouplingPolicy(std::string_view name) {
  for (CouplingPolicy p : {CouplingPolicy::kIndependent, CouplingPolicy::kPredictF2FromF1,
                           CouplingPolicy::kPredictF1FromF2}) {
    if (name == CouplingPolicyName(p)) return p;
  }
  return std::nullopt;
}

bool ManipulationSpec::all_keep() const {
  return std::all_of(actions.begin(), actions.end(),
                     [](const FeatureAction& a) { return a.kind == ActionKind::kKeep; });
}

ManipulationSpec ManipulationSpec::ScaleOne(Feature f, double m, bool couple) {
  ManipulationSpec spec;
  spec.action(f) = FeatureAction::Scale(m);
  if (couple && f == Feature::kF1) spec.coupling = CouplingPolicy::kPredictF2FromF1;
  if (couple && f == Feature::kF2) spec.coupling = CouplingPolicy::kPredictF1FromF2;
  return spec;
}

nlohmann::json SpecToJson(const ManipulationSpec& spec) {
  nlohmann::json j = nlohmann::json::object();
  for (Feature f : kAllFeatures) {
    const FeatureAction& a = spec.action(f);
    const std::string name(FeatureName(f));
    switch (a.kind) {
      case ActionKind::kKeep:
        j[name] = "keep";
        break;
      case ActionKind::kScale:
        j[name] = {{"scale", a.scale}};
        break;
      case ActionKind::kReplace:
        j[name] = {{"replace", a.trajectory}};
        break;
    }
  }
  j["coupling"] = CouplingPolicyName(spec.coupling);
  return j;
}

ManipulationSpec SpecFromJson(const nlohmann::json& j) {
  if (!j.is_object()) Bad("spec must be a JSON object");
  ManipulationSpec spec;
  std::array<bool, kNumFeatures> seen{};
  for (const auto& [key, value] : j.items()) {
    if (key == "coupling") {
      if (!value.is_string()) Bad("coupling must be a string");
      const auto p = ParseCouplingPolicy(value.get<std::string>());
      if (!p) {
        Bad("unknown coupling policy " + value.dump() +
            " (independent, predict_f2_from_f1, predict_f1_from_f2)");
      }
      spec.coupling = *p;
      continue;
    }
    const auto f = ParseFeature(key);
    if (!f) Bad("unknown feature \"" + key + "\" (f1, f2, f0, centroid, slope)");
    if (seen[Index(*f)]) Bad("feature " + key + " given twice");
    seen[Index(*f)] = true;
    spec.action(*f) = ActionFromJson(value, key);
  }
  ValidateSpec(spec);
  return spec;
}

std::vector<std::pair<std::string, ManipulationSpec>> LoadSpecDirectory(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    Fail(ErrorKind::kNotFound, kStage, "spec directory " + dir + " does not exist");
  }
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") {
      files.push_back(e.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<std::pair<std::string, ManipulationSpec>> out;
  for (const std::string& path : files) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(ReadFileBytes(path));
    } catch (const nlohmann::json::exception& e) {
      Bad(path + ": " + e.what());
    }
    try {
      out.emplace_back(fs::path(path).stem().string(), SpecFromJson(j));
    } catch (const Error& e) {
      Bad(path + ": " + e.detail());
    }
  }
  return out;
}

void ValidateSpec(const ManipulationSpec& spec, int frames) {
  for (Feature f : kAllFeatures) {
    const FeatureAction& a = spec.action(f);
    const std::string name(FeatureName(f));
    if (a.kind == ActionKind::kScale && !(std::isfinite(a.scale) && a.scale > 0.0)) {
      Bad("scale for " + name + " must be a finite m > 0, got " + FormatDouble(a.scale));
    }
    if (a.kind == ActionKind::kReplace) {
      if (frames >= 0 && static_cast<int>(a.trajectory.size()) != frames) {
        Bad("replacement for " + name + " has " + std::to_string(a.trajectory.size()) +
            " frames; the track has " + std::to_string(frames));
      }
      if (a.trajectory.empty()) Bad("replacement for " + name + " is empty");
      for (double v : a.trajectory) {
        if (!std::isfinite(v)) Bad("replacement for " + name + " has non-finite values");
      }
    }
  }
  if (spec.coupling != CouplingPolicy::kIndependent) {
    const Feature dep = Dependent(spec.coupling);
    if (spec.action(dep).kind != ActionKind::kKeep) {
      Bad(std::string(FeatureName(dep)) + " is predicted under " +
          std::string(CouplingPolicyName(spec.coupling)) + " and must be kept");
    }
  }
}

ParameterTrack BuildDesired(const ParameterTrack& track, const ManipulationSpec& spec) {
  ValidateTrack(track);
  if (track.meta.normalized) Bad("desired trajectories are built from denormalized tracks");
  ValidateSpec(spec, track.frames());
  ParameterTrack out = track;
  for (Feature f : kAllFeatures) {
    const FeatureAction& a = spec.action(f);
    auto col = out.column(f);
    if (a.kind == ActionKind::kScale) {
      if (f == Feature::kLogF0) {
        col.array() += std::log(a.scale);
      } else {
        col *= a.scale;
      }
    } else if (a.kind == ActionKind::kReplace) {
      col = Eigen::Map<const Vector>(a.trajectory.data(),
                                     static_cast<Eigen::Index>(a.trajectory.size()));
    }
  }
  if (spec.coupling == CouplingPolicy::kIndependent) {
    std::vector<int> bad;
    for (int t = 0; t < out.frames(); ++t) {
      if (out.voicing[t] &&
          out.values(t, Index(Feature::kF2)) < out.values(t, Index(Feature::kF1))) {
        bad.push_back(t);
      }
    }
    if (!bad.empty()) {
      Bad("F2 < F1 on voiced frames " + ListFrames(bad) +
          "; use a predict coupling policy or adjust the formants");
    }
  }
  return out;
}

const CouplingPredictor& CouplingModel::For(CouplingPolicy policy) const {
  switch (policy) {
    case CouplingPolicy::kPredictF2FromF1:
      return f2_from_f1;
    case CouplingPolicy::kPredictF1FromF2:
      return f1_from_f2;
    case CouplingPolicy::kIndependent:
      break;
  }
  Bad("the independent policy has no predictor");
}

nn::TensorArchive CouplingModel::ToArchive() const {
  nn::TensorArchive a;
  a.meta["kind"] = kCouplingKind;
  a.meta["version"] = kCouplingVersion;
  a.meta["stats"] = FormatStats(stats);
  a.meta["stats_id"] = stats_id;
  a.meta["predictors"] = nlohmann::json::object();
  for (const CouplingPredictor* p : {&f2_from_f1, &f1_from_f2}) {
    const std::string key = DirectionKey(p->source, p->target);
    ExportNetwork(p->net, key + "/", a);
    a.meta["predictors"][key] = PredictorMeta(*p);
  }
  return a;
}

CouplingModel CouplingModel::FromArchive(const nn::TensorArchive& a) {
  if (a.meta.value("kind", "") != kCouplingKind) {
    Fail(ErrorKind::kInvalidArgument, kStage, "archive is not a coupling model");
  }
  CouplingModel m;
  try {
    m.stats = ParseStats(a.meta.at("stats").get<std::string>());
    m.stats_id = a.meta.at("stats_id").get<std::string>();
    m.f2_from_f1 = PredictorFromArchive(a, Feature::kF1, Feature::kF2);
    m.f1_from_f2 = PredictorFromArchive(a, Feature::kF2, Feature::kF1);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, kStage, std::string("coupling archive: ") + e.what());
  }
  if (m.stats.id() != m.stats_id || m.f2_from_f1.net.stats_id != m.stats_id ||
      m.f1_from_f2.net.stats_id != m.stats_id) {
    Fail(ErrorKind::kFingerprintMismatch, kStage,
         "coupling predictors disagree on normalization statistics");
  }
  return m;
}

void CouplingModel::Save(const std::string& path) const { ToArchive().Save(path); }

CouplingModel CouplingModel::Load(const std::string& path) {
  return FromArchive(nn::TensorArchive::Load(path));
}

std::string CouplingModel::fingerprint() const { return Fingerprint(ToArchive().Encode()); }

Matrix CouplingInput(const Matrix& net_input, Feature target) {
  Matrix x = net_input;
  x.row(Index(target)).setZero();
  return x;
}

Vector PredictCoupled(const CouplingPredictor& p, const Matrix& net_input) {
  CheckCouplingInput(net_input, p.net.config.in_channels);
  const WavebenderNet net(p.net.config);
  return net.Forward(p.net.params, CouplingInput(net_input, p.target)).row(0).transpose();
}

CouplingPredictor TrainCouplingPredictor(Feature source, Feature target,
                                         const std::vector<Matrix>& train_inputs,
                                         const std::vector<Matrix>& heldout_inputs,
                                         const NormalizationStats& stats,
                                         const CouplingTrainingOptions& o) {
  if (!IsFormant(source) || !IsFormant(target) || source == target) {
    Bad("coupling predicts one formant from the other");
  }
  if (train_inputs.empty()) Bad("coupling training needs at least one input");
  if (o.epochs < 1 || o.batch_size < 1 || o.segment_frames < 1 || !(o.base_lr > 0.0)) {
    Bad("coupling training options must be positive");
  }
  WavebenderNetConfig cfg;
  cfg.in_channels = kNumFeatures + 1;
  cfg.widths = o.widths;
  cfg.kernel_size = o.kernel_size;
  cfg.groups = o.groups;
  cfg.long_skips.clear();
  if (cfg.out_channels() != 1) Bad("the coupling network must end in one channel");
  ValidateNetConfig(cfg);
  for (const Matrix& x : train_inputs) CheckCouplingInput(x, cfg.in_channels);
  for (const Matrix& x : heldout_inputs) CheckCouplingInput(x, cfg.in_channels);

  const std::string key = DirectionKey(source, target);
  CouplingPredictor p;
  p.source = source;
  p.target = target;
  p.net = InitNetwork(cfg, MixSeed(o.seed, "coupling/" + key));
  p.net.mel_norm = MelNormalizer::Identity(1);
  p.net.stats_id = stats.id();

  const WavebenderNet net(cfg);
  nn::Adam adam;
  const size_t n = train_inputs.size();
  const size_t batch = static_cast<size_t>(o.batch_size);
  const long spe = static_cast<long>((n + batch - 1) / batch);
  const long total = spe * o.epochs;
  const uint64_t shuffle_seed = MixSeed(MixSeed(o.seed, key), "shuffle");
  const uint64_t crop_seed = MixSeed(MixSeed(o.seed, key), "crop");
  std::vector<size_t> order(n);
  for (long step = 0; step < total; ++step) {
    const long pos = step % spe;
    if (pos == 0) {
      std::iota(order.begin(), order.end(), size_t{0});
      Rng shuffle(MixSeed(shuffle_seed, static_cast<uint64_t>(step / spe)));
      for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.Below(i + 1)]);
    }
    const size_t begin = static_cast<size_t>(pos) * batch;
    const size_t end = std::min(n, begin + batch);
    const double inv = 1.0 / static_cast<double>(end - begin);
    p.net.params.ZeroGrad();
    for (size_t k = begin; k < end; ++k) {
      const Matrix& in = train_inputs[order[k]];
      const long len = std::min<long>(in.cols(), o.segment_frames);
      long start = 0;
      if (in.cols() > len) {
        Rng rng(MixSeed(MixSeed(crop_seed, static_cast<uint64_t>(step)), k - begin));
        start = static_cast<long>(rng.Below(static_cast<uint64_t>(in.cols() - len + 1)));
      }
      const Matrix crop = in.middleCols(start, len);
      WavebenderNet::Tape tape;
      const Matrix pred = net.Forward(p.net.params, CouplingInput(crop, target), &tape);
      Matrix grad;
      const double loss = XSigmoidLoss(pred, crop.row(Index(target)), &grad);
      if (!std::isfinite(loss)) {
        Fail(ErrorKind::kNumerical, kStage,
             "coupling loss is not finite at step " + std::to_string(step));
      }
      net.Backward(p.net.params, tape, inv * grad);
    }
    adam.Step(p.net.params, nn::CosineLearningRate(o.base_lr, step, total));
    if (!p.net.params.AllFinite()) {
      Fail(ErrorKind::kNumerical, kStage,
           "coupling weights diverged at step " + std::to_string(step));
    }
  }
  p.train_rmse = PooledRmse(p, train_inputs).first;
  const auto [rmse, frames] = PooledRmse(p, heldout_inputs);
  p.heldout_rmse = rmse;
  p.heldout_frames = frames;
  p.heldout_rmse_hz = rmse * stats.std[Index(target)];
  return p;
}

CouplingModel TrainCouplingModel(const std::vector<Matrix>& train_inputs,
                                 const std::vector<Matrix>& heldout_inputs,
                                 const NormalizationStats& stats,
                                 const CouplingTrainingOptions& options) {
  CouplingModel m;
  m.stats = stats;
  m.stats_id = stats.id();
  m.f2_from_f1 = TrainCouplingPredictor(Feature::kF1, Feature::kF2, train_inputs, heldout_inputs,
                                        stats, options);
  m.f1_from_f2 = TrainCouplingPredictor(Feature::kF2, Feature::kF1, train_inputs, heldout_inputs,
                                        stats, options);
  return m;
}

ParameterTrack ApplyCoupling(const ParameterTrack& desired, const CouplingModel& model,
                             CouplingPolicy policy) {
  if (policy == CouplingPolicy::kIndependent) return desired;
  CheckTrackShape(desired);
  if (desired.meta.normalized) Bad("coupling is applied to denormalized tracks");
  if (!desired.meta.stats_id.empty() && desired.meta.stats_id != model.stats_id) {
    Fail(ErrorKind::kFingerprintMismatch, kStage,
         "track belongs to stats " + desired.meta.stats_id +
             " but the coupling model was trained with " + model.stats_id);
  }
  const CouplingPredictor& p = model.For(policy);
  if (p.net.stats_id != model.stats_id) {
    Fail(ErrorKind::kFingerprintMismatch, kStage,
         "coupling predictor was trained with stats " + p.net.stats_id);
  }
  const int t_idx = Index(p.target);
  const Vector pred = PredictCoupled(p, NetInput(Normalize(desired, model.stats)));
  ParameterTrack out = desired;
  out.values.col(t_idx) = pred.array() * model.stats.std[t_idx] + model.stats.mean[t_idx];

  const int f1 = Index(Feature::kF1), f2 = Index(Feature::kF2);
  const double k = 1.0 + kFormantMargin;
  for (int t = 0; t < out.frames(); ++t) {
    if (!out.voicing[t]) continue;
    if (p.target == Feature::kF2) {
      out.values(t, f2) = std::max(out.values(t, f2), k * out.values(t, f1));
    } else {
      out.values(t, f1) = std::min(out.values(t, f1), out.values(t, f2) / k);
    }
  }
  return out;
}

Pipeline::Pipeline(TrainedModel model, Vocoder vocoder, std::optional<CouplingModel> coupling)
    : model_(std::move(model)), vocoder_(std::move(vocoder)), coupling_(std::move(coupling)) {
  const std::string mel_id = model_.mel.fingerprint();
  if (vocoder_.manifest().mel.fingerprint() != mel_id) {
    Fail(ErrorKind::kFingerprintMismatch, "pipeline",
         "vocoder expects mel config " + vocoder_.manifest().mel.fingerprint() +
             " but the checkpoint produces " + mel_id);
  }
  if (model_.net.mel_config_id != mel_id) {
    Fail(ErrorKind::kFingerprintMismatch, "pipeline",
         "network was trained on mel config " + model_.net.mel_config_id);
  }
  if (model_.net.stats_id != model_.stats.id()) {
    Fail(ErrorKind::kFingerprintMismatch, "pipeline",
         "network statistics " + model_.net.stats_id + " differ from the checkpoint's " +
             model_.stats.id());
  }
  if (coupling_ && coupling_->stats_id != model_.stats.id()) {
    Fail(ErrorKind::kFingerprintMismatch, "pipeline",
         "coupling model was trained with stats " + coupling_->stats_id +
             " but the checkpoint uses " + model_.stats.id());
  }
}

ParameterTrack Pipeline::Analyze(const Waveform& wave) const {
  if (wave.sample_rate != model_.mel.sample_rate) {
    Fail(ErrorKind::kInvalidArgument, "analyze",
         "audio is " + std::to_string(wave.sample_rate) + " Hz; the model expects " +
             std::to_string(model_.mel.sample_rate) + " Hz");
  }
  try {
    return ExtractParameters(wave, model_.extraction);
  } catch (const Error& e) {
    Restage(e, "analyze");
  }
}

ParameterTrack Pipeline::Desired(const ParameterTrack& track, const ManipulationSpec& spec) const {
  ParameterTrack desired = BuildDesired(track, spec);
  if (spec.coupling == CouplingPolicy::kIndependent) return desired;
  if (!coupling_) {
    Fail(ErrorKind::kNotFound, kStage,
         std::string(CouplingPolicyName(spec.coupling)) +
             " needs a coupling model (coupling.wbt from training)");
  }
  return ApplyCoupling(desired, *coupling_, spec.coupling);
}

RenderResult Pipeline::Render(const ParameterTrack& desired, uint64_t noise_seed) const {
  RenderResult r;
  ParameterTrack normalized;
  try {
    ValidateTrack(desired);
    normalized = Normalize(desired, model_.stats);
  } catch (const Error& e) {
    Restage(e, "render/normalize");
  }
  try {
    r.mel_pre = Forward(normalized, model_.net);
  } catch (const Error& e) {
    Restage(e, "render/wavebender_net");
  }
  try {
    r.mel = Enhance(r.mel_pre, noise_seed, model_.gan);
  } catch (const Error& e) {
    Restage(e, "render/enhance");
  }
  try {
    r.wave = vocoder_.Synthesize(r.mel);
  } catch (const Error& e) {
    Restage(e, "render/vocoder");
  }
  return r;
}

RenderResult Pipeline::Manipulate(const Waveform& wave, const ManipulationSpec& spec,
                                  uint64_t noise_seed) const {
  return Render(Desired(Analyze(wave), spec), noise_seed);
}

Waveform Pipeline::VocoderOnly(const Waveform& wave) const {
  MelSpectrogram mel;
  try {
    mel = ComputeMel(wave, model_.mel);
  } catch (const Error& e) {
    Restage(e, "vocoder_only/mel");
  }
  try {
    return vocoder_.Synthesize(mel);
  } catch (const Error& e) {
    Restage(e, "vocoder_only/vocoder");
  }
}

}  // namespace wavebender

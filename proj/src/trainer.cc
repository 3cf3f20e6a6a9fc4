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

#include "wavebender/trainer.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

namespace wavebender {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr char kStage[] = "trainer";
constexpr char kCheckpointKind[] = "wavebender-checkpoint";
constexpr char kCheckpointFile[] = "checkpoint.wbt";

[[noreturn]] void Bad(const std::string& msg) { Fail(ErrorKind::kInvalidArgument, kStage, msg); }

TrainingExample MakeExample(const std::string& id, const ParameterTrack& track,
                            const Matrix& log_mel, const NormalizationStats& stats,
                            const MelNormalizer& mel_norm, bool augmented) {
  if (log_mel.rows() != track.frames()) {
    Bad(id + ": feature and mel frame counts differ");
  }
  TrainingExample ex;
  ex.id = id;
  ex.input = NetInput(Normalize(track, stats));
  ex.target = mel_norm.Normalize(log_mel);
  ex.augmented = augmented;
  return ex;
}

// Writes via a temporary file so a crash never leaves a truncated archive.
void AtomicWrite(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  WriteFileBytes(tmp.string(), bytes);
  fs::rename(tmp, path);
}

}  // namespace

void ValidateTrainingConfig(const TrainingConfig& c) {
  if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0)) {
    Bad("split_fraction must be in (0, 1)");
  }
  if (c.pretrain_epochs < 0 || c.joint_epochs < 0) Bad("epochs must be >= 0");
  if (!(c.base_lr > 0.0) || !std::isfinite(c.base_lr)) Bad("base_lr must be positive");
  if (c.batch_size < 1) Bad("batch_size must be >= 1");
  if (c.segment_frames < 1) Bad("segment_frames must be >= 1");
  if (c.keep_checkpoints < 1) Bad("keep_checkpoints must be >= 1");
  if (c.corpus_limit < 0) Bad("corpus_limit must be >= 0");
  if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0 && c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0 &&
        c.adam.eps > 0.0)) {
    Bad("optimizer betas must be in [0, 1) and eps positive");
  }
  ValidatePolicy(c.augmentation);
  ValidateNetConfig(c.net);
  ValidateGanConfig(c.gan);
  ValidateMelConfig(c.mel);
  ValidateFrameConfig(c.extraction.frames);
  if (c.net.in_channels != kNumFeatures + 1) {
    Bad("net.in_channels must be " + std::to_string(kNumFeatures + 1));
  }
  if (c.net.out_channels() != c.mel.n_mels) {
    Bad("the last net width must equal mel.n_mels");
  }
  if (c.extraction.frames.hop != c.mel.hop) {
    Bad("extraction and mel hops differ");
  }
}

json TrainingConfigToJson(const TrainingConfig& c) {
  return {{"corpus_path", c.corpus_path},
          {"corpus_limit", c.corpus_limit},
          {"cache_dir", c.cache_dir},
          {"split_fraction", c.split_fraction},
          {"split_seed", c.split_seed},
          {"seed", c.seed},
          {"pretrain_epochs", c.pretrain_epochs},
          {"joint_epochs", c.joint_epochs},
          {"optimizer", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
          {"base_lr", c.base_lr},
          {"batch_size", c.batch_size},
          {"segment_frames", c.segment_frames},
          {"augment", c.augment},
          {"augmentation", PolicyToJson(c.augmentation)},
          {"keep_checkpoints", c.keep_checkpoints},
          {"device", c.device},
          {"net", NetConfigToJson(c.net)},
          {"gan", GanConfigToJson(c.gan)},
          {"mel", MelConfigToJson(c.mel)},
          {"extraction", ExtractionOptionsToJson(c.extraction)}};
}

TrainingConfig TrainingConfigFromJson(const json& patch) {
  if (!patch.is_object()) Bad("training config must be a JSON object");
  json j = TrainingConfigToJson(TrainingConfig{});
  for (const auto& [key, value] : patch.items()) {
    if (!j.contains(key)) Bad("unknown training config key '" + key + "'");
    if (value.is_null()) Bad("training config key '" + key + "' is null");
  }
  j.merge_patch(patch);
  TrainingConfig c;
  try {
    c.corpus_path = j.at("corpus_path").get<std::string>();
    c.corpus_limit = j.at("corpus_limit").get<int>();
    c.cache_dir = j.at("cache_dir").get<std::string>();
    c.split_fraction = j.at("split_fraction").get<double>();
    c.split_seed = j.at("split_seed").get<uint64_t>();
    c.seed = j.at("seed").get<uint64_t>();
    c.pretrain_epochs = j.at("pretrain_epochs").get<int>();
    c.joint_epochs = j.at("joint_epochs").get<int>();
    const json& opt = j.at("optimizer");
    c.adam.beta1 = opt.at("beta1").get<double>();
    c.adam.beta2 = opt.at("beta2").get<double>();
    c.adam.eps = opt.at("eps").get<double>();
    c.base_lr = j.at("base_lr").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.segment_frames = j.at("segment_frames").get<int>();
    c.augment = j.at("augment").get<bool>();
    c.keep_checkpoints = j.at("keep_checkpoints").get<int>();
    c.device = j.at("device").get<std::string>();
  } catch (const json::exception& e) {
    Bad(std::string("bad training config: ") + e.what());
  }
  c.augmentation = PolicyFromJson(j.at("augmentation"));
  c.net = NetConfigFromJson(j.at("net"));
  c.gan = GanConfigFromJson(j.at("gan"));
  c.mel = MelConfigFromJson(j.at("mel"));
  c.extraction = ExtractionOptionsFromJson(j.at("extraction"));
  ValidateTrainingConfig(c);
  return c;
}

TrainingConfig LoadTrainingConfig(const std::string& path) {
  const json j = json::parse(ReadFileBytes(path), nullptr, false);
  if (j.is_discarded()) Bad(path + " is not valid JSON");
  if (j.is_object() && j.contains("train")) return TrainingConfigFromJson(j.at("train"));
  return TrainingConfigFromJson(j);
}

CorpusSplit SplitCorpus(const std::vector<std::string>& ids, double fraction, uint64_t seed) {
  const long n = static_cast<long>(ids.size());
  if (n < 2) Bad("at least 2 utterances are needed for a train/test split");
  if (!(fraction > 0.0 && fraction < 1.0)) Bad("split fraction must be in (0, 1)");
  if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
    Bad("utterance ids must be unique");
  }
  const long n_train = std::clamp(std::lround(fraction * static_cast<double>(n)), 1L, n - 1);
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0L);
  Rng rng(seed);
  for (long i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.Below(static_cast<uint64_t>(i) + 1)]);
  }
  std::vector<uint8_t> in_train(n, 0);
  for (long i = 0; i < n_train; ++i) in_train[order[i]] = 1;
  CorpusSplit split;
  for (long i = 0; i < n; ++i) (in_train[i] ? split.train : split.test).push_back(ids[i]);
  return split;
}

TrainingData BuildTrainingData(const TrainingConfig& config, const std::vector<Utterance>& train,
                               const std::vector<Utterance>& test) {
  ValidateTrainingConfig(config);
  if (train.empty() || test.empty()) Bad("train and test sets must be non-empty");
  TrainingData data;
  std::vector<ParameterTrack> tracks;
  std::vector<const Matrix*> mels;
  for (const Utterance& u : train) {
    if (u.log_mel.cols() != config.mel.n_mels) {
      Bad(u.id + ": mel has " + std::to_string(u.log_mel.cols()) + " bins");
    }
    tracks.push_back(u.track);
    mels.push_back(&u.log_mel);
    data.train_ids.push_back(u.id);
  }
  data.stats = FitNormalization(tracks);
  data.mel_norm = MelNormalizer::Fit(mels);

  for (const Utterance& u : train) {
    data.train.push_back(MakeExample(u.id, u.track, u.log_mel, data.stats, data.mel_norm, false));
    if (!config.augment) continue;
    const AugmentationDraw draw = DrawForUtterance(config.augmentation, u.id);
    if (!draw.apply) continue;
    const AugmentedExample aug = Augment(u.wave, draw, config.extraction);
    for (const std::string& w : aug.track.meta.warnings) {
      data.warnings.push_back(u.id + ": " + w);
    }
    if (!aug.augmented) continue;
    const Matrix mel = ComputeMel(aug.wave, config.mel).bins;
    data.train.push_back(
        MakeExample(u.id + "#aug", aug.track, mel, data.stats, data.mel_norm, true));
  }
  for (const Utterance& u : test) {
    if (u.log_mel.cols() != config.mel.n_mels) {
      Bad(u.id + ": mel has " + std::to_string(u.log_mel.cols()) + " bins");
    }
    data.validation.push_back(
        MakeExample(u.id, u.track, u.log_mel, data.stats, data.mel_norm, false));
    data.test_ids.push_back(u.id);
  }
  return data;
}

TrainingData PrepareTrainingData(const TrainingConfig& config,
                                 const std::vector<Utterance>& corpus) {
  std::vector<std::string> ids;
  for (const Utterance& u : corpus) ids.push_back(u.id);
  const CorpusSplit split = SplitCorpus(ids, config.split_fraction, config.split_seed);
  const std::set<std::string> train_ids(split.train.begin(), split.train.end());
  std::vector<Utterance> train, test;
  for (const Utterance& u : corpus) (train_ids.count(u.id) ? train : test).push_back(u);
  return BuildTrainingData(config, train, test);
}

std::string_view PhaseName(Phase phase) { return phase == Phase::kPretrain ? "pretrain" : "joint"; }

json StepMetrics::ToJson() const {
  json j = {{"type", "step"}, {"step", step},
            {"epoch", epoch}, {"phase", PhaseName(phase)},
            {"lr", lr},       {"recon_pre", recon_pre}};
  if (phase == Phase::kJoint) {
    j["recon_post"] = recon_post;
    j["d_loss"] = d_loss;
    j["g_loss"] = g_loss;
  }
  j["total"] = total;
  return j;
}

bool CollapseMonitor::Update(double d_loss) {
  run_ = d_loss < floor_ ? run_ + 1 : 0;
  return run_ == patience_;
}

Trainer::Trainer(TrainingConfig config, const TrainingData& data)
    : config_(std::move(config)),
      data_(&data),
      net_model_(config_.net),
      gen_model_(config_.gan),
      disc_model_(config_.gan),
      net_opt_(config_.adam),
      gen_opt_(config_.adam),
      disc_opt_(config_.adam) {
  ValidateTrainingConfig(config_);
  if (data.train.empty()) Bad("no training examples");
  if (data.mel_norm.mean.size() != config_.mel.n_mels) {
    Bad("mel normalizer does not match mel.n_mels");
  }
  net_ = InitNetwork(config_.net, MixSeed(config_.seed, "net"));
  net_.mel_norm = data.mel_norm;
  net_.stats_id = data.stats.id();
  net_.mel_config_id = config_.mel.fingerprint();
  gan_ = InitGan(config_.gan, config_.mel.n_mels, MixSeed(config_.seed, "gan"));
  gan_.mel_norm = data.mel_norm;
}

Trainer Trainer::FromCheckpoint(const nn::TensorArchive& a, const TrainingData& data) {
  if (a.meta.value("kind", "") != kCheckpointKind) {
    Bad("archive is not a training checkpoint");
  }
  Trainer t(TrainingConfigFromJson(a.meta.at("config")), data);
  const NormalizationStats stats = ParseStats(a.meta.at("stats").get<std::string>());
  if (stats.id() != data.stats.id()) {
    Fail(ErrorKind::kFingerprintMismatch, kStage,
         "checkpoint statistics " + stats.id() + " differ from the data's " + data.stats.id());
  }
  const json& d = a.meta.at("data");
  if (d.at("train_ids").get<std::vector<std::string>>() != data.train_ids ||
      d.at("train_examples").get<size_t>() != data.train.size()) {
    Fail(ErrorKind::kFingerprintMismatch, kStage,
         "checkpoint was trained on a different training set");
  }
  t.net_ = ImportNetwork(a, "net/");
  if (t.net_.mel_norm.id() != data.mel_norm.id()) {
    Fail(ErrorKind::kFingerprintMismatch, kStage, "mel normalizer mismatch");
  }
  t.gan_ = ImportGan(a, "gan/");
  t.net_opt_.Import("adam/net/", a.tensors, a.meta);
  t.gen_opt_.Import("adam/gen/", a.tensors, a.meta);
  t.disc_opt_.Import("adam/disc/", a.tensors, a.meta);
  t.step_ = a.meta.at("step").get<long>();
  for (const json& r : a.meta.at("history")) t.history_.push_back(r);
  t.warnings_ = a.meta.at("warnings").get<std::vector<std::string>>();
  t.collapse_.set_run(a.meta.at("collapse_run").get<long>());
  const json& best = a.meta.at("best");
  t.has_best_ = best.at("has").get<bool>();
  t.best_value_ = best.at("value").get<double>();
  t.best_phase_ = best.at("phase").get<std::string>() == "joint" ? Phase::kJoint : Phase::kPretrain;
  return t;
}

long Trainer::steps_per_epoch() const {
  const long n = static_cast<long>(data_->train.size());
  return (n + config_.batch_size - 1) / config_.batch_size;
}

long Trainer::total_steps() const {
  return static_cast<long>(config_.pretrain_epochs + config_.joint_epochs) * steps_per_epoch();
}

Phase Trainer::PhaseAt(long step) const {
  return step < config_.pretrain_epochs * steps_per_epoch() ? Phase::kPretrain : Phase::kJoint;
}

std::vector<Trainer::Crop> Trainer::BatchAt(long step) const {
  const long spe = steps_per_epoch();
  const long epoch = step / spe;
  const long pos = step % spe;
  const size_t n = data_->train.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng shuffle(MixSeed(MixSeed(config_.seed, "shuffle"), static_cast<uint64_t>(epoch)));
  for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.Below(i + 1)]);

  const size_t begin = static_cast<size_t>(pos) * config_.batch_size;
  const size_t end = std::min(n, begin + config_.batch_size);
  const uint64_t crop_seed = MixSeed(MixSeed(config_.seed, "crop"), static_cast<uint64_t>(step));
  std::vector<Crop> batch;
  for (size_t k = begin; k < end; ++k) {
    const TrainingExample& ex = data_->train[order[k]];
    const long frames = ex.input.cols();
    const long len = std::min<long>(frames, config_.segment_frames);
    long start = 0;
    if (frames > len) {
      Rng rng(MixSeed(crop_seed, static_cast<uint64_t>(k - begin)));
      start = static_cast<long>(rng.Below(static_cast<uint64_t>(frames - len + 1)));
    }
    batch.push_back({&ex, ex.input.middleCols(start, len), ex.target.middleRows(start, len)});
  }
  return batch;
}

StepMetrics Trainer::Step() { return Step(PhaseAt(step_)); }

StepMetrics Trainer::Step(Phase phase) {
  const std::vector<Crop> batch = BatchAt(step_);
  const double lr = nn::CosineLearningRate(config_.base_lr, step_, total_steps());
  StepMetrics m = phase == Phase::kPretrain ? PretrainStep(batch, lr) : JointStep(batch, lr, step_);
  m.step = step_;
  m.epoch = static_cast<int>(step_ / steps_per_epoch()) + 1;
  m.phase = phase;
  m.lr = lr;
  history_.push_back(m.ToJson());
  ++step_;
  return m;
}

StepMetrics Trainer::PretrainStep(const std::vector<Crop>& batch, double lr) {
  const double inv = 1.0 / static_cast<double>(batch.size());
  net_.params.ZeroGrad();
  double loss = 0.0;
  for (const Crop& c : batch) {
    WavebenderNet::Tape tape;
    const Matrix pre = net_model_.Forward(net_.params, c.input, &tape).transpose();
    Matrix grad;
    const double l = XSigmoidLoss(pre, c.target, &grad);
    if (!std::isfinite(l)) FailNonFinite(batch, "regression loss");
    loss += inv * l;
    net_model_.Backward(net_.params, tape, (inv * grad).transpose());
  }
  net_opt_.Step(net_.params, lr);
  if (!net_.params.AllFinite()) FailNonFinite(batch, "network update");
  StepMetrics m;
  m.recon_pre = loss;
  m.total = loss;
  return m;
}

StepMetrics Trainer::JointStep(const std::vector<Crop>& batch, double lr, long step) {
  const GanConfig& g = config_.gan;
  const double inv = 1.0 / static_cast<double>(batch.size());
  const double a = g.lsgan_real_label, b = g.lsgan_fake_label;
  const uint64_t noise_seed = MixSeed(MixSeed(config_.seed, "noise"), static_cast<uint64_t>(step));

  struct Slot {
    WavebenderNet::Tape net_tape;
    Generator::Tape gen_tape;
    Matrix pre, post;
  };
  std::vector<Slot> slots(batch.size());
  for (size_t k = 0; k < batch.size(); ++k) {
    Slot& s = slots[k];
    s.pre = net_model_.Forward(net_.params, batch[k].input, &s.net_tape).transpose();
    const Matrix noisy = AddNoise(s.pre, g.noise_std, MixSeed(noise_seed, k));
    s.post = gen_model_.Forward(gan_.generator, noisy, &s.gen_tape);
  }

  // Discriminator step on real targets and detached generator outputs.
  gan_.discriminator.ZeroGrad();
  StepMetrics m;
  for (size_t k = 0; k < batch.size(); ++k) {
    Discriminator::Tape real_tape, fake_tape;
    const Matrix real = disc_model_.Forward(gan_.discriminator, batch[k].target, &real_tape);
    const Matrix fake = disc_model_.Forward(gan_.discriminator, slots[k].post, &fake_tape);
    const LsganLosses losses = ComputeLsganLosses(real, fake, a, b);
    if (!std::isfinite(losses.d_loss)) FailNonFinite(batch, "discriminator loss");
    m.d_loss += inv * losses.d_loss;
    const LsganGradients grads = LsganLossGradients(real, fake, a, b);
    disc_model_.Backward(gan_.discriminator, real_tape, inv * grads.d_real);
    disc_model_.Backward(gan_.discriminator, fake_tape, inv * grads.d_fake);
  }
  disc_opt_.Step(gan_.discriminator, lr);

  // Generator and network step against the updated discriminator.
  net_.params.ZeroGrad();
  gan_.generator.ZeroGrad();
  for (size_t k = 0; k < batch.size(); ++k) {
    Slot& s = slots[k];
    Matrix dpost = Matrix::Zero(s.post.rows(), s.post.cols());
    if (g.adversarial_weight != 0.0) {
      Discriminator::Tape tape;
      const Matrix fake = disc_model_.Forward(gan_.discriminator, s.post, &tape);
      const double n = static_cast<double>(fake.size());
      m.g_loss += inv * 0.5 * (fake.array() - a).square().sum() / n;
      const Matrix dscore = (fake.array() - a).matrix() / n;
      dpost +=
          disc_model_.Backward(gan_.discriminator, tape, (inv * g.adversarial_weight) * dscore);
    }
    Matrix grad_post, grad_pre;
    const double lpost = XSigmoidLoss(s.post, batch[k].target, &grad_post);
    const double lpre = XSigmoidLoss(s.pre, batch[k].target, &grad_pre);
    if (!std::isfinite(lpost) || !std::isfinite(lpre)) {
      FailNonFinite(batch, "reconstruction loss");
    }
    m.recon_post += inv * lpost;
    m.recon_pre += inv * lpre;
    dpost += (inv * g.recon_weight_post) * grad_post;
    Matrix dpre = gen_model_.Backward(gan_.generator, s.gen_tape, dpost);
    dpre += (inv * g.recon_weight_pre) * grad_pre;
    net_model_.Backward(net_.params, s.net_tape, dpre.transpose());
  }
  // Gradients reaching the discriminator in this pass are not applied.
  gan_.discriminator.ZeroGrad();
  if (!std::isfinite(m.g_loss)) FailNonFinite(batch, "generator loss");
  gen_opt_.Step(gan_.generator, lr);
  net_opt_.Step(net_.params, lr);
  if (!net_.params.AllFinite() || !gan_.generator.AllFinite() || !gan_.discriminator.AllFinite()) {
    FailNonFinite(batch, "parameter update");
  }
  m.total = g.recon_weight_pre * m.recon_pre + g.recon_weight_post * m.recon_post +
            g.adversarial_weight * m.g_loss;

  if (collapse_.Update(m.d_loss)) {
    const std::string w =
        "discriminator loss below 1e-4 for 500 consecutive steps "
        "(step " +
        std::to_string(step) +
        "); the discriminator "
        "may have collapsed";
    warnings_.push_back(w);
    std::cerr << "warning: " << w << "\n";
  }
  return m;
}

void Trainer::FailNonFinite(const std::vector<Crop>& batch, const std::string& what) const {
  std::string ids;
  for (const Crop& c : batch) ids += (ids.empty() ? "" : ",") + c.example->id;
  std::string where;
  if (!dump_dir_.empty()) {
    nn::TensorArchive dump;
    dump.meta["step"] = step_;
    dump.meta["what"] = what;
    dump.meta["ids"] = ids;
    for (size_t k = 0; k < batch.size(); ++k) {
      dump.tensors["input/" + std::to_string(k)] = batch[k].input;
      dump.tensors["target/" + std::to_string(k)] = batch[k].target;
    }
    const fs::path path = fs::path(dump_dir_) / ("nonfinite_step" + std::to_string(step_) + ".wbt");
    dump.Save(path.string());
    where = "; batch dumped to " + path.string();
  }
  Fail(ErrorKind::kNumerical, kStage,
       "non-finite " + what + " at step " + std::to_string(step_) + " (batch " + ids + ")" + where);
}

ValidationMetrics Trainer::Validate() const {
  ValidationMetrics v;
  const auto& val = data_->validation;
  if (val.empty()) return v;
  const uint64_t seed = MixSeed(config_.seed, "validation");
  for (size_t i = 0; i < val.size(); ++i) {
    const Matrix pre = net_model_.Forward(net_.params, val[i].input).transpose();
    v.recon_pre += XSigmoidLoss(pre, val[i].target);
    const Matrix noisy = AddNoise(pre, config_.gan.noise_std, MixSeed(seed, i));
    v.recon_post += XSigmoidLoss(gen_model_.Forward(gan_.generator, noisy), val[i].target);
  }
  v.recon_pre /= static_cast<double>(val.size());
  v.recon_post /= static_cast<double>(val.size());
  return v;
}

json Trainer::EndEpoch(const std::string& out_dir, bool verbose) {
  const long spe = steps_per_epoch();
  const int epoch = static_cast<int>(step_ / spe);
  const Phase phase = PhaseAt(step_ - 1);
  const ValidationMetrics v = Validate();
  double train_pre = 0.0, train_post = 0.0;
  int count = 0;
  for (auto it = history_.rbegin(); it != history_.rend(); ++it) {
    if (it->at("type") != "step" || it->at("epoch") != epoch) break;
    train_pre += it->at("recon_pre").get<double>();
    if (it->contains("recon_post")) train_post += it->at("recon_post").get<double>();
    ++count;
  }
  const double metric = phase == Phase::kPretrain ? v.recon_pre : v.recon_post;
  // Model selection restarts with the joint phase.
  const bool improved = !has_best_ || best_phase_ != phase || metric < best_value_;
  if (improved) {
    has_best_ = true;
    best_value_ = metric;
    best_phase_ = phase;
  }
  json rec = {{"type", "epoch"},
              {"epoch", epoch},
              {"step", step_},
              {"phase", PhaseName(phase)},
              {"train_recon_pre", count ? train_pre / count : 0.0}};
  if (phase == Phase::kJoint) rec["train_recon_post"] = count ? train_post / count : 0.0;
  rec["val_recon_pre"] = v.recon_pre;
  rec["val_recon_post"] = v.recon_post;
  rec["best"] = improved;
  history_.push_back(rec);
  if (!out_dir.empty()) SaveCheckpoint(out_dir, improved);
  if (verbose) {
    std::cerr << "epoch " << epoch << "/" << config_.pretrain_epochs + config_.joint_epochs << " ("
              << PhaseName(phase) << ") step " << step_ << " train "
              << rec["train_recon_pre"].get<double>() << " val pre " << v.recon_pre << " post "
              << v.recon_post << (improved ? " *" : "") << "\n";
  }
  return rec;
}

nn::TensorArchive Trainer::ToArchive() const {
  nn::TensorArchive a;
  a.meta["kind"] = kCheckpointKind;
  a.meta["version"] = 1;
  a.meta["step"] = step_;
  a.meta["config"] = TrainingConfigToJson(config_);
  a.meta["stats"] = FormatStats(data_->stats);
  a.meta["history"] = history_;
  a.meta["warnings"] = warnings_;
  a.meta["collapse_run"] = collapse_.run();
  a.meta["best"] = {{"has", has_best_}, {"value", best_value_}, {"phase", PhaseName(best_phase_)}};
  a.meta["data"] = {{"train_ids", data_->train_ids},
                    {"test_ids", data_->test_ids},
                    {"train_examples", data_->train.size()}};
  ExportNetwork(net_, "net/", a);
  ExportGan(gan_, "gan/", a);
  net_opt_.Export("adam/net/", a.tensors, a.meta);
  gen_opt_.Export("adam/gen/", a.tensors, a.meta);
  disc_opt_.Export("adam/disc/", a.tensors, a.meta);
  return a;
}

void Trainer::SaveCheckpoint(const std::string& out_dir, bool also_best) const {
  const std::string bytes = ToArchive().Encode();
  const fs::path root(out_dir);
  const fs::path dir = root / "ckpt" / std::to_string(step_);
  fs::create_directories(dir);
  AtomicWrite(dir / kCheckpointFile, bytes);
  if (also_best) {
    fs::create_directories(root / "best");
    AtomicWrite(root / "best" / kCheckpointFile, bytes);
  }
  std::vector<long> steps;
  for (const auto& e : fs::directory_iterator(root / "ckpt")) {
    const std::string name = e.path().filename().string();
    if (e.is_directory() && !name.empty() &&
        std::all_of(name.begin(), name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      steps.push_back(std::stol(name));
    }
  }
  std::sort(steps.begin(), steps.end());
  const long excess = static_cast<long>(steps.size()) - config_.keep_checkpoints;
  for (long i = 0; i < excess; ++i) fs::remove_all(root / "ckpt" / std::to_string(steps[i]));
}

void Trainer::Run(const std::string& out_dir, long max_steps, bool verbose) {
  if (out_dir.empty()) Bad("output directory is required");
  fs::create_directories(out_dir);
  if (dump_dir_.empty()) dump_dir_ = out_dir;
  // Rewritten from the restored history so resumed runs match fresh ones.
  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl", std::ios::trunc);
  if (!metrics) Fail(ErrorKind::kIo, kStage, "cannot write metrics under " + out_dir);
  for (const json& r : history_) metrics << r.dump() << "\n";
  metrics.flush();

  const long spe = steps_per_epoch();
  long done = 0;
  while (step_ < total_steps() && (max_steps < 0 || done < max_steps)) {
    Step();
    metrics << history_.back().dump() << "\n";
    ++done;
    if (step_ % spe == 0) metrics << EndEpoch(out_dir, verbose).dump() << "\n";
    metrics.flush();
  }
  // Mid-epoch stops still leave a resumable checkpoint.
  if (step_ % spe != 0 || step_ == 0) SaveCheckpoint(out_dir, false);
}

namespace {

TrainedModel ModelFromArchive(const nn::TensorArchive& a, std::string digest) {
  if (a.meta.value("kind", "") != kCheckpointKind) {
    Bad("archive is not a training checkpoint");
  }
  TrainedModel m;
  const TrainingConfig config = TrainingConfigFromJson(a.meta.at("config"));
  m.net = ImportNetwork(a, "net/");
  m.gan = ImportGan(a, "gan/");
  m.stats = ParseStats(a.meta.at("stats").get<std::string>());
  m.mel = config.mel;
  m.extraction = config.extraction;
  m.step = a.meta.at("step").get<long>();
  if (m.net.stats_id != m.stats.id()) {
    Fail(ErrorKind::kFingerprintMismatch, kStage, "network and checkpoint statistics disagree");
  }
  if (m.net.mel_config_id != m.mel.fingerprint()) {
    Fail(ErrorKind::kFingerprintMismatch, kStage, "network and mel config disagree");
  }
  m.digest = std::move(digest);
  return m;
}

}  // namespace

TrainedModel TrainedModelFromArchive(const nn::TensorArchive& a) {
  return ModelFromArchive(a, Sha256Hex(a.Encode()));
}

TrainedModel LoadTrainedModel(const std::string& path) {
  fs::path p(path);
  if (fs::is_directory(p)) p /= kCheckpointFile;
  if (!fs::exists(p)) Fail(ErrorKind::kNotFound, kStage, "no checkpoint at " + p.string());
  const std::string bytes = ReadFileBytes(p.string());
  return ModelFromArchive(nn::TensorArchive::Decode(bytes), Sha256Hex(bytes));
}

}  // namespace wavebender

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

// Two-phase training: the regression network alone, then the network,
// generator and discriminator end to end. Checkpoints live under
// `<out>/ckpt/<step>/checkpoint.wbt` and `<out>/best/checkpoint.wbt`, with
// per-step and per-epoch records appended to `<out>/metrics.jsonl`.

#ifndef WAVEBENDER_TRAINER_H_
#define WAVEBENDER_TRAINER_H_

#include <json.hpp>
#include <string>
#include <vector>

#include "wavebender/augmentation.h"
#include "wavebender/corpus.h"
#include "wavebender/enhancement_gan.h"
#include "wavebender/features.h"
#include "wavebender/mel.h"
#include "wavebender/nn.h"
#include "wavebender/wavebender_net.h"

namespace wavebender {

struct TrainingConfig {
  std::string corpus_path;
  int corpus_limit = 0;  // 0 reads the whole index
  std::string cache_dir;
  double split_fraction = 0.95;
  uint64_t split_seed = 0;
  // Initialization, shuffling, crops and generator noise.
  uint64_t seed = 0;
  int pretrain_epochs = 20;
  int joint_epochs = 10;
  nn::AdamConfig adam;
  double base_lr = 2e-4;
  int batch_size = 4;
  int segment_frames = 192;
  bool augment = true;
  AugmentationPolicy augmentation;
  int keep_checkpoints = 2;
  std::string device = "cpu";  // informational
  WavebenderNetConfig net;
  GanConfig gan;
  MelConfig mel;
  ExtractionOptions extraction;
};

void ValidateTrainingConfig(const TrainingConfig& config);
nlohmann::json TrainingConfigToJson(const TrainingConfig& config);
// Missing keys keep their defaults.
TrainingConfig TrainingConfigFromJson(const nlohmann::json& j);
// Reads a JSON config file; a top-level "train" object is used if present.
TrainingConfig LoadTrainingConfig(const std::string& path);

struct CorpusSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

// Seeded random split with |train| = round(fraction * N), kept within
// [1, N - 1] so both sides are non-empty. Each side keeps the input order.
CorpusSplit SplitCorpus(const std::vector<std::string>& ids, double fraction, uint64_t seed);

struct TrainingExample {
  std::string id;
  Matrix input;   // in_channels x T
  Matrix target;  // T x n_mels, normalized
  bool augmented = false;
};

struct TrainingData {
  NormalizationStats stats;
  MelNormalizer mel_norm;
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> validation;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::vector<std::string> warnings;
};

// Fits feature and mel statistics on `train` originals only, adds one
// augmented copy per utterance whose draw fires, and normalizes everything.
TrainingData BuildTrainingData(const TrainingConfig& config, const std::vector<Utterance>& train,
                               const std::vector<Utterance>& test);
// Splits `corpus` with the configured fraction and seed, then builds.
TrainingData PrepareTrainingData(const TrainingConfig& config,
                                 const std::vector<Utterance>& corpus);

enum class Phase { kPretrain, kJoint };
std::string_view PhaseName(Phase phase);

struct StepMetrics {
  long step = 0;
  int epoch = 0;
  Phase phase = Phase::kPretrain;
  double lr = 0.0;
  double recon_pre = 0.0;
  // Joint phase only.
  double recon_post = 0.0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double total = 0.0;

  nlohmann::json ToJson() const;
};

struct ValidationMetrics {
  double recon_pre = 0.0;
  double recon_post = 0.0;
};

// Flags a discriminator whose loss stays below `floor` for `patience`
// consecutive steps.
class CollapseMonitor {
 public:
  CollapseMonitor(double floor = 1e-4, long patience = 500) : floor_(floor), patience_(patience) {}

  // True exactly once per run of low losses, when it reaches `patience`.
  bool Update(double d_loss);
  long run() const { return run_; }
  void set_run(long run) { run_ = run; }

 private:
  double floor_;
  long patience_;
  long run_ = 0;
};

class Trainer {
 public:
  // Fresh weights derived from config.seed. `data` must outlive the trainer.
  Trainer(TrainingConfig config, const TrainingData& data);
  // Restores everything needed to continue bit-exactly. The data must have
  // the statistics the checkpoint was trained with.
  static Trainer FromCheckpoint(const nn::TensorArchive& archive, const TrainingData& data);

  long steps_per_epoch() const;
  long total_steps() const;
  long step() const { return step_; }
  Phase PhaseAt(long step) const;

  // One optimizer step on the batch scheduled for the current step.
  StepMetrics Step();
  // Same, with the phase forced.
  StepMetrics Step(Phase phase);
  // Full-length validation loss; generator noise uses fixed seeds.
  ValidationMetrics Validate() const;

  // Runs to the end of the schedule, or for at most `max_steps` more steps,
  // writing metrics and checkpoints under `out_dir`.
  void Run(const std::string& out_dir, long max_steps = -1, bool verbose = false);

  nn::TensorArchive ToArchive() const;

  const TrainingConfig& config() const { return config_; }
  const NetworkWeights& net() const { return net_; }
  const GanWeights& gan() const { return gan_; }
  // Step and epoch records in order.
  const std::vector<nlohmann::json>& history() const { return history_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  // Directory for non-finite batch dumps; empty disables dumping.
  void set_dump_dir(std::string dir) { dump_dir_ = std::move(dir); }

 private:
  struct Crop {
    const TrainingExample* example;
    Matrix input, target;
  };
  std::vector<Crop> BatchAt(long step) const;
  StepMetrics PretrainStep(const std::vector<Crop>& batch, double lr);
  StepMetrics JointStep(const std::vector<Crop>& batch, double lr, long step);
  [[noreturn]] void FailNonFinite(const std::vector<Crop>& batch, const std::string& what) const;
  // Validates, records the epoch and writes checkpoints; returns the record.
  nlohmann::json EndEpoch(const std::string& out_dir, bool verbose);
  void SaveCheckpoint(const std::string& out_dir, bool also_best) const;

  TrainingConfig config_;
  const TrainingData* data_;
  WavebenderNet net_model_;
  Generator gen_model_;
  Discriminator disc_model_;
  NetworkWeights net_;
  GanWeights gan_;
  nn::Adam net_opt_, gen_opt_, disc_opt_;
  long step_ = 0;
  std::vector<nlohmann::json> history_;
  std::vector<std::string> warnings_;
  CollapseMonitor collapse_;
  double best_value_ = 0.0;
  bool has_best_ = false;
  Phase best_phase_ = Phase::kPretrain;
  std::string dump_dir_;
};

// Everything inference needs from a checkpoint.
struct TrainedModel {
  NetworkWeights net;
  GanWeights gan;
  NormalizationStats stats;
  MelConfig mel;
  ExtractionOptions extraction;
  long step = 0;
  // SHA-256 of the encoded checkpoint.
  std::string digest;

  std::string fingerprint() const { return digest.substr(0, 16); }
};

TrainedModel TrainedModelFromArchive(const nn::TensorArchive& archive);
// Accepts a checkpoint file or a directory holding checkpoint.wbt.
TrainedModel LoadTrainedModel(const std::string& path);

}  // namespace wavebender

#endif  // WAVEBENDER_TRAINER_H_

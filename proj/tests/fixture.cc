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

#include "fixture.h"

#include <algorithm>

#include "test_support.h"
#include "wavebender/synth.h"
#include "wavebender/vocoder.h"

namespace wavebender::testing {

TrainingConfig TinyTrainingConfig() {
  TrainingConfig c;
  c.net.widths = {32, 80};
  c.net.groups = 4;
  c.net.kernel_size = 3;
  c.net.long_skips = {{1, 2}};
  c.gan.gen_layers = 2;
  c.gan.disc_layers = 3;
  c.gan.channels = 8;
  c.pretrain_epochs = 6;
  c.joint_epochs = 2;
  c.batch_size = 2;
  c.segment_frames = 64;
  c.base_lr = 2e-3;
  c.augment = false;
  c.split_fraction = 0.67;
  c.seed = 17;
  return c;
}

Pipeline TinyFixture::MakePipeline() const {
  return Pipeline(model, LoadVocoder(bundle_dir, model.mel), coupling);
}

std::vector<const Utterance*> TinyFixture::TestUtterances() const {
  std::vector<const Utterance*> out;
  for (const Utterance& u : corpus) {
    if (std::find(data.test_ids.begin(), data.test_ids.end(), u.id) != data.test_ids.end()) {
      out.push_back(&u);
    }
  }
  return out;
}

const TinyFixture& Fixture() {
  static TempDir dir("fixture");
  static const TinyFixture fixture = [] {
    TinyFixture f;
    f.root = dir.path().string();
    const TrainingConfig c = TinyTrainingConfig();
    for (uint64_t s = 1; s <= 6; ++s) {
      f.corpus.push_back(
          PrepareUtterance("utt" + std::to_string(s), RandomUtterance(s, {}), c.extraction, c.mel));
    }
    f.data = PrepareTrainingData(c, f.corpus);
    Trainer trainer(c, f.data);
    while (trainer.step() < trainer.total_steps()) trainer.Step();
    const nn::TensorArchive archive = trainer.ToArchive();
    f.checkpoint = dir.file("model/checkpoint.wbt");
    WriteFileBytes(f.checkpoint, archive.Encode());
    f.model = LoadTrainedModel(f.checkpoint);

    std::vector<Matrix> train, heldout;
    for (const TrainingExample& e : f.data.train) train.push_back(e.input);
    for (const TrainingExample& e : f.data.validation) heldout.push_back(e.input);
    CouplingTrainingOptions co;
    co.widths = {16, 16, 1};
    co.groups = 4;
    co.epochs = 40;
    co.segment_frames = 128;
    co.base_lr = 3e-3;
    f.coupling = TrainCouplingModel(train, heldout, f.data.stats, co);
    f.coupling_path = dir.file("model/coupling.wbt");
    f.coupling.Save(f.coupling_path);

    f.bundle_dir = dir.file("vocoder");
    WriteGriffinLimBundle(f.bundle_dir, c.mel);
    return f;
  }();
  return fixture;
}

}  // namespace wavebender::testing

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

// A tiny trained model, coupling model and vocoder bundle shared by the
// pipeline-level tests. Built once per process.

#ifndef WAVEBENDER_TESTS_FIXTURE_H_
#define WAVEBENDER_TESTS_FIXTURE_H_

#include <string>
#include <vector>

#include "wavebender/corpus.h"
#include "wavebender/manipulation.h"
#include "wavebender/trainer.h"

namespace wavebender::testing {

TrainingConfig TinyTrainingConfig();

struct TinyFixture {
  std::vector<Utterance> corpus;
  TrainingData data;
  TrainedModel model;
  CouplingModel coupling;
  std::string root;        // scratch directory owned by the fixture
  std::string bundle_dir;  // Griffin-Lim bundle
  std::string checkpoint;  // model archive on disk
  std::string coupling_path;

  Pipeline MakePipeline() const;
  // Test-split utterances.
  std::vector<const Utterance*> TestUtterances() const;
};

const TinyFixture& Fixture();

}  // namespace wavebender::testing

#endif  // WAVEBENDER_TESTS_FIXTURE_H_

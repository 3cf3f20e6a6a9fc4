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

// Corpus access in the LJ Speech layout: `metadata.csv` with
// `id|text|normalized text` lines and audio in `wavs/<id>.wav`.

#ifndef WAVEBENDER_CORPUS_H_
#define WAVEBENDER_CORPUS_H_

#include <string>
#include <vector>

#include "wavebender/audio.h"
#include "wavebender/features.h"
#include "wavebender/mel.h"

namespace wavebender {

struct CorpusEntry {
  std::string id;
  std::string text;
  std::string wav_path;
};

// Reads metadata.csv; `limit` > 0 keeps the first `limit` entries.
std::vector<CorpusEntry> ReadCorpusIndex(const std::string& root, int limit = 0);

// Writes `count` synthetic utterances in the same layout.
void WriteSyntheticCorpus(const std::string& root, int count, uint64_t seed);

// Features and log-mel with identical frame counts.
struct Utterance {
  std::string id;
  Waveform wave;
  ParameterTrack track;  // raw units
  Matrix log_mel;        // T x n_mels
};

Utterance PrepareUtterance(const std::string& id, Waveform wave,
                           const ExtractionOptions& extraction, const MelConfig& mel_config);

// Loads and prepares corpus entries. With a non-empty `cache_dir`, features
// and mels are stored per utterance keyed by audio content and configs.
std::vector<Utterance> LoadCorpus(const std::vector<CorpusEntry>& entries,
                                  const ExtractionOptions& extraction, const MelConfig& mel_config,
                                  const std::string& cache_dir = "");

}  // namespace wavebender

#endif  // WAVEBENDER_CORPUS_H_

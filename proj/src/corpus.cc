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

#include "wavebender/corpus.h"

#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "wavebender/nn.h"
#include "wavebender/synth.h"

namespace wavebender {
namespace {

namespace fs = std::filesystem;
constexpr char kStage[] = "corpus";

std::string Trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

std::string CacheKey(const std::string& wav_bytes, const ExtractionOptions& e,
                     const MelConfig& mel) {
  const nlohmann::json j = {{"audio", Sha256Hex(wav_bytes)},
                            {"mel", mel.fingerprint()},
                            {"frame", e.frames.frame_length},
                            {"hop", e.frames.hop},
                            {"f0", {FormatDouble(e.f0_min_hz), FormatDouble(e.f0_max_hz)}},
                            {"voicing", FormatDouble(e.voicing_threshold)},
                            {"pre_emphasis", FormatDouble(e.pre_emphasis)},
                            {"bandwidth", FormatDouble(e.max_formant_bandwidth_hz)},
                            {"fallback", FormatDouble(e.unvoiced_log_f0_fallback)}};
  return Fingerprint(j.dump());
}

nn::TensorArchive ToArchive(const Utterance& u, const std::string& key) {
  nn::TensorArchive a;
  a.meta["key"] = key;
  a.meta["id"] = u.id;
  a.meta["track"] = nlohmann::json::parse(FormatTrackMetadata(u.track.meta));
  a.tensors["values"] = u.track.values;
  Matrix voicing(u.track.frames(), 1);
  for (int t = 0; t < u.track.frames(); ++t) voicing(t, 0) = u.track.voicing[t];
  a.tensors["voicing"] = voicing;
  a.tensors["log_mel"] = u.log_mel;
  return a;
}

}  // namespace

std::vector<CorpusEntry> ReadCorpusIndex(const std::string& root, int limit) {
  const fs::path meta = fs::path(root) / "metadata.csv";
  if (!fs::exists(meta)) {
    Fail(ErrorKind::kNotFound, kStage,
         "no metadata.csv under " + root +
             " (expected LJ Speech layout; `wavebender make-corpus` writes a synthetic one)");
  }
  std::istringstream in(ReadFileBytes(meta.string()));
  std::vector<CorpusEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = Trim(line);
    if (line.empty()) continue;
    const size_t bar = line.find('|');
    CorpusEntry e;
    e.id = line.substr(0, bar);
    if (e.id.empty()) {
      Fail(ErrorKind::kInvalidArgument, kStage,
           "metadata.csv line " + std::to_string(line_no) + " has no id");
    }
    if (bar != std::string::npos) {
      const std::string rest = line.substr(bar + 1);
      e.text = rest.substr(0, rest.find('|'));
    }
    e.wav_path = (fs::path(root) / "wavs" / (e.id + ".wav")).string();
    entries.push_back(std::move(e));
    if (limit > 0 && static_cast<int>(entries.size()) >= limit) break;
  }
  if (entries.empty()) Fail(ErrorKind::kInvalidArgument, kStage, "corpus is empty");
  return entries;
}

void WriteSyntheticCorpus(const std::string& root, int count, uint64_t seed) {
  if (count < 1) Fail(ErrorKind::kInvalidArgument, kStage, "count must be positive");
  std::string index;
  for (int i = 1; i <= count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "SYN%03d-%04d", 1 + (i - 1) / 1000, i);
    const Waveform w = RandomUtterance(MixSeed(seed, static_cast<uint64_t>(i)), {});
    WriteWav((fs::path(root) / "wavs" / (std::string(id) + ".wav")).string(), w);
    const std::string text = "synthetic utterance " + std::to_string(i);
    index += std::string(id) + "|" + text + "|" + text + "\n";
  }
  WriteFileBytes((fs::path(root) / "metadata.csv").string(), index);
}

Utterance PrepareUtterance(const std::string& id, Waveform wave,
                           const ExtractionOptions& extraction, const MelConfig& mel_config) {
  if (wave.sample_rate != mel_config.sample_rate) {
    Fail(ErrorKind::kInvalidArgument, kStage,
         id + ": sample rate " + std::to_string(wave.sample_rate) +
             " Hz does not match the mel config (" + std::to_string(mel_config.sample_rate) +
             " Hz)");
  }
  if (extraction.frames.hop != mel_config.hop) {
    Fail(ErrorKind::kInvalidArgument, kStage, "feature and mel hops differ");
  }
  Utterance u;
  u.id = id;
  u.track = ExtractParameters(wave, extraction);
  u.log_mel = ComputeMel(wave, mel_config).bins;
  if (u.log_mel.rows() != u.track.frames()) {
    Fail(ErrorKind::kInvalidArgument, kStage,
         id + ": feature and mel frame counts differ (" + std::to_string(u.track.frames()) +
             " vs " + std::to_string(u.log_mel.rows()) + ")");
  }
  u.wave = std::move(wave);
  return u;
}

std::vector<Utterance> LoadCorpus(const std::vector<CorpusEntry>& entries,
                                  const ExtractionOptions& extraction, const MelConfig& mel_config,
                                  const std::string& cache_dir) {
  std::vector<Utterance> out;
  out.reserve(entries.size());
  for (const CorpusEntry& e : entries) {
    const std::string bytes = ReadFileBytes(e.wav_path);
    Waveform wave;
    try {
      wave = DecodeWav(bytes);
    } catch (const Error& err) {
      Restage(err, kStage + std::string("/") + e.id);
    }
    if (cache_dir.empty()) {
      out.push_back(PrepareUtterance(e.id, std::move(wave), extraction, mel_config));
      continue;
    }
    const std::string key = CacheKey(bytes, extraction, mel_config);
    const fs::path path = fs::path(cache_dir) / (e.id + ".wbt");
    if (fs::exists(path)) {
      try {
        const nn::TensorArchive a = nn::TensorArchive::Load(path.string());
        if (a.meta.value("key", "") == key) {
          Utterance u;
          u.id = e.id;
          u.wave = std::move(wave);
          u.track.values = a.tensors.at("values");
          const Matrix& v = a.tensors.at("voicing");
          u.track.voicing.resize(v.rows());
          for (Eigen::Index t = 0; t < v.rows(); ++t) u.track.voicing[t] = v(t, 0) != 0.0;
          u.track.meta = ParseTrackMetadata(a.meta.at("track").dump());
          u.log_mel = a.tensors.at("log_mel");
          out.push_back(std::move(u));
          continue;
        }
      } catch (const std::exception&) {
        // Stale or damaged cache entries are rebuilt below.
      }
    }
    out.push_back(PrepareUtterance(e.id, std::move(wave), extraction, mel_config));
    ToArchive(out.back(), key).Save(path.string());
  }
  return out;
}

}  // namespace wavebender

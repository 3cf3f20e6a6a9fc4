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

// Mel-to-waveform rendering through an external vocoder bundle.
//
// A bundle is a directory holding `manifest.json`, a weights blob and
// `golden/` test vectors whose expected outputs the bundle must reproduce.
// Bundles are read-only; every file is pinned by SHA-256 in the manifest.

#ifndef WAVEBENDER_VOCODER_H_
#define WAVEBENDER_VOCODER_H_

#include <json.hpp>
#include <string>
#include <vector>

#include "wavebender/audio.h"
#include "wavebender/common.h"
#include "wavebender/mel.h"
#include "wavebender/nn.h"

namespace wavebender {

inline constexpr char kGriffinLimKind[] = "griffin-lim";
inline constexpr char kVocoderEnvVar[] = "WAVEBENDER_VOCODER";

struct GoldenVector {
  std::string file;  // relative to the bundle
  std::string sha256;
};

struct VocoderManifest {
  std::string kind = kGriffinLimKind;
  std::string name;
  std::string version;
  int sample_rate = 22050;
  MelConfig mel;
  std::string weights_file = "weights.wbt";
  std::string weights_sha256;
  bool deterministic = true;
  std::string license;
  std::vector<GoldenVector> golden;
  double golden_tolerance_rms = 1e-3;
};

nlohmann::json ManifestToJson(const VocoderManifest& manifest);
VocoderManifest ManifestFromJson(const nlohmann::json& j);

struct GriffinLimOptions {
  int iterations = 64;
  double momentum = 0.99;
  // Multiplicative non-negative refinement of the pseudo-inverse magnitudes.
  int nnls_iterations = 30;
  uint64_t phase_seed = 0;
  // Bins above the top mel filter's centre repeat its magnitude instead of
  // staying silent.
  bool extend_band = true;
};

class Vocoder {
 public:
  Vocoder(VocoderManifest manifest, const nn::TensorArchive& weights);

  // T frames render to T * hop samples, clamped to [-1, 1]. The mel must
  // come from the bundle's MelConfig.
  Waveform Synthesize(const MelSpectrogram& mel) const;

  const VocoderManifest& manifest() const { return manifest_; }
  std::string fingerprint() const { return manifest_.weights_sha256.substr(0, 16); }

 private:
  VocoderManifest manifest_;
  GriffinLimOptions options_;
  Matrix basis_;       // n_mels x bins
  Matrix basis_pinv_;  // bins x n_mels
  std::vector<double> window_;
};

struct BundleCheck {
  std::string name;
  bool ok = false;
  std::string detail;
  ErrorKind kind = ErrorKind::kInvalidArgument;  // meaningful when !ok
};

struct BundleReport {
  std::vector<BundleCheck> checks;

  bool ok() const;
  std::string ToText() const;
  nlohmann::json ToJson() const;
};

// Manifest, checksums, mel-config agreement, a 1-frame smoke inference and
// the golden vectors. Never throws for bundle defects; they are reported.
BundleReport VerifyBundle(const std::string& dir, const MelConfig& expected);

// Verifies and loads; the first failed check is raised with its kind.
Vocoder LoadVocoder(const std::string& dir, const MelConfig& expected);

// `configured` if non-empty, else $WAVEBENDER_VOCODER; fails with
// placement instructions when neither names an existing bundle.
std::string ResolveBundlePath(const std::string& configured);

// Writes the built-in Griffin-Lim bundle for `mel`, golden vectors included.
void WriteGriffinLimBundle(const std::string& dir, const MelConfig& mel,
                           const GriffinLimOptions& options = {});

// Downloads the bundle whose manifest is at `url` (http:// or file://). The
// manifest must hash to `manifest_sha256`; other files are checked against
// the manifest. The bundle is verified before it is moved into `dir`.
void FetchBundle(const std::string& url, const std::string& manifest_sha256, const std::string& dir,
                 const MelConfig& expected);

}  // namespace wavebender

#endif  // WAVEBENDER_VOCODER_H_

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

#include "wavebender/vocoder.h"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <optional>
#include <sstream>

#include "wavebender/signal.h"
#include "wavebender/synth.h"

namespace wavebender {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using ComplexMatrix = Eigen::MatrixXcd;

constexpr char kStage[] = "vocoder";
constexpr char kManifestFile[] = "manifest.json";
constexpr double kMagnitudeFloor = 1e-10;

std::string PlacementHint(const std::string& dir) {
  return "create the reference bundle with `wavebender fetch-vocoder --builtin " +
         (dir.empty() ? std::string("<dir>") : dir) +
         "`, download one with `wavebender fetch-vocoder --url <manifest-url> "
         "--sha256 <digest> <dir>`, then pass --vocoder <dir> or set " +
         kVocoderEnvVar;
}

// Mirror index into [0, n) as used by reflect padding, for any offset.
long Reflect(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::string DescribeMelDifference(const MelConfig& bundle, const MelConfig& project) {
  const json a = MelConfigToJson(bundle), b = MelConfigToJson(project);
  std::string out;
  for (const auto& [key, value] : b.items()) {
    if (a.contains(key) && a.at(key) != value) {
      out += (out.empty() ? "" : ", ") + key + " " + a.at(key).dump() + " (bundle) vs " +
             value.dump() + " (project)";
    }
  }
  return out;
}

// Inverse STFT by windowed overlap-add over the analysis framing; returns
// frames * hop samples.
std::vector<double> InverseStft(const ComplexMatrix& spec, const std::vector<double>& window,
                                int hop, RealFft& fft) {
  const int n = fft.size();
  const long frames = spec.cols();
  const int pad = (n - hop) / 2;
  const long padded = (frames - 1) * hop + n;
  std::vector<double> buf(padded, 0.0), wsum(padded, 0.0), frame;
  std::vector<std::complex<double>> half(spec.rows());
  for (long t = 0; t < frames; ++t) {
    for (long k = 0; k < spec.rows(); ++k) half[k] = spec(k, t);
    fft.Inverse(half, frame);
    for (int i = 0; i < n; ++i) {
      buf[t * hop + i] += frame[i] * window[i];
      wsum[t * hop + i] += window[i] * window[i];
    }
  }
  std::vector<double> out(static_cast<size_t>(frames) * hop);
  for (size_t i = 0; i < out.size(); ++i) {
    const size_t j = i + pad;
    out[i] = wsum[j] > 1e-8 ? buf[j] / wsum[j] : 0.0;
  }
  return out;
}

ComplexMatrix ForwardStft(const std::vector<double>& x, const std::vector<double>& window, int hop,
                          long frames, RealFft& fft) {
  const int n = fft.size();
  const int pad = (n - hop) / 2;
  const long len = static_cast<long>(x.size());
  ComplexMatrix spec(fft.bins(), frames);
  std::vector<double> frame(n);
  std::vector<std::complex<double>> out;
  for (long t = 0; t < frames; ++t) {
    for (int i = 0; i < n; ++i) {
      frame[i] = x[Reflect(t * hop + i - pad, len)] * window[i];
    }
    fft.Forward(frame, out);
    for (int k = 0; k < fft.bins(); ++k) spec(k, t) = out[k];
  }
  return spec;
}

Matrix AnalysisWindow(const MelConfig& mel) {
  Matrix w = Matrix::Zero(mel.fft_size, 1);
  const std::vector<double> hann = HannWindow(mel.win_length, true);
  const int offset = (mel.fft_size - mel.win_length) / 2;
  for (int i = 0; i < mel.win_length; ++i) w(offset + i, 0) = hann[i];
  return w;
}

double RmsDifference(const std::vector<double>& a, const Matrix& b) {
  if (static_cast<Eigen::Index>(a.size()) != b.size()) return INFINITY;
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b(i)) * (a[i] - b(i));
  return std::sqrt(s / std::max<size_t>(1, a.size()));
}

}  // namespace

json ManifestToJson(const VocoderManifest& m) {
  json golden = json::array();
  for (const GoldenVector& g : m.golden) golden.push_back({{"file", g.file}, {"sha256", g.sha256}});
  return {{"kind", m.kind},
          {"name", m.name},
          {"version", m.version},
          {"sample_rate", m.sample_rate},
          {"mel", MelConfigToJson(m.mel)},
          {"weights", {{"file", m.weights_file}, {"sha256", m.weights_sha256}}},
          {"deterministic", m.deterministic},
          {"license", m.license},
          {"golden", golden},
          {"golden_tolerance_rms", m.golden_tolerance_rms}};
}

VocoderManifest ManifestFromJson(const json& j) {
  VocoderManifest m;
  try {
    m.kind = j.at("kind").get<std::string>();
    m.name = j.value("name", "");
    m.version = j.value("version", "");
    m.sample_rate = j.at("sample_rate").get<int>();
    m.weights_file = j.at("weights").at("file").get<std::string>();
    m.weights_sha256 = j.at("weights").at("sha256").get<std::string>();
    m.deterministic = j.value("deterministic", true);
    m.license = j.value("license", "");
    for (const json& g : j.value("golden", json::array())) {
      m.golden.push_back({g.at("file").get<std::string>(), g.at("sha256").get<std::string>()});
    }
    m.golden_tolerance_rms = j.value("golden_tolerance_rms", 1e-3);
  } catch (const json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, kStage, std::string("bad manifest: ") + e.what());
  }
  m.mel = MelConfigFromJson(j.at("mel"));
  for (const std::string& f : [&] {
         std::vector<std::string> files{m.weights_file};
         for (const GoldenVector& g : m.golden) files.push_back(g.file);
         return files;
       }()) {
    const fs::path p(f);
    if (f.empty() || p.is_absolute() || f.find("..") != std::string::npos) {
      Fail(ErrorKind::kInvalidArgument, kStage,
           "manifest file entry '" + f + "' must be a relative path inside the bundle");
    }
  }
  return m;
}

Vocoder::Vocoder(VocoderManifest manifest, const nn::TensorArchive& weights)
    : manifest_(std::move(manifest)) {
  if (manifest_.kind != kGriffinLimKind) {
    Fail(ErrorKind::kInvalidArgument, kStage,
         "unsupported vocoder kind '" + manifest_.kind + "'; this build runs '" + kGriffinLimKind +
             "' bundles");
  }
  const MelConfig& mel = manifest_.mel;
  const int bins = mel.fft_size / 2 + 1;
  auto tensor = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto it = weights.tensors.find(name);
    if (it == weights.tensors.end()) {
      Fail(ErrorKind::kNotFound, kStage, "weights lack tensor '" + name + "'");
    }
    if (it->second.rows() != rows || it->second.cols() != cols || !it->second.allFinite()) {
      Fail(ErrorKind::kFingerprintMismatch, kStage,
           "tensor '" + name + "' does not match the manifest mel config");
    }
    return it->second;
  };
  basis_ = tensor("mel_basis", mel.n_mels, bins);
  basis_pinv_ = tensor("mel_basis_pinv", bins, mel.n_mels);
  const Matrix w = tensor("window", mel.fft_size, 1);
  window_.assign(w.data(), w.data() + w.size());
  try {
    options_.iterations = weights.meta.at("iterations").get<int>();
    options_.momentum = weights.meta.at("momentum").get<double>();
    options_.nnls_iterations = weights.meta.at("nnls_iterations").get<int>();
    options_.phase_seed = weights.meta.at("phase_seed").get<uint64_t>();
    options_.extend_band = weights.meta.value("extend_band", false);
  } catch (const json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, kStage, std::string("bad weights header: ") + e.what());
  }
  if (options_.iterations < 0 || options_.nnls_iterations < 0 ||
      !(options_.momentum >= 0.0 && options_.momentum < 1.0)) {
    Fail(ErrorKind::kInvalidArgument, kStage, "bad Griffin-Lim parameters");
  }
}

Waveform Vocoder::Synthesize(const MelSpectrogram& mel) const {
  const MelConfig& cfg = manifest_.mel;
  if (!mel.config_id.empty() && mel.config_id != cfg.fingerprint()) {
    Fail(ErrorKind::kFingerprintMismatch, kStage,
         "mel config " + mel.config_id + " does not match the bundle's " + cfg.fingerprint());
  }
  if (mel.bins.rows() < 1 || mel.bins.cols() != cfg.n_mels) {
    Fail(ErrorKind::kInvalidArgument, kStage,
         "expected T x " + std::to_string(cfg.n_mels) + " mel, got " +
             std::to_string(mel.bins.rows()) + " x " + std::to_string(mel.bins.cols()));
  }
  if (!mel.bins.allFinite()) Fail(ErrorKind::kInvalidArgument, kStage, "non-finite mel");

  const long frames = mel.bins.rows();
  // Magnitudes: bins x frames.
  const Matrix target = mel.bins.transpose().array().exp().matrix();
  Matrix mag = (basis_pinv_ * target).cwiseMax(kMagnitudeFloor);
  const Matrix numer = basis_.transpose() * target;
  for (int it = 0; it < options_.nnls_iterations; ++it) {
    const Matrix denom = basis_.transpose() * (basis_ * mag);
    mag = mag.cwiseProduct(numer.cwiseQuotient((denom.array() + 1e-12).matrix()));
  }
  if (options_.extend_band) {
    // Continue the log-magnitude tilt between the two top filter centres,
    // never rising.
    Eigen::Index top = 0, below = 0;
    basis_.row(basis_.rows() - 1).maxCoeff(&top);
    basis_.row(basis_.rows() - 2).maxCoeff(&below);
    const double span = static_cast<double>(std::max<Eigen::Index>(1, top - below));
    for (long t = 0; t < frames; ++t) {
      const double tilt = std::min(0.0, std::log(mag(top, t) / mag(below, t)) / span);
      for (Eigen::Index k = top + 1; k < mag.rows(); ++k) {
        mag(k, t) = mag(top, t) * std::exp(tilt * static_cast<double>(k - top));
      }
    }
  }

  RealFft fft(cfg.fft_size);
  Rng rng(options_.phase_seed);
  ComplexMatrix angles(mag.rows(), frames);
  for (long t = 0; t < frames; ++t) {
    for (long k = 0; k < mag.rows(); ++k) {
      angles(k, t) = std::polar(1.0, 2.0 * std::numbers::pi * rng.Uniform());
    }
  }
  // Fast Griffin-Lim with momentum.
  const double alpha = options_.momentum / (1.0 + options_.momentum);
  ComplexMatrix rebuilt = ComplexMatrix::Zero(mag.rows(), frames);
  for (int it = 0; it < options_.iterations; ++it) {
    const ComplexMatrix prev = rebuilt;
    const std::vector<double> x =
        InverseStft(mag.cast<std::complex<double>>().cwiseProduct(angles), window_, cfg.hop, fft);
    rebuilt = ForwardStft(x, window_, cfg.hop, frames, fft);
    angles = rebuilt - alpha * prev;
    for (Eigen::Index i = 0; i < angles.size(); ++i) {
      const double a = std::abs(angles.data()[i]);
      angles.data()[i] = a > 1e-16 ? angles.data()[i] / a : std::complex<double>(1.0, 0.0);
    }
  }
  std::vector<double> x =
      InverseStft(mag.cast<std::complex<double>>().cwiseProduct(angles), window_, cfg.hop, fft);
  for (double& v : x) {
    if (!std::isfinite(v)) Fail(ErrorKind::kNumerical, kStage, "non-finite output sample");
    v = std::clamp(v, -1.0, 1.0);
  }
  Waveform out;
  out.sample_rate = manifest_.sample_rate;
  out.samples = std::move(x);
  return out;
}

bool BundleReport::ok() const {
  for (const BundleCheck& c : checks) {
    if (!c.ok) return false;
  }
  return !checks.empty();
}

std::string BundleReport::ToText() const {
  std::ostringstream out;
  for (const BundleCheck& c : checks) {
    out << (c.ok ? "ok    " : "FAIL  ") << c.name;
    if (!c.detail.empty()) out << ": " << c.detail;
    out << "\n";
  }
  out << (ok() ? "bundle ok\n" : "bundle INVALID\n");
  return out.str();
}

json BundleReport::ToJson() const {
  json checks_json = json::array();
  for (const BundleCheck& c : checks) {
    checks_json.push_back({{"name", c.name}, {"ok", c.ok}, {"detail", c.detail}});
  }
  return {{"ok", ok()}, {"checks", checks_json}};
}

BundleReport VerifyBundle(const std::string& dir, const MelConfig& expected) {
  BundleReport r;
  auto add = [&](std::string name, bool ok, std::string detail,
                 ErrorKind kind = ErrorKind::kInvalidArgument) {
    r.checks.push_back({std::move(name), ok, std::move(detail), kind});
    return ok;
  };
  const fs::path root(dir);
  const fs::path manifest_path = root / kManifestFile;
  if (!fs::exists(manifest_path)) {
    add("manifest", false, "no " + manifest_path.string() + "; " + PlacementHint(dir),
        ErrorKind::kNotFound);
    return r;
  }
  VocoderManifest m;
  try {
    const json j = json::parse(ReadFileBytes(manifest_path.string()));
    m = ManifestFromJson(j);
  } catch (const std::exception& e) {
    add("manifest", false, e.what());
    return r;
  }
  add("manifest", true, m.name + " " + m.version + " (" + m.kind + ")");
  if (!add("kind", m.kind == kGriffinLimKind,
           m.kind == kGriffinLimKind ? m.kind
                                     : "unsupported kind '" + m.kind + "'; this build runs '" +
                                           kGriffinLimKind + "' bundles")) {
    return r;
  }

  auto check_file = [&](const std::string& rel, const std::string& sha) {
    const fs::path p = root / rel;
    if (!fs::exists(p)) return add("checksum " + rel, false, "missing file", ErrorKind::kNotFound);
    const std::string actual = Sha256Hex(ReadFileBytes(p.string()));
    return add("checksum " + rel, actual == sha,
               actual == sha ? actual.substr(0, 16)
                             : "sha256 " + actual + " but the manifest pins " + sha +
                                   " (truncated or modified file)",
               ErrorKind::kChecksum);
  };
  bool files_ok = check_file(m.weights_file, m.weights_sha256);
  for (const GoldenVector& g : m.golden) files_ok = check_file(g.file, g.sha256) && files_ok;

  const bool mel_ok = m.mel.fingerprint() == expected.fingerprint();
  add("mel config", mel_ok,
      mel_ok ? m.mel.fingerprint()
             : "bundle expects mel config " + m.mel.fingerprint() + " but the project uses " +
                   expected.fingerprint() + ": " + DescribeMelDifference(m.mel, expected),
      ErrorKind::kFingerprintMismatch);
  const bool rate_ok = m.sample_rate == m.mel.sample_rate && m.sample_rate == expected.sample_rate;
  add("sample rate", rate_ok,
      std::to_string(m.sample_rate) + " Hz" +
          (rate_ok ? "" : " vs project " + std::to_string(expected.sample_rate) + " Hz"),
      ErrorKind::kFingerprintMismatch);
  if (!files_ok || !mel_ok || !rate_ok) return r;

  std::optional<Vocoder> vocoder;
  try {
    vocoder.emplace(m, nn::TensorArchive::Load((root / m.weights_file).string()));
  } catch (const Error& e) {
    add("weights", false, e.what(), e.kind());
    return r;
  }
  add("weights", true, "");

  try {
    MelSpectrogram one;
    one.bins = Matrix::Constant(1, m.mel.n_mels, std::log(m.mel.log_clamp));
    one.config_id = m.mel.fingerprint();
    const Waveform w = vocoder->Synthesize(one);
    add("smoke", static_cast<int>(w.samples.size()) == m.mel.hop,
        "1 frame -> " + std::to_string(w.samples.size()) + " samples");
  } catch (const Error& e) {
    add("smoke", false, e.what(), e.kind());
    return r;
  }

  for (const GoldenVector& g : m.golden) {
    const std::string name = "golden " + g.file;
    if (!m.deterministic) {
      add(name, true, "skipped: bundle declares nondeterministic inference");
      continue;
    }
    try {
      const nn::TensorArchive a = nn::TensorArchive::Load((root / g.file).string());
      MelSpectrogram mel;
      mel.bins = a.tensors.at("mel");
      mel.config_id = m.mel.fingerprint();
      const double rms = RmsDifference(vocoder->Synthesize(mel).samples, a.tensors.at("audio"));
      std::ostringstream detail;
      detail << "rms " << rms << " (tolerance " << m.golden_tolerance_rms << ")";
      add(name, rms <= m.golden_tolerance_rms, detail.str(), ErrorKind::kChecksum);
    } catch (const std::exception& e) {
      add(name, false, e.what());
    }
  }
  return r;
}

Vocoder LoadVocoder(const std::string& dir, const MelConfig& expected) {
  const BundleReport report = VerifyBundle(dir, expected);
  for (const BundleCheck& c : report.checks) {
    if (!c.ok) Fail(c.kind, kStage, dir + ": " + c.name + ": " + c.detail);
  }
  const fs::path root(dir);
  const VocoderManifest m =
      ManifestFromJson(json::parse(ReadFileBytes((root / kManifestFile).string())));
  return Vocoder(m, nn::TensorArchive::Load((root / m.weights_file).string()));
}

std::string ResolveBundlePath(const std::string& configured) {
  std::string path = configured;
  if (path.empty()) {
    const char* env = std::getenv(kVocoderEnvVar);
    if (env != nullptr) path = env;
  }
  if (path.empty()) {
    Fail(ErrorKind::kNotFound, kStage, "no vocoder bundle configured; " + PlacementHint(""));
  }
  if (!fs::exists(fs::path(path) / kManifestFile)) {
    Fail(ErrorKind::kNotFound, kStage,
         "no vocoder bundle at " + path + " (manifest.json missing); " + PlacementHint(path));
  }
  return path;
}

void WriteGriffinLimBundle(const std::string& dir, const MelConfig& mel,
                           const GriffinLimOptions& options) {
  ValidateMelConfig(mel);
  nn::TensorArchive weights;
  const Matrix basis = MelFilterbank(mel);
  weights.tensors["mel_basis"] = basis;
  weights.tensors["mel_basis_pinv"] = basis.completeOrthogonalDecomposition().pseudoInverse();
  weights.tensors["window"] = AnalysisWindow(mel);
  weights.meta = {{"iterations", options.iterations},
                  {"momentum", options.momentum},
                  {"nnls_iterations", options.nnls_iterations},
                  {"phase_seed", options.phase_seed},
                  {"extend_band", options.extend_band}};
  const std::string weights_bytes = weights.Encode();

  VocoderManifest m;
  m.kind = kGriffinLimKind;
  m.name = "wavebender-griffin-lim";
  m.version = "1";
  m.sample_rate = mel.sample_rate;
  m.mel = mel;
  m.weights_file = "weights.wbt";
  m.weights_sha256 = Sha256Hex(weights_bytes);
  m.deterministic = true;
  m.license = "Apache-2.0";
  const Vocoder vocoder(m, weights);

  // Golden vector: 8 frames of a synthetic vowel.
  Waveform vowel = SyntheticVowel(140.0, 650.0, 1300.0, 0.25, mel.sample_rate);
  vowel.samples.resize(static_cast<size_t>(8) * mel.hop);
  const MelSpectrogram golden_mel = ComputeMel(vowel, mel);
  const Waveform golden_audio = vocoder.Synthesize(golden_mel);
  nn::TensorArchive golden;
  golden.meta = {{"frames", golden_mel.frames()}, {"mel_config", mel.fingerprint()}};
  golden.tensors["mel"] = golden_mel.bins;
  golden.tensors["audio"] = Eigen::Map<const Matrix>(
      golden_audio.samples.data(), static_cast<Eigen::Index>(golden_audio.samples.size()), 1);
  const std::string golden_bytes = golden.Encode();
  m.golden.push_back({"golden/vector0.wbt", Sha256Hex(golden_bytes)});

  const fs::path root(dir);
  WriteFileBytes((root / m.weights_file).string(), weights_bytes);
  WriteFileBytes((root / m.golden[0].file).string(), golden_bytes);
  WriteFileBytes((root / kManifestFile).string(), ManifestToJson(m).dump(2) + "\n");
}

}  // namespace wavebender

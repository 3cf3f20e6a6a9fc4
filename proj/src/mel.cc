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

#include "wavebender/mel.h"

#include <cmath>
#include <cstring>

namespace wavebender {
namespace {

constexpr double kMinLogHz = 1000.0;
constexpr double kLinearStep = 200.0 / 3.0;
constexpr double kMinLogMel = kMinLogHz / kLinearStep;
const double kLogStep = std::log(6.4) / 27.0;

constexpr char kMelMagic[8] = {'W', 'B', 'M', 'E', 'L', '0', '0', '1'};

void PutRaw(std::string& out, const void* p, size_t n) {
  out.append(static_cast<const char*>(p), n);
}

template <typename T>
T GetRaw(std::string_view in, size_t& pos) {
  if (pos + sizeof(T) > in.size()) {
    Fail(ErrorKind::kInvalidArgument, "mel-file", "truncated mel file");
  }
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string MelConfig::fingerprint() const { return Fingerprint(MelConfigToJson(*this).dump()); }

FrameConfig MelConfig::frame_config() const {
  return FrameConfig{fft_size, hop, FramePadding::kReflect};
}

void ValidateMelConfig(const MelConfig& c) {
  if (!IsSupportedSampleRate(c.sample_rate)) {
    Fail(ErrorKind::kInvalidArgument, "mel-config", "unsupported sample rate");
  }
  if (!(c.hop > 0 && c.hop <= c.win_length && c.win_length <= c.fft_size)) {
    Fail(ErrorKind::kInvalidArgument, "mel-config", "need hop <= win_length <= fft_size");
  }
  if (c.fft_size % 2 != 0) {
    Fail(ErrorKind::kInvalidArgument, "mel-config", "fft_size must be even");
  }
  if (c.n_mels < 1) {
    Fail(ErrorKind::kInvalidArgument, "mel-config", "n_mels must be positive");
  }
  if (!(c.fmin >= 0.0 && c.fmin < c.fmax && c.fmax <= c.sample_rate / 2.0)) {
    Fail(ErrorKind::kInvalidArgument, "mel-config", "need 0 <= fmin < fmax <= sample_rate / 2");
  }
  if (!(c.log_clamp > 0.0)) {
    Fail(ErrorKind::kInvalidArgument, "mel-config", "log_clamp must be > 0");
  }
}

nlohmann::json MelConfigToJson(const MelConfig& c) {
  // Keys are emitted in sorted order, so dump() is canonical.
  return nlohmann::json{{"sample_rate", c.sample_rate},
                        {"fft_size", c.fft_size},
                        {"hop", c.hop},
                        {"win_length", c.win_length},
                        {"n_mels", c.n_mels},
                        {"fmin", c.fmin},
                        {"fmax", c.fmax},
                        {"log_clamp", c.log_clamp}};
}

MelConfig MelConfigFromJson(const nlohmann::json& j) {
  MelConfig c;
  try {
    c.sample_rate = j.at("sample_rate").get<int>();
    c.fft_size = j.at("fft_size").get<int>();
    c.hop = j.at("hop").get<int>();
    c.win_length = j.at("win_length").get<int>();
    c.n_mels = j.at("n_mels").get<int>();
    c.fmin = j.at("fmin").get<double>();
    c.fmax = j.at("fmax").get<double>();
    c.log_clamp = j.at("log_clamp").get<double>();
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, "mel-config", e.what());
  }
  ValidateMelConfig(c);
  return c;
}

double HzToMel(double hz) {
  if (hz < kMinLogHz) return hz / kLinearStep;
  return kMinLogMel + std::log(hz / kMinLogHz) / kLogStep;
}

double MelToHz(double mel) {
  if (mel < kMinLogMel) return mel * kLinearStep;
  return kMinLogHz * std::exp(kLogStep * (mel - kMinLogMel));
}

namespace {

std::vector<double> MelEdges(const MelConfig& c) {
  const double lo = HzToMel(c.fmin), hi = HzToMel(c.fmax);
  std::vector<double> edges(c.n_mels + 2);
  for (int i = 0; i < c.n_mels + 2; ++i) {
    edges[i] = MelToHz(lo + (hi - lo) * i / (c.n_mels + 1));
  }
  return edges;
}

}  // namespace

std::vector<double> MelCenterFrequencies(const MelConfig& config) {
  std::vector<double> edges = MelEdges(config);
  return {edges.begin() + 1, edges.end() - 1};
}

Matrix MelFilterbank(const MelConfig& c) {
  ValidateMelConfig(c);
  const int bins = c.fft_size / 2 + 1;
  const std::vector<double> edges = MelEdges(c);
  Matrix fb = Matrix::Zero(c.n_mels, bins);
  for (int m = 0; m < c.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    const double norm = 2.0 / (right - left);
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(c.sample_rate) * k / c.fft_size;
      const double lower = (f - left) / (center - left);
      const double upper = (right - f) / (right - center);
      fb(m, k) = std::max(0.0, std::min(lower, upper)) * norm;
    }
  }
  return fb;
}

Matrix StftMagnitude(const Waveform& wave, const MelConfig& config) {
  ValidateWaveform(wave);
  ValidateMelConfig(config);
  if (wave.sample_rate != config.sample_rate) {
    Fail(ErrorKind::kInvalidArgument, "mel",
         "waveform sample rate " + std::to_string(wave.sample_rate) +
             " does not match mel config " + std::to_string(config.sample_rate));
  }
  const FrameConfig fc = config.frame_config();
  const int frames = FrameCount(wave.samples.size(), fc);
  const std::vector<double> padded = PadSignal(wave.samples, fc);

  // Window of win_length centered inside the FFT frame.
  std::vector<double> window(config.fft_size, 0.0);
  const std::vector<double> hann = HannWindow(config.win_length, true);
  const int offset = (config.fft_size - config.win_length) / 2;
  std::copy(hann.begin(), hann.end(), window.begin() + offset);

  RealFft fft(config.fft_size);
  const int bins = fft.bins();
  Matrix mag(frames, bins);
  std::vector<double> frame(config.fft_size);
  std::vector<std::complex<double>> spec;
  for (int t = 0; t < frames; ++t) {
    for (int i = 0; i < config.fft_size; ++i) {
      frame[i] = padded[t * config.hop + i] * window[i];
    }
    fft.Forward(frame, spec);
    for (int k = 0; k < bins; ++k) mag(t, k) = std::abs(spec[k]);
  }
  return mag;
}

MelSpectrogram ComputeMel(const Waveform& wave, const MelConfig& config) {
  const Matrix mag = StftMagnitude(wave, config);
  const Matrix fb = MelFilterbank(config);
  MelSpectrogram mel;
  mel.bins = (mag * fb.transpose()).array().max(config.log_clamp).log().matrix();
  mel.frame_rate = config.frame_rate();
  mel.config_id = config.fingerprint();
  return mel;
}

std::string EncodeMel(const MelSpectrogram& mel) {
  std::string out(kMelMagic, sizeof kMelMagic);
  const uint32_t rows = static_cast<uint32_t>(mel.bins.rows());
  const uint32_t cols = static_cast<uint32_t>(mel.bins.cols());
  PutRaw(out, &rows, sizeof rows);
  PutRaw(out, &cols, sizeof cols);
  PutRaw(out, &mel.frame_rate, sizeof mel.frame_rate);
  const uint32_t id_len = static_cast<uint32_t>(mel.config_id.size());
  PutRaw(out, &id_len, sizeof id_len);
  out += mel.config_id;
  // Row-major payload.
  for (uint32_t r = 0; r < rows; ++r) {
    for (uint32_t c = 0; c < cols; ++c) {
      const double v = mel.bins(r, c);
      PutRaw(out, &v, sizeof v);
    }
  }
  return out;
}

MelSpectrogram DecodeMel(std::string_view bytes) {
  if (bytes.size() < sizeof kMelMagic ||
      std::memcmp(bytes.data(), kMelMagic, sizeof kMelMagic) != 0) {
    Fail(ErrorKind::kInvalidArgument, "mel-file", "bad magic");
  }
  size_t pos = sizeof kMelMagic;
  const auto rows = GetRaw<uint32_t>(bytes, pos);
  const auto cols = GetRaw<uint32_t>(bytes, pos);
  MelSpectrogram mel;
  mel.frame_rate = GetRaw<double>(bytes, pos);
  const auto id_len = GetRaw<uint32_t>(bytes, pos);
  if (pos + id_len > bytes.size()) {
    Fail(ErrorKind::kInvalidArgument, "mel-file", "truncated mel file");
  }
  mel.config_id = std::string(bytes.substr(pos, id_len));
  pos += id_len;
  if (bytes.size() - pos != static_cast<size_t>(rows) * cols * sizeof(double)) {
    Fail(ErrorKind::kInvalidArgument, "mel-file", "payload size mismatch");
  }
  mel.bins.resize(rows, cols);
  for (uint32_t r = 0; r < rows; ++r) {
    for (uint32_t c = 0; c < cols; ++c) mel.bins(r, c) = GetRaw<double>(bytes, pos);
  }
  return mel;
}

void SaveMel(const std::string& path, const MelSpectrogram& mel) {
  WriteFileBytes(path, EncodeMel(mel));
}

MelSpectrogram LoadMel(const std::string& path) { return DecodeMel(ReadFileBytes(path)); }

}  // namespace wavebender

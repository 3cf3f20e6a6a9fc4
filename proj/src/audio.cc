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

#include "wavebender/audio.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wavebender/common.h"

namespace wavebender {
namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xfffe;

uint16_t ReadU16(std::string_view b, size_t at) {
  return static_cast<uint16_t>(static_cast<uint8_t>(b[at]) |
                               (static_cast<uint8_t>(b[at + 1]) << 8));
}

uint32_t ReadU32(std::string_view b, size_t at) {
  return static_cast<uint32_t>(ReadU16(b, at)) | (static_cast<uint32_t>(ReadU16(b, at + 2)) << 16);
}

void PutU16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void PutU32(std::string& out, uint32_t v) {
  PutU16(out, static_cast<uint16_t>(v & 0xffff));
  PutU16(out, static_cast<uint16_t>(v >> 16));
}

}  // namespace

bool IsSupportedSampleRate(int sample_rate) {
  switch (sample_rate) {
    case 16000:
    case 22050:
    case 24000:
    case 44100:
    case 48000:
      return true;
    default:
      return false;
  }
}

void ValidateWaveform(const Waveform& wave) {
  if (wave.samples.empty()) {
    Fail(ErrorKind::kInvalidArgument, "audio", "waveform is empty");
  }
  if (!IsSupportedSampleRate(wave.sample_rate)) {
    Fail(ErrorKind::kInvalidArgument, "audio",
         "unsupported sample rate " + std::to_string(wave.sample_rate) +
             " (expected 16000, 22050, 24000, 44100 or 48000)");
  }
  for (size_t i = 0; i < wave.samples.size(); ++i) {
    double s = wave.samples[i];
    if (!std::isfinite(s) || s < -1.0 || s > 1.0) {
      Fail(ErrorKind::kInvalidArgument, "audio",
           "sample " + std::to_string(i) + " is non-finite or outside [-1, 1]");
    }
  }
}

Waveform DecodeWav(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "RIFF" || bytes.substr(8, 4) != "WAVE") {
    Fail(ErrorKind::kInvalidArgument, "wav", "not a RIFF/WAVE file");
  }
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  std::string_view data;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    std::string_view id = bytes.substr(pos, 4);
    uint32_t size = ReadU32(bytes, pos + 4);
    size_t body = pos + 8;
    size_t available = std::min<size_t>(size, bytes.size() - body);
    if (id == "fmt ") {
      if (available < 16) {
        Fail(ErrorKind::kInvalidArgument, "wav", "truncated fmt chunk");
      }
      format = ReadU16(bytes, body);
      channels = ReadU16(bytes, body + 2);
      rate = ReadU32(bytes, body + 4);
      bits = ReadU16(bytes, body + 14);
      if (format == kFormatExtensible && available >= 26) {
        format = ReadU16(bytes, body + 24);
      }
      have_fmt = true;
    } else if (id == "data") {
      data = bytes.substr(body, available);
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt) Fail(ErrorKind::kInvalidArgument, "wav", "missing fmt chunk");
  if (channels != 1) {
    Fail(ErrorKind::kInvalidArgument, "wav",
         "only mono audio is supported, got " + std::to_string(channels) + " channels");
  }
  Waveform wave;
  wave.sample_rate = static_cast<int>(rate);
  if (format == kFormatPcm && bits == 16) {
    size_t n = data.size() / 2;
    wave.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      auto v = static_cast<int16_t>(ReadU16(data, 2 * i));
      wave.samples[i] = std::max(-1.0, v / 32767.0);
    }
  } else if (format == kFormatFloat && bits == 32) {
    size_t n = data.size() / 4;
    wave.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t raw = ReadU32(data, 4 * i);
      float f;
      std::memcpy(&f, &raw, sizeof f);
      wave.samples[i] = f;
    }
  } else {
    Fail(ErrorKind::kInvalidArgument, "wav",
         "unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
             " bits); use 16-bit PCM or float32");
  }
  ValidateWaveform(wave);
  return wave;
}

std::string EncodeWav(const Waveform& wave, WavEncoding encoding) {
  const uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const uint16_t format = encoding == WavEncoding::kPcm16 ? kFormatPcm : kFormatFloat;
  const uint32_t data_bytes = static_cast<uint32_t>(wave.samples.size() * (bits / 8));
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  PutU32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  PutU32(out, 16);
  PutU16(out, format);
  PutU16(out, 1);
  PutU32(out, static_cast<uint32_t>(wave.sample_rate));
  PutU32(out, static_cast<uint32_t>(wave.sample_rate) * (bits / 8));
  PutU16(out, bits / 8);
  PutU16(out, bits);
  out += "data";
  PutU32(out, data_bytes);
  for (double s : wave.samples) {
    double c = std::clamp(s, -1.0, 1.0);
    if (encoding == WavEncoding::kPcm16) {
      long v = std::lround(c * 32767.0);
      PutU16(out, static_cast<uint16_t>(static_cast<int16_t>(v)));
    } else {
      float f = static_cast<float>(c);
      uint32_t raw;
      std::memcpy(&raw, &f, sizeof raw);
      PutU32(out, raw);
    }
  }
  return out;
}

Waveform ReadWav(const std::string& path) {
  try {
    return DecodeWav(ReadFileBytes(path));
  } catch (const Error& e) {
    throw Error(e.kind(), "wav", path + ": " + e.detail());
  }
}

void WriteWav(const std::string& path, const Waveform& wave, WavEncoding encoding) {
  WriteFileBytes(path, EncodeWav(wave, encoding));
}

Waveform Clamped(Waveform wave) {
  for (double& s : wave.samples) {
    s = std::isfinite(s) ? std::clamp(s, -1.0, 1.0) : 0.0;
  }
  return wave;
}

double Rms(const std::vector<double>& samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return std::sqrt(acc / samples.size());
}

double Peak(const std::vector<double>& samples) {
  double p = 0.0;
  for (double s : samples) p = std::max(p, std::abs(s));
  return p;
}

std::string ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kNotFound, "io", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFileBytes(const std::string& path, std::string_view bytes) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "io", "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) Fail(ErrorKind::kIo, "io", "short write to " + path);
}

}  // namespace wavebender

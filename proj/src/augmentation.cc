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

#include "wavebender/augmentation.h"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace wavebender {
namespace {

constexpr char kStage[] = "augmentation";
// Grain spacing used outside voiced regions.
constexpr double kUnvoicedPeriodSeconds = 0.005;

// Per-sample period and voicing derived from the frame-level pitch track.
class PeriodContour {
 public:
  PeriodContour(const Waveform& wave, const ExtractionOptions& options) {
    const std::vector<PitchFrame> pitch = TrackPitch(wave, options);
    hop_ = options.frames.hop;
    sample_rate_ = wave.sample_rate;
    voiced_.resize(pitch.size());
    log_f0_.resize(pitch.size());
    for (size_t t = 0; t < pitch.size(); ++t) {
      voiced_[t] = pitch[t].voiced;
      log_f0_[t] = pitch[t].voiced ? std::log(pitch[t].f0_hz) : 0.0;
    }
    any_voiced_ = InterpolateUnvoiced(log_f0_, voiced_);
  }

  bool any_voiced() const { return any_voiced_; }

  // Frame centers sit at t * hop + hop / 2.
  double FramePosition(double sample) const {
    const double f = (sample - 0.5 * hop_) / hop_;
    return std::clamp(f, 0.0, static_cast<double>(voiced_.size() - 1));
  }

  bool Voiced(double sample) const {
    return voiced_[static_cast<size_t>(std::lround(FramePosition(sample)))] != 0;
  }

  double Period(double sample) const {
    const double f = FramePosition(sample);
    const size_t i = static_cast<size_t>(f);
    const size_t j = std::min(i + 1, log_f0_.size() - 1);
    const double w = f - static_cast<double>(i);
    const double lf = log_f0_[i] * (1.0 - w) + log_f0_[j] * w;
    return sample_rate_ / std::exp(lf);
  }

 private:
  int hop_ = 256;
  double sample_rate_ = 22050.0;
  std::vector<uint8_t> voiced_;
  std::vector<double> log_f0_;
  bool any_voiced_ = false;
};

}  // namespace

void ValidatePolicy(const AugmentationPolicy& p) {
  auto bad = [](const std::string& msg) { Fail(ErrorKind::kInvalidArgument, kStage, msg); };
  if (!(p.f0_scale_range[0] > 0.0) || p.f0_scale_range[0] > p.f0_scale_range[1]) {
    bad("f0_scale_range must be ordered with a positive lower bound");
  }
  if (!(p.gain_db_range[0] <= p.gain_db_range[1])) bad("gain_db_range must be ordered");
  if (!(p.augment_probability >= 0.0 && p.augment_probability <= 1.0)) {
    bad("augment_probability must be in [0, 1]");
  }
}

nlohmann::json PolicyToJson(const AugmentationPolicy& p) {
  return {{"f0_scale_range", p.f0_scale_range},
          {"gain_db_range", p.gain_db_range},
          {"augment_probability", p.augment_probability},
          {"seed", p.seed}};
}

AugmentationPolicy PolicyFromJson(const nlohmann::json& j) {
  AugmentationPolicy p;
  try {
    p.f0_scale_range = j.value("f0_scale_range", p.f0_scale_range);
    p.gain_db_range = j.value("gain_db_range", p.gain_db_range);
    p.augment_probability = j.value("augment_probability", p.augment_probability);
    p.seed = j.value("seed", p.seed);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, kStage, std::string("bad policy: ") + e.what());
  }
  ValidatePolicy(p);
  return p;
}

std::string AugmentationDraw::fingerprint() const {
  return Fingerprint(std::string(apply ? "1" : "0") + "|" + FormatDouble(f0_scale) + "|" +
                     FormatDouble(gain_db));
}

AugmentationDraw DrawAugmentation(const AugmentationPolicy& policy, Rng& rng) {
  ValidatePolicy(policy);
  AugmentationDraw d;
  // All three values are always drawn so streams stay aligned.
  const double u = rng.Uniform();
  d.f0_scale = rng.Uniform(policy.f0_scale_range[0], policy.f0_scale_range[1]);
  d.gain_db = rng.Uniform(policy.gain_db_range[0], policy.gain_db_range[1]);
  d.apply = u < policy.augment_probability;
  return d;
}

AugmentationDraw DrawForUtterance(const AugmentationPolicy& policy, std::string_view utterance_id,
                                  int round) {
  Rng rng(MixSeed(MixSeed(policy.seed, utterance_id), static_cast<uint64_t>(round)));
  return DrawAugmentation(policy, rng);
}

Waveform PitchShift(const Waveform& wave, double scale, const ExtractionOptions& options) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    Fail(ErrorKind::kInvalidArgument, kStage, "pitch scale must be positive");
  }
  ValidateWaveform(wave);
  if (scale == 1.0) return wave;
  const PeriodContour contour(wave, options);
  if (!contour.any_voiced()) return wave;

  const std::vector<double>& x = wave.samples;
  const long n = static_cast<long>(x.size());
  const double unvoiced_period = kUnvoicedPeriodSeconds * wave.sample_rate;

  // Analysis marks: one per period in voiced regions, snapped to the
  // waveform maximum near the predicted position.
  std::vector<double> marks;
  double a = 0.0;
  while (a < n) {
    if (contour.Voiced(a)) {
      const double p = contour.Period(a);
      const long lo = std::max(0L, static_cast<long>(a - p / 3.0));
      const long hi = std::min(n - 1, static_cast<long>(a + p / 3.0));
      long best = std::clamp(static_cast<long>(std::lround(a)), 0L, n - 1);
      for (long i = lo; i <= hi; ++i) {
        if (x[i] > x[best]) best = i;
      }
      const double floor = marks.empty() ? 0.0 : marks.back() + p / 2.0;
      a = std::max(static_cast<double>(best), floor);
      marks.push_back(a);
      a += p;
    } else {
      marks.push_back(a);
      a += unvoiced_period;
    }
  }

  std::vector<double> out(x.size(), 0.0), wsum(x.size(), 0.0);
  double s = 0.0;
  while (s < n) {
    const auto it = std::lower_bound(marks.begin(), marks.end(), s);
    size_t k = static_cast<size_t>(it - marks.begin());
    if (k == marks.size() || (k > 0 && s - marks[k - 1] < marks[k] - s)) --k;
    const bool voiced = contour.Voiced(s);
    const double half = voiced ? contour.Period(marks[k]) : unvoiced_period;
    const long center_src = std::lround(marks[k]);
    const long center_dst = std::lround(s);
    const long span = static_cast<long>(std::ceil(half));
    for (long j = -span; j <= span; ++j) {
      const long src = center_src + j, dst = center_dst + j;
      if (src < 0 || src >= n || dst < 0 || dst >= n) continue;
      const double r = static_cast<double>(j) / half;
      if (std::abs(r) >= 1.0) continue;
      const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * r));
      out[dst] += w * x[src];
      wsum[dst] += w;
    }
    s += voiced ? contour.Period(s) / scale : unvoiced_period;
  }
  // Denser grains (raised pitch) would otherwise raise the level.
  for (size_t i = 0; i < out.size(); ++i) out[i] /= std::max(1.0, wsum[i]);

  Waveform result;
  result.sample_rate = wave.sample_rate;
  result.samples = std::move(out);
  return result;
}

AugmentedExample Augment(const Waveform& wave, const AugmentationDraw& draw,
                         const ExtractionOptions& options) {
  AugmentedExample ex;
  ex.draw = draw;
  ex.wave = wave;
  std::string warning;
  if (draw.apply && (draw.f0_scale != 1.0 || draw.gain_db != 0.0)) {
    try {
      Waveform w = PitchShift(wave, draw.f0_scale, options);
      for (double v : w.samples) {
        if (!std::isfinite(v)) {
          Fail(ErrorKind::kNumerical, kStage, "pitch shift produced non-finite samples");
        }
      }
      double gain = std::pow(10.0, draw.gain_db / 20.0);
      const double peak = Peak(w.samples);
      if (peak * gain > 1.0) gain = 1.0 / peak;
      for (double& v : w.samples) v = std::clamp(v * gain, -1.0, 1.0);
      ex.wave = std::move(w);
      ex.augmented = true;
    } catch (const Error& e) {
      warning = std::string("augmentation fell back to the original audio: ") + e.what();
    }
  }
  ex.track = ExtractParameters(ex.wave, options);
  if (!warning.empty()) ex.track.meta.warnings.push_back(warning);
  return ex;
}

}  // namespace wavebender

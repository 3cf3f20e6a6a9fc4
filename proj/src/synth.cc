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

#include "wavebender/synth.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "wavebender/common.h"

namespace wavebender {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Klatt two-pole resonator with unity DC gain.
class Resonator {
 public:
  void Set(double freq, double bw, int sample_rate) {
    const double t = 1.0 / sample_rate;
    c_ = -std::exp(-kTwoPi * bw * t);
    b_ = 2.0 * std::exp(-std::numbers::pi * bw * t) * std::cos(kTwoPi * freq * t);
    a_ = 1.0 - b_ - c_;
  }
  double Step(double x) {
    const double y = a_ * x + b_ * y1_ + c_ * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double a_ = 1.0, b_ = 0.0, c_ = 0.0;
  double y1_ = 0.0, y2_ = 0.0;
};

// Rosenberg glottal flow over one period, phase in [0, 1).
double GlottalFlow(double phase) {
  constexpr double kOpen = 0.4, kClose = 0.16;
  if (phase < kOpen) return 0.5 * (1.0 - std::cos(std::numbers::pi * phase / kOpen));
  if (phase < kOpen + kClose) {
    return std::cos(0.5 * std::numbers::pi * (phase - kOpen) / kClose);
  }
  return 0.0;
}

VoiceControl Interpolate(const std::vector<VoiceControl>& c, double t) {
  if (t <= c.front().time_s) return c.front();
  if (t >= c.back().time_s) return c.back();
  auto it = std::upper_bound(c.begin(), c.end(), t,
                             [](double v, const VoiceControl& p) { return v < p.time_s; });
  const VoiceControl& b = *it;
  const VoiceControl& a = *(it - 1);
  const double span = b.time_s - a.time_s;
  const double w = span > 0.0 ? (t - a.time_s) / span : 1.0;
  auto mix = [w](double x, double y) { return x + (y - x) * w; };
  VoiceControl out;
  out.time_s = t;
  // Pitch moves geometrically.
  out.f0_hz = std::exp(mix(std::log(a.f0_hz), std::log(b.f0_hz)));
  out.voicing = mix(a.voicing, b.voicing);
  out.frication = mix(a.frication, b.frication);
  out.aspiration = mix(a.aspiration, b.aspiration);
  out.tilt = mix(a.tilt, b.tilt);
  out.gain = mix(a.gain, b.gain);
  out.f1 = mix(a.f1, b.f1);
  out.f2 = mix(a.f2, b.f2);
  out.f3 = mix(a.f3, b.f3);
  out.f4 = mix(a.f4, b.f4);
  out.b1 = mix(a.b1, b.b1);
  out.b2 = mix(a.b2, b.b2);
  out.b3 = mix(a.b3, b.b3);
  out.b4 = mix(a.b4, b.b4);
  return out;
}

struct VowelTarget {
  double f1, f2;
};

// Average adult female formants (Peterson & Barney style table).
constexpr std::array<VowelTarget, 10> kVowels = {{{310, 2790},
                                                  {430, 2480},
                                                  {610, 2330},
                                                  {860, 2050},
                                                  {850, 1220},
                                                  {590, 920},
                                                  {470, 1160},
                                                  {370, 950},
                                                  {760, 1400},
                                                  {500, 1640}}};

}  // namespace

Waveform Sawtooth(double f0_hz, double seconds, int sample_rate, double amplitude) {
  Waveform w;
  w.sample_rate = sample_rate;
  const size_t n = static_cast<size_t>(std::llround(seconds * sample_rate));
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double phase = std::fmod(f0_hz * i / sample_rate, 1.0);
    w.samples[i] = amplitude * (2.0 * phase - 1.0);
  }
  return w;
}

Waveform Sine(double hz, double seconds, int sample_rate, double amplitude) {
  Waveform w;
  w.sample_rate = sample_rate;
  const size_t n = static_cast<size_t>(std::llround(seconds * sample_rate));
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    w.samples[i] = amplitude * std::sin(kTwoPi * hz * i / sample_rate);
  }
  return w;
}

Waveform WhiteNoise(double seconds, int sample_rate, uint64_t seed, double amplitude) {
  Rng rng(seed);
  Waveform w;
  w.sample_rate = sample_rate;
  const size_t n = static_cast<size_t>(std::llround(seconds * sample_rate));
  w.samples.resize(n);
  for (double& s : w.samples) s = amplitude * rng.Uniform(-1.0, 1.0);
  return w;
}

Waveform SynthesizeFormantSpeech(const std::vector<VoiceControl>& controls, double seconds,
                                 int sample_rate, uint64_t noise_seed) {
  if (controls.empty()) {
    Fail(ErrorKind::kInvalidArgument, "synth", "no control points");
  }
  Rng rng(noise_seed);
  const size_t n = static_cast<size_t>(std::llround(seconds * sample_rate));
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n);

  std::array<Resonator, 4> tract;
  Resonator fricative;
  fricative.Set(4500.0, 2500.0, sample_rate);
  double phase = 0.0, prev_flow = 0.0, tilted = 0.0;
  VoiceControl c = controls.front();
  constexpr size_t kControlStride = 32;
  for (size_t i = 0; i < n; ++i) {
    if (i % kControlStride == 0) {
      c = Interpolate(controls, static_cast<double>(i) / sample_rate);
      tract[0].Set(c.f1, c.b1, sample_rate);
      tract[1].Set(c.f2, c.b2, sample_rate);
      tract[2].Set(c.f3, c.b3, sample_rate);
      tract[3].Set(c.f4, c.b4, sample_rate);
    }
    phase += c.f0_hz / sample_rate;
    if (phase >= 1.0) phase -= 1.0;
    const double flow = GlottalFlow(phase);
    // Radiation: differentiated flow, scaled to a pitch-independent level.
    const double pulse = (flow - prev_flow) * sample_rate / (c.f0_hz * 8.0);
    prev_flow = flow;
    tilted = (1.0 - c.tilt) * pulse + c.tilt * tilted;

    const double noise = rng.Uniform(-1.0, 1.0);
    double excitation = c.voicing * (tilted + c.aspiration * noise);
    for (Resonator& r : tract) excitation = r.Step(excitation);
    const double fric = fricative.Step(rng.Uniform(-1.0, 1.0)) * c.frication;
    w.samples[i] = c.gain * (excitation + 0.5 * fric);
  }
  const double peak = Peak(w.samples);
  if (peak > 0.95) {
    for (double& s : w.samples) s *= 0.95 / peak;
  }
  return w;
}

Waveform SyntheticVowel(double f0_hz, double f1_hz, double f2_hz, double seconds, int sample_rate,
                        uint64_t seed) {
  VoiceControl c;
  c.f0_hz = f0_hz;
  c.f1 = f1_hz;
  c.f2 = f2_hz;
  c.f3 = std::max(2700.0, f2_hz + 500.0);
  c.f4 = c.f3 + 1100.0;
  c.aspiration = 0.0;
  c.gain = 0.4;
  Waveform w = SynthesizeFormantSpeech({c}, seconds, sample_rate, seed);
  const double peak = Peak(w.samples);
  if (peak > 0.0) {
    for (double& s : w.samples) s *= 0.5 / peak;
  }
  return w;
}

Waveform RandomUtterance(uint64_t seed, const SyntheticUtteranceOptions& opt) {
  Rng rng(seed);
  const double duration = rng.Uniform(opt.min_seconds, opt.max_seconds);
  const double speaker_scale = rng.Uniform(0.94, 1.06);
  const double base_f0 = opt.base_f0_hz * rng.Uniform(0.85, 1.15);
  // Intonation: declination plus up to three accent bumps.
  const int accents = 1 + static_cast<int>(rng.Below(3));
  std::vector<std::array<double, 3>> bumps;  // center, width, height
  for (int i = 0; i < accents; ++i) {
    bumps.push_back(
        {rng.Uniform(0.1, 0.9) * duration, rng.Uniform(0.08, 0.25), rng.Uniform(-0.1, 0.3)});
  }
  auto f0_at = [&](double t) {
    double v = base_f0 * (1.0 - 0.18 * t / duration);
    for (const auto& b : bumps) {
      const double z = (t - b[0]) / b[1];
      v *= 1.0 + b[2] * std::exp(-0.5 * z * z);
    }
    return std::clamp(v, 80.0, 380.0);
  };

  std::vector<VoiceControl> controls;
  VoiceControl current;
  current.f0_hz = f0_at(0.0);
  const VowelTarget first = kVowels[rng.Below(kVowels.size())];
  current.f1 = first.f1 * speaker_scale;
  current.f2 = first.f2 * speaker_scale;
  current.f3 = std::max(2750.0, current.f2 + 450.0);
  current.f4 = current.f3 + 1000.0;
  current.gain = 0.05;
  current.time_s = 0.0;
  controls.push_back(current);

  double t = 0.03;
  constexpr double kTransition = 0.025;
  while (t < duration - 0.05) {
    VoiceControl next = current;
    const bool vowel = rng.Uniform() < 0.75;
    const double seg = vowel ? rng.Uniform(0.09, 0.22) : rng.Uniform(0.06, 0.12);
    if (vowel) {
      const VowelTarget v = kVowels[rng.Below(kVowels.size())];
      next.f1 = v.f1 * speaker_scale * rng.Uniform(0.93, 1.07);
      next.f2 = v.f2 * speaker_scale * rng.Uniform(0.93, 1.07);
      next.f2 = std::max(next.f2, next.f1 * 1.3);
      next.f3 = std::max(2750.0, next.f2 + 450.0) * rng.Uniform(0.98, 1.05);
      next.f4 = next.f3 + 1000.0;
      next.b1 = rng.Uniform(50.0, 110.0);
      next.b2 = rng.Uniform(70.0, 140.0);
      next.voicing = 1.0;
      next.frication = 0.0;
      next.tilt = rng.Uniform(0.05, 0.85);
      next.aspiration = rng.Uniform(0.0, 0.08);
      next.gain = rng.Uniform(0.35, 0.65);
    } else {
      next.voicing = 0.0;
      next.frication = rng.Uniform(0.6, 1.0);
      next.gain = rng.Uniform(0.15, 0.35);
    }
    next.time_s = t + kTransition;
    next.f0_hz = f0_at(next.time_s);
    controls.push_back(next);
    VoiceControl hold = next;
    hold.time_s = t + seg;
    hold.f0_hz = f0_at(hold.time_s);
    controls.push_back(hold);
    current = hold;
    t += seg;
  }
  VoiceControl tail = current;
  tail.time_s = duration;
  tail.gain = 0.05;
  tail.f0_hz = f0_at(duration);
  controls.push_back(tail);

  Waveform w =
      SynthesizeFormantSpeech(controls, duration, opt.sample_rate, MixSeed(seed, 0x5eedULL));
  const double peak = Peak(w.samples);
  if (peak > 0.0) {
    for (double& s : w.samples) s *= 0.7 / peak;
  }
  return w;
}

}  // namespace wavebender

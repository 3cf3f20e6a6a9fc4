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

#include "wavebender/features.h"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <sstream>

namespace wavebender {
namespace {

using Json = nlohmann::json;

constexpr std::array<std::string_view, kNumFeatures> kShortNames = {"f1", "f2", "f0", "centroid",
                                                                    "slope"};
constexpr std::array<std::string_view, kNumFeatures> kColumns = {"f1_hz", "f2_hz", "log_f0",
                                                                 "centroid_hz", "slope_db_per_hz"};

// Normalized cross-correlation between x[0:n-lag] and x[lag:n] for every lag
// in [lo, hi]; index i holds lag lo + i.
std::vector<double> Nccf(std::span<const double> x, int lo, int hi) {
  const int n = static_cast<int>(x.size());
  std::vector<double> prefix(n + 1, 0.0);
  for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i] * x[i];
  std::vector<double> out(hi - lo + 1, 0.0);
  for (int lag = lo; lag <= hi; ++lag) {
    const int m = n - lag;
    if (m <= 0) break;
    double cross = 0.0;
    for (int i = 0; i < m; ++i) cross += x[i] * x[i + lag];
    const double e0 = prefix[m];
    const double e1 = prefix[n] - prefix[lag];
    const double denom = std::sqrt(e0 * e1);
    out[lag - lo] = denom > 0.0 ? cross / denom : 0.0;
  }
  return out;
}

PitchFrame EstimatePitch(std::span<const double> frame, int sample_rate,
                         const ExtractionOptions& opt) {
  PitchFrame out;
  if (frame.size() < 4) return out;
  std::vector<double> x(frame.begin(), frame.end());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  for (double& v : x) v -= mean;

  const int n = static_cast<int>(x.size());
  const int lag_min = std::max(2, static_cast<int>(std::ceil(sample_rate / opt.f0_max_hz)));
  const int lag_max = std::min(n - 2, static_cast<int>(std::floor(sample_rate / opt.f0_min_hz)));
  if (lag_max <= lag_min) return out;
  // One extra lag on each side for the peak test and interpolation.
  const int lo = lag_min - 1, hi = lag_max + 1;
  std::vector<double> r = Nccf(x, lo, hi);
  auto at = [&](int lag) { return r[lag - lo]; };

  double best = -1.0;
  for (int lag = lag_min; lag <= lag_max; ++lag) best = std::max(best, at(lag));
  if (best <= 0.0) return out;

  // Smallest-lag local maximum close to the global peak; avoids picking a
  // multiple of the period.
  int chosen = -1;
  for (int lag = lag_min; lag <= lag_max; ++lag) {
    if (at(lag) >= 0.9 * best && at(lag) >= at(lag - 1) && at(lag) >= at(lag + 1)) {
      chosen = lag;
      break;
    }
  }
  if (chosen < 0) return out;

  const double ym = at(chosen - 1), y0 = at(chosen), yp = at(chosen + 1);
  const double curv = ym - 2.0 * y0 + yp;
  double delta = 0.0, peak = y0;
  if (curv < 0.0) {
    delta = std::clamp(0.5 * (ym - yp) / curv, -0.5, 0.5);
    peak = y0 - 0.25 * (ym - yp) * delta;
  }
  out.f0_hz = sample_rate / (chosen + delta);
  out.periodicity = std::min(1.0, peak);
  out.voiced = out.periodicity > opt.voicing_threshold;
  return out;
}

// Levinson-Durbin recursion; returns false on a degenerate autocorrelation.
bool Levinson(const std::vector<double>& r, int order, std::vector<double>& a) {
  a.assign(order + 1, 0.0);
  a[0] = 1.0;
  double err = r[0];
  if (!(err > 0.0)) return false;
  std::vector<double> prev(order + 1);
  for (int i = 1; i <= order; ++i) {
    double acc = r[i];
    for (int j = 1; j < i; ++j) acc += a[j] * r[i - j];
    const double k = -acc / err;
    prev = a;
    for (int j = 1; j < i; ++j) a[j] = prev[j] + k * prev[i - j];
    a[i] = k;
    err *= (1.0 - k * k);
    if (!(err > 0.0)) return false;
  }
  return true;
}

// Returns the two lowest narrow-band LPC resonances, if any.
std::optional<std::pair<double, double>> EstimateFormants(std::span<const double> frame,
                                                          int sample_rate,
                                                          const ExtractionOptions& opt,
                                                          const std::vector<double>& hamming) {
  const int n = static_cast<int>(frame.size());
  const int order = 2 + static_cast<int>(std::lround(sample_rate / 1000.0));
  std::vector<double> y(n);
  y[0] = frame[0];
  for (int i = 1; i < n; ++i) y[i] = frame[i] - opt.pre_emphasis * frame[i - 1];
  for (int i = 0; i < n; ++i) y[i] *= hamming[i];

  std::vector<double> r(order + 1, 0.0);
  for (int lag = 0; lag <= order; ++lag) {
    double acc = 0.0;
    for (int i = lag; i < n; ++i) acc += y[i] * y[i - lag];
    r[lag] = acc;
  }
  // Light white-noise conditioning (scale invariant).
  r[0] *= 1.0 + 1e-9;
  std::vector<double> a;
  if (!Levinson(r, order, a)) return std::nullopt;

  Matrix companion = Matrix::Zero(order, order);
  for (int j = 0; j < order; ++j) companion(0, j) = -a[j + 1];
  for (int i = 1; i < order; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Matrix> solver(companion, false);
  if (solver.info() != Eigen::Success) return std::nullopt;

  std::vector<double> candidates;
  const double nyquist = sample_rate / 2.0;
  for (const std::complex<double>& z : solver.eigenvalues()) {
    if (z.imag() <= 0.0) continue;
    const double freq = std::arg(z) * sample_rate / (2.0 * std::numbers::pi);
    const double bw = -std::log(std::abs(z)) * sample_rate / std::numbers::pi;
    if (bw < opt.max_formant_bandwidth_hz && freq > 50.0 && freq < nyquist - 50.0) {
      candidates.push_back(freq);
    }
  }
  if (candidates.size() < 2) return std::nullopt;
  std::sort(candidates.begin(), candidates.end());
  return std::make_pair(candidates[0], candidates[1]);
}

struct SpectralShape {
  double centroid = 0.0;
  double slope = 0.0;
};

SpectralShape EstimateSpectralShape(std::span<const double> frame, int sample_rate,
                                    const std::vector<double>& hann, RealFft& fft) {
  const int n = static_cast<int>(frame.size());
  std::vector<double> windowed(n);
  for (int i = 0; i < n; ++i) windowed[i] = frame[i] * hann[i];
  std::vector<std::complex<double>> spec;
  fft.Forward(windowed, spec);
  const int bins = static_cast<int>(spec.size());
  std::vector<double> mag(bins);
  double peak = 0.0;
  for (int k = 0; k < bins; ++k) {
    mag[k] = std::abs(spec[k]);
    peak = std::max(peak, mag[k]);
  }
  SpectralShape out;
  if (!(peak > 0.0)) return out;

  const double bin_hz = static_cast<double>(sample_rate) / n;
  double weighted = 0.0, total = 0.0;
  for (int k = 0; k < bins; ++k) {
    weighted += k * bin_hz * mag[k];
    total += mag[k];
  }
  out.centroid = weighted / total;

  // Floor relative to the frame peak keeps the slope gain invariant.
  const double floor = 1e-10 * peak;
  double f_mean = 0.0, y_mean = 0.0;
  std::vector<double> db(bins);
  for (int k = 0; k < bins; ++k) {
    db[k] = 20.0 * std::log10(mag[k] + floor);
    f_mean += k * bin_hz;
    y_mean += db[k];
  }
  f_mean /= bins;
  y_mean /= bins;
  double sxy = 0.0, sxx = 0.0;
  for (int k = 0; k < bins; ++k) {
    const double df = k * bin_hz - f_mean;
    sxy += df * (db[k] - y_mean);
    sxx += df * df;
  }
  out.slope = sxy / sxx;
  return out;
}

// Periodicity is measured on the frame's unpadded samples only; reflected
// padding reverses the waveform and corrupts the lag structure.
std::span<const double> PitchSpan(const std::vector<double>& samples, int t,
                                  const FrameConfig& fc) {
  const long pad = PaddingSamples(fc);
  const long start = static_cast<long>(t) * fc.hop - pad;
  const long end = start + fc.frame_length;
  const long lo = std::max(0L, start);
  const long hi = std::min(static_cast<long>(samples.size()), end);
  return std::span<const double>(samples.data() + lo, hi - lo);
}

void CheckExtractionInput(const Waveform& wave, const ExtractionOptions& opt) {
  ValidateWaveform(wave);
  ValidateFrameConfig(opt.frames);
  if (!(opt.f0_min_hz > 0.0 && opt.f0_max_hz > opt.f0_min_hz)) {
    Fail(ErrorKind::kInvalidArgument, "extract", "invalid f0 search range");
  }
}

std::string Trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  size_t e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double ParseNumber(std::string_view text, std::string_view context) {
  std::string t = Trim(text);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    Fail(ErrorKind::kInvalidArgument, "parse", "bad number '" + t + "' in " + std::string(context));
  }
  return v;
}

std::vector<std::string_view> Split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string_view FeatureName(Feature f) { return kShortNames[Index(f)]; }
std::string_view FeatureColumn(Feature f) { return kColumns[Index(f)]; }

std::optional<Feature> ParseFeature(std::string_view raw) {
  std::string name(raw);
  std::transform(name.begin(), name.end(), name.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Feature f : kAllFeatures) {
    if (name == FeatureName(f) || name == FeatureColumn(f)) return f;
  }
  if (name == "log_f0" || name == "pitch") return Feature::kLogF0;
  return std::nullopt;
}

void ValidateTrack(const ParameterTrack& track) {
  const int t = track.frames();
  if (t < 1 || track.values.cols() != kNumFeatures) {
    Fail(ErrorKind::kInvalidArgument, "track", "expected a T x 5 parameter matrix with T >= 1");
  }
  if (static_cast<int>(track.voicing.size()) != t) {
    Fail(ErrorKind::kInvalidArgument, "track", "voicing length does not match frame count");
  }
  if (!track.values.allFinite()) {
    Fail(ErrorKind::kInvalidArgument, "track", "non-finite parameter value");
  }
  for (int i = 0; i < t; ++i) {
    if (track.voicing[i] > 1) {
      Fail(ErrorKind::kInvalidArgument, "track", "voicing flag must be 0 or 1");
    }
    if (!track.meta.normalized && track.voicing[i]) {
      const double f1 = track.values(i, Index(Feature::kF1));
      const double f2 = track.values(i, Index(Feature::kF2));
      if (!(f1 > 0.0 && f2 >= f1)) {
        Fail(ErrorKind::kInvalidArgument, "track",
             "F2 >= F1 > 0 violated on voiced frame " + std::to_string(i));
      }
    }
  }
}

std::vector<PitchFrame> TrackPitch(const Waveform& wave, const ExtractionOptions& options) {
  CheckExtractionInput(wave, options);
  const int frames = FrameCount(wave.samples.size(), options.frames);
  std::vector<PitchFrame> out(frames);
  for (int t = 0; t < frames; ++t) {
    out[t] = EstimatePitch(PitchSpan(wave.samples, t, options.frames), wave.sample_rate, options);
  }
  return out;
}

bool InterpolateUnvoiced(std::vector<double>& log_f0, const std::vector<uint8_t>& voicing) {
  const int n = static_cast<int>(log_f0.size());
  std::vector<int> voiced;
  for (int i = 0; i < n; ++i) {
    if (voicing[i]) voiced.push_back(i);
  }
  if (voiced.empty()) return false;
  for (int i = 0; i < voiced.front(); ++i) log_f0[i] = log_f0[voiced.front()];
  for (int i = voiced.back() + 1; i < n; ++i) log_f0[i] = log_f0[voiced.back()];
  for (size_t k = 0; k + 1 < voiced.size(); ++k) {
    const int a = voiced[k], b = voiced[k + 1];
    if (b - a < 2) continue;
    const double la = log_f0[a], lb = log_f0[b];
    for (int i = a + 1; i < b; ++i) {
      log_f0[i] = la + (lb - la) * static_cast<double>(i - a) / (b - a);
    }
  }
  return true;
}

nlohmann::json ExtractionOptionsToJson(const ExtractionOptions& o) {
  return {{"frame_length", o.frames.frame_length},
          {"hop", o.frames.hop},
          {"reflect_padding", o.frames.padding == FramePadding::kReflect},
          {"f0_min_hz", o.f0_min_hz},
          {"f0_max_hz", o.f0_max_hz},
          {"voicing_threshold", o.voicing_threshold},
          {"pre_emphasis", o.pre_emphasis},
          {"max_formant_bandwidth_hz", o.max_formant_bandwidth_hz},
          {"unvoiced_log_f0_fallback", o.unvoiced_log_f0_fallback}};
}

ExtractionOptions ExtractionOptionsFromJson(const nlohmann::json& j) {
  ExtractionOptions o;
  try {
    o.frames.frame_length = j.value("frame_length", o.frames.frame_length);
    o.frames.hop = j.value("hop", o.frames.hop);
    o.frames.padding =
        j.value("reflect_padding", true) ? FramePadding::kReflect : FramePadding::kNone;
    o.f0_min_hz = j.value("f0_min_hz", o.f0_min_hz);
    o.f0_max_hz = j.value("f0_max_hz", o.f0_max_hz);
    o.voicing_threshold = j.value("voicing_threshold", o.voicing_threshold);
    o.pre_emphasis = j.value("pre_emphasis", o.pre_emphasis);
    o.max_formant_bandwidth_hz = j.value("max_formant_bandwidth_hz", o.max_formant_bandwidth_hz);
    o.unvoiced_log_f0_fallback = j.value("unvoiced_log_f0_fallback", o.unvoiced_log_f0_fallback);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, "extraction", std::string("bad options: ") + e.what());
  }
  ValidateFrameConfig(o.frames);
  if (!(o.f0_min_hz > 0.0 && o.f0_min_hz < o.f0_max_hz)) {
    Fail(ErrorKind::kInvalidArgument, "extraction", "f0 range must be positive and ordered");
  }
  return o;
}

ParameterTrack ExtractParameters(const Waveform& wave, const ExtractionOptions& options) {
  CheckExtractionInput(wave, options);
  const FrameConfig& fc = options.frames;
  const int frames = FrameCount(wave.samples.size(), fc);
  const std::vector<double> padded = PadSignal(wave.samples, fc);

  const std::vector<double> hann = HannWindow(fc.frame_length, true);
  std::vector<double> hamming(fc.frame_length);
  for (int i = 0; i < fc.frame_length; ++i) {
    hamming[i] =
        0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / std::max(1, fc.frame_length - 1));
  }
  RealFft fft(fc.frame_length + (fc.frame_length & 1));

  ParameterTrack track;
  track.values = Matrix::Zero(frames, kNumFeatures);
  track.voicing.assign(frames, 0);
  track.meta.frame_rate = static_cast<double>(wave.sample_rate) / fc.hop;
  track.meta.sample_rate = wave.sample_rate;

  std::vector<double> log_f0(frames, 0.0);
  std::vector<std::optional<std::pair<double, double>>> formants(frames);
  for (int t = 0; t < frames; ++t) {
    std::span<const double> frame(padded.data() + t * fc.hop, fc.frame_length);
    const PitchFrame pitch =
        EstimatePitch(PitchSpan(wave.samples, t, fc), wave.sample_rate, options);
    track.voicing[t] = pitch.voiced ? 1 : 0;
    if (pitch.voiced) log_f0[t] = std::log(pitch.f0_hz);
    formants[t] = EstimateFormants(frame, wave.sample_rate, options, hamming);
    const SpectralShape shape = EstimateSpectralShape(frame, wave.sample_rate, hann, fft);
    track.values(t, Index(Feature::kCentroid)) = shape.centroid;
    track.values(t, Index(Feature::kSlope)) = shape.slope;
  }

  if (!InterpolateUnvoiced(log_f0, track.voicing)) {
    std::fill(log_f0.begin(), log_f0.end(), options.unvoiced_log_f0_fallback);
    track.meta.all_unvoiced = true;
    track.meta.warnings.push_back("no voiced frames; log_f0 filled with the corpus fallback value");
  }

  // Frames without two formant candidates reuse the previous frame; leading
  // gaps take the first tracked frame.
  int first_valid = -1;
  for (int t = 0; t < frames && first_valid < 0; ++t) {
    if (formants[t]) first_valid = t;
  }
  std::pair<double, double> current{500.0, 1500.0};
  if (first_valid < 0) {
    track.meta.warnings.push_back("no frame produced two formant candidates; using 500/1500 Hz");
  } else {
    current = *formants[first_valid];
  }
  for (int t = 0; t < frames; ++t) {
    if (formants[t]) current = *formants[t];
    track.values(t, Index(Feature::kF1)) = current.first;
    track.values(t, Index(Feature::kF2)) = current.second;
    track.values(t, Index(Feature::kLogF0)) = log_f0[t];
  }
  return track;
}

std::string NormalizationStats::id() const {
  std::string canonical;
  for (int i = 0; i < kNumFeatures; ++i) {
    canonical += FormatDouble(mean[i]) + "," + FormatDouble(std[i]) + ";";
  }
  return Fingerprint(canonical);
}

NormalizationStats FitNormalization(const std::vector<ParameterTrack>& tracks) {
  if (tracks.empty()) {
    Fail(ErrorKind::kInvalidArgument, "normalization", "empty corpus");
  }
  // Chan et al. pairwise merge of per-track moments, in corpus order.
  double count = 0.0;
  std::array<double, kNumFeatures> mean{}, m2{};
  for (const ParameterTrack& track : tracks) {
    if (track.meta.normalized) {
      Fail(ErrorKind::kInvalidArgument, "normalization",
           "cannot fit statistics on normalized tracks");
    }
    const double n = track.frames();
    if (n == 0) continue;
    for (int f = 0; f < kNumFeatures; ++f) {
      const auto col = track.values.col(f);
      const double local_mean = col.mean();
      const double local_m2 = (col.array() - local_mean).square().sum();
      const double delta = local_mean - mean[f];
      const double total = count + n;
      mean[f] += delta * n / total;
      m2[f] += local_m2 + delta * delta * count * n / total;
    }
    count += n;
  }
  if (count < 2) {
    Fail(ErrorKind::kInvalidArgument, "normalization", "need at least two pooled frames");
  }
  NormalizationStats stats;
  for (int f = 0; f < kNumFeatures; ++f) {
    stats.mean[f] = mean[f];
    stats.std[f] = std::max(kStdFloor, std::sqrt(m2[f] / count));
  }
  return stats;
}

ParameterTrack Normalize(const ParameterTrack& track, const NormalizationStats& stats) {
  if (track.meta.normalized) {
    Fail(ErrorKind::kInvalidArgument, "normalize", "track is already normalized");
  }
  if (track.values.cols() != kNumFeatures) {
    Fail(ErrorKind::kInvalidArgument, "normalize", "feature count mismatch");
  }
  ParameterTrack out = track;
  for (int f = 0; f < kNumFeatures; ++f) {
    out.values.col(f) = (track.values.col(f).array() - stats.mean[f]) / stats.std[f];
  }
  out.meta.normalized = true;
  out.meta.stats_id = stats.id();
  return out;
}

ParameterTrack Denormalize(const ParameterTrack& track, const NormalizationStats& stats) {
  if (!track.meta.normalized) {
    Fail(ErrorKind::kInvalidArgument, "denormalize", "track is not normalized");
  }
  if (!track.meta.stats_id.empty() && track.meta.stats_id != stats.id()) {
    Fail(ErrorKind::kFingerprintMismatch, "denormalize",
         "track was normalized with stats " + track.meta.stats_id + " but stats " + stats.id() +
             " were supplied");
  }
  ParameterTrack out = track;
  for (int f = 0; f < kNumFeatures; ++f) {
    out.values.col(f) = track.values.col(f).array() * stats.std[f] + stats.mean[f];
  }
  out.meta.normalized = false;
  out.meta.stats_id = stats.id();
  return out;
}

std::string FormatStats(const NormalizationStats& stats) {
  std::ostringstream out;
  out << "# wavebender normalization statistics (population std)\n";
  out << "id = " << stats.id() << "\n";
  for (Feature f : kAllFeatures) {
    out << "mean." << FeatureColumn(f) << " = " << FormatDouble(stats.mean[Index(f)]) << "\n";
  }
  for (Feature f : kAllFeatures) {
    out << "std." << FeatureColumn(f) << " = " << FormatDouble(stats.std[Index(f)]) << "\n";
  }
  return out.str();
}

NormalizationStats ParseStats(std::string_view text) {
  NormalizationStats stats;
  std::array<bool, kNumFeatures> have_mean{}, have_std{};
  std::string declared_id;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::string t = Trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      Fail(ErrorKind::kInvalidArgument, "stats", "expected key = value: " + t);
    }
    std::string key = Trim(std::string_view(t).substr(0, eq));
    std::string value = Trim(std::string_view(t).substr(eq + 1));
    if (key == "id") {
      declared_id = value;
      continue;
    }
    bool matched = false;
    for (Feature f : kAllFeatures) {
      const std::string col(FeatureColumn(f));
      if (key == "mean." + col) {
        stats.mean[Index(f)] = ParseNumber(value, key);
        have_mean[Index(f)] = matched = true;
      } else if (key == "std." + col) {
        stats.std[Index(f)] = ParseNumber(value, key);
        have_std[Index(f)] = matched = true;
      }
    }
    if (!matched) {
      Fail(ErrorKind::kInvalidArgument, "stats", "unknown key " + key);
    }
  }
  for (int f = 0; f < kNumFeatures; ++f) {
    if (!have_mean[f] || !have_std[f]) {
      Fail(ErrorKind::kInvalidArgument, "stats", "missing mean/std entries");
    }
    if (!(stats.std[f] > 0.0) || !std::isfinite(stats.std[f]) || !std::isfinite(stats.mean[f])) {
      Fail(ErrorKind::kInvalidArgument, "stats", "std must be positive and finite");
    }
  }
  if (!declared_id.empty() && declared_id != stats.id()) {
    Fail(ErrorKind::kChecksum, "stats",
         "declared id " + declared_id + " does not match contents " + stats.id());
  }
  return stats;
}

void SaveStats(const std::string& path, const NormalizationStats& stats) {
  WriteFileBytes(path, FormatStats(stats));
}

NormalizationStats LoadStats(const std::string& path) { return ParseStats(ReadFileBytes(path)); }

std::vector<double> AverageRanks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

CorrelationMatrix SpearmanCorrelation(const std::vector<ParameterTrack>& tracks) {
  Eigen::Index total = 0;
  for (const ParameterTrack& t : tracks) total += t.values.rows();
  if (total < 3) {
    Fail(ErrorKind::kInvalidArgument, "spearman", "need at least three pooled frames");
  }
  Matrix pooled(total, kNumFeatures);
  Eigen::Index row = 0;
  for (const ParameterTrack& t : tracks) {
    if (t.values.cols() != kNumFeatures) {
      Fail(ErrorKind::kInvalidArgument, "spearman", "feature count mismatch");
    }
    pooled.middleRows(row, t.values.rows()) = t.values;
    row += t.values.rows();
  }
  Matrix centered(total, kNumFeatures);
  std::array<double, kNumFeatures> norm{};
  for (int f = 0; f < kNumFeatures; ++f) {
    std::vector<double> col(pooled.col(f).data(), pooled.col(f).data() + total);
    std::vector<double> r = AverageRanks(col);
    const double mean = (static_cast<double>(total) + 1.0) / 2.0;
    for (Eigen::Index i = 0; i < total; ++i) centered(i, f) = r[i] - mean;
    norm[f] = centered.col(f).norm();
  }
  CorrelationMatrix out;
  out.rho = Matrix::Identity(kNumFeatures, kNumFeatures);
  for (int f = 0; f < kNumFeatures; ++f) {
    if (norm[f] == 0.0) {
      out.warnings.push_back("feature " + std::string(FeatureName(kAllFeatures[f])) +
                             " is constant; its correlations are set to 0");
    }
  }
  for (int a = 0; a < kNumFeatures; ++a) {
    for (int b = a + 1; b < kNumFeatures; ++b) {
      double rho = 0.0;
      if (norm[a] > 0.0 && norm[b] > 0.0) {
        rho = centered.col(a).dot(centered.col(b)) / (norm[a] * norm[b]);
        rho = std::clamp(rho, -1.0, 1.0);
      }
      out.rho(a, b) = out.rho(b, a) = rho;
    }
  }
  return out;
}

std::vector<Feature> SelectDecorrelatedFeatures(const CorrelationMatrix& corr, double threshold) {
  std::vector<bool> alive(kNumFeatures, true);
  while (true) {
    int worst = -1, worst_count = 0;
    for (int a = 0; a < kNumFeatures; ++a) {
      if (!alive[a]) continue;
      int count = 0;
      for (int b = 0; b < kNumFeatures; ++b) {
        if (b != a && alive[b] && std::abs(corr.rho(a, b)) > threshold) ++count;
      }
      if (count > worst_count) {
        worst = a;
        worst_count = count;
      }
    }
    if (worst < 0) break;
    alive[worst] = false;
  }
  std::vector<Feature> out;
  for (int f = 0; f < kNumFeatures; ++f) {
    if (alive[f]) out.push_back(kAllFeatures[f]);
  }
  return out;
}

std::string FormatTrackCsv(const ParameterTrack& track) {
  std::string out = "f1_hz,f2_hz,log_f0,voicing,centroid_hz,slope_db_per_hz\n";
  for (int t = 0; t < track.frames(); ++t) {
    const auto v = [&](Feature f) { return FormatDouble(track.values(t, Index(f))); };
    out += v(Feature::kF1) + "," + v(Feature::kF2) + "," + v(Feature::kLogF0) + "," +
           std::to_string(track.voicing[t]) + "," + v(Feature::kCentroid) + "," +
           v(Feature::kSlope) + "\n";
  }
  return out;
}

std::string FormatTrackMetadata(const TrackMetadata& meta) {
  Json j;
  j["frame_rate"] = meta.frame_rate;
  j["sample_rate"] = meta.sample_rate;
  j["normalized"] = meta.normalized;
  j["stats_id"] = meta.stats_id;
  j["all_unvoiced"] = meta.all_unvoiced;
  j["warnings"] = meta.warnings;
  return j.dump(2) + "\n";
}

TrackMetadata ParseTrackMetadata(std::string_view metadata_json) {
  Json j = Json::parse(metadata_json, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    Fail(ErrorKind::kInvalidArgument, "track", "malformed metadata JSON");
  }
  TrackMetadata meta;
  try {
    meta.frame_rate = j.value("frame_rate", 0.0);
    meta.sample_rate = j.value("sample_rate", 0);
    meta.normalized = j.value("normalized", false);
    meta.stats_id = j.value("stats_id", std::string());
    meta.all_unvoiced = j.value("all_unvoiced", false);
    meta.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const Json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, "track", std::string("bad metadata: ") + e.what());
  }
  return meta;
}

ParameterTrack ParseTrack(std::string_view csv, std::string_view metadata_json) {
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line) ||
      Trim(line) != "f1_hz,f2_hz,log_f0,voicing,centroid_hz,slope_db_per_hz") {
    Fail(ErrorKind::kInvalidArgument, "track", "unexpected CSV header");
  }
  std::vector<std::array<double, kNumFeatures>> rows;
  std::vector<uint8_t> voicing;
  while (std::getline(in, line)) {
    if (Trim(line).empty()) continue;
    auto cells = Split(line, ',');
    if (cells.size() != 6) {
      Fail(ErrorKind::kInvalidArgument, "track",
           "expected 6 columns on row " + std::to_string(rows.size() + 1));
    }
    std::array<double, kNumFeatures> r{};
    r[Index(Feature::kF1)] = ParseNumber(cells[0], "f1_hz");
    r[Index(Feature::kF2)] = ParseNumber(cells[1], "f2_hz");
    r[Index(Feature::kLogF0)] = ParseNumber(cells[2], "log_f0");
    const double v = ParseNumber(cells[3], "voicing");
    if (v != 0.0 && v != 1.0) {
      Fail(ErrorKind::kInvalidArgument, "track", "voicing must be 0 or 1");
    }
    r[Index(Feature::kCentroid)] = ParseNumber(cells[4], "centroid_hz");
    r[Index(Feature::kSlope)] = ParseNumber(cells[5], "slope_db_per_hz");
    rows.push_back(r);
    voicing.push_back(static_cast<uint8_t>(v));
  }
  ParameterTrack track;
  track.values.resize(static_cast<Eigen::Index>(rows.size()), kNumFeatures);
  for (size_t i = 0; i < rows.size(); ++i) {
    for (int f = 0; f < kNumFeatures; ++f) track.values(i, f) = rows[i][f];
  }
  track.voicing = std::move(voicing);
  if (!metadata_json.empty()) track.meta = ParseTrackMetadata(metadata_json);
  ValidateTrack(track);
  return track;
}

void SaveTrack(const std::string& csv_path, const ParameterTrack& track) {
  WriteFileBytes(csv_path, FormatTrackCsv(track));
  WriteFileBytes(csv_path + ".meta.json", FormatTrackMetadata(track.meta));
}

ParameterTrack LoadTrack(const std::string& csv_path) {
  std::string meta;
  try {
    meta = ReadFileBytes(csv_path + ".meta.json");
  } catch (const Error&) {
    meta.clear();
  }
  return ParseTrack(ReadFileBytes(csv_path), meta);
}

}  // namespace wavebender

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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Oracles here are written independently of
// the library code they check.
//
// The desk-scale model is trained once per work directory and reused while
// its configuration and corpus are unchanged; the recorded training time is
// reported with the run that produced it.

#include <sys/wait.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wavebender/audio.h"
#include "wavebender/corpus.h"
#include "wavebender/enhancement_gan.h"
#include "wavebender/eval.h"
#include "wavebender/features.h"
#include "wavebender/manipulation.h"
#include "wavebender/service.h"
#include "wavebender/trainer.h"
#include "wavebender/vocoder.h"
#include "wavebender/wavebender_net.h"

#ifndef WAVEBENDER_CLI
#error "WAVEBENDER_CLI must name the command-line binary"
#endif
#ifndef WAVEBENDER_CONFIGS
#error "WAVEBENDER_CONFIGS must name the configs directory"
#endif

namespace wb = wavebender;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

// ---- pinned tolerances ----
constexpr double kF0Tolerance = 0.02;  // relative, 100 Hz sawtooth
constexpr double kGainTolerance = 1e-6;
constexpr double kInterpTolerance = 1e-12;
constexpr double kDspSeconds = 120.0;
constexpr double kOracleTolerance = 1e-10;
constexpr double kOracleSeconds = 60.0;
constexpr double kGroupNormTolerance = 1e-5;
constexpr double kGradientTolerance = 1e-3;
constexpr double kNetworkSeconds = 300.0;
constexpr double kOverfitRatio = 0.05;
constexpr double kDegenerateTolerance = 1e-6;
constexpr double kOverfitSeconds = 900.0;
constexpr double kPipelineVsVocoder = 2.0;
constexpr double kDeskSeconds = 4.0 * 3600.0;
constexpr double kResumeTolerance = 1e-6;
constexpr int kDeskUtterances = 50;
constexpr int kResumeSteps = 3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

double MaxAbs(const wb::Matrix& a, const wb::Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

double MaxParamDiff(const wb::nn::ParameterSet& a, const wb::nn::ParameterSet& b) {
  double d = 0.0;
  for (const auto& [name, p] : a) d = std::max(d, MaxAbs(p.value, b.value(name)));
  return d;
}

wb::Matrix Random(Eigen::Index rows, Eigen::Index cols, wb::Rng& rng, double scale = 1.0) {
  wb::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.Normal();
  return m;
}

// ---- independent oracles ----

double OracleXSigmoid(const wb::Matrix& pred, const wb::Matrix& target) {
  double sum = 0.0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      const double e = pred(r, c) - target(r, c);
      sum += e * (2.0 / (1.0 + std::exp(-e)) - 1.0);
    }
  }
  return sum / static_cast<double>(pred.size());
}

double OracleMeanSquare(const wb::Matrix& x, double label) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) sum += (x.data()[i] - label) * (x.data()[i] - label);
  return sum / static_cast<double>(x.size());
}

std::vector<double> OracleRanks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double below = 0, tied = 0;
    for (size_t j = 0; j < x.size(); ++j) {
      below += x[j] < x[i];
      tied += (j != i && x[j] == x[i]);
    }
    r[i] = 1.0 + below + 0.5 * tied;
  }
  return r;
}

double OraclePearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

wb::Waveform Sawtooth(double hz, double seconds, int rate) {
  wb::Waveform w;
  w.sample_rate = rate;
  const auto n = static_cast<size_t>(seconds * rate);
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double phase = std::fmod(hz * static_cast<double>(i) / rate, 1.0);
    w.samples[i] = 0.5 * (2.0 * phase - 1.0);
  }
  return w;
}

wb::ParameterTrack RandomTrack(int frames, wb::Rng& rng) {
  wb::ParameterTrack t;
  t.values.resize(frames, wb::kNumFeatures);
  t.voicing.resize(frames);
  for (int i = 0; i < frames; ++i) {
    const double f1 = rng.Uniform(250, 900);
    t.values(i, 0) = f1;
    t.values(i, 1) = f1 + rng.Uniform(200, 2000);
    t.values(i, 2) = std::log(rng.Uniform(80, 300));
    t.values(i, 3) = rng.Uniform(300, 5000);
    t.values(i, 4) = rng.Uniform(-0.02, 0.0);
    t.voicing[i] = rng.Uniform() < 0.7;
  }
  return t;
}

// Worst relative error between analytic and central-difference gradients.
double CheckGradients(wb::nn::ParameterSet& params, const std::function<double()>& loss,
                      const std::function<void()>& backward, double eps = 1e-5) {
  params.ZeroGrad();
  backward();
  double worst = 0.0;
  for (auto& [name, p] : params) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data()[i];
      p.value.data()[i] = saved + eps;
      const double up = loss();
      p.value.data()[i] = saved - eps;
      const double down = loss();
      p.value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p.grad.data()[i];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-7});
      worst = std::max(worst, std::abs(numeric - analytic) / scale);
    }
  }
  return worst;
}

void Randomize(wb::nn::ParameterSet& params, wb::Rng& rng, double scale) {
  for (auto& [name, p] : params) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = scale * rng.Normal();
  }
}

int RunCommand(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---- shared desk-scale state ----

struct Desk {
  std::string root;
  wb::TrainingConfig config;
  std::vector<wb::Utterance> corpus;
  std::vector<std::string> test_ids;
  double train_seconds = 0.0;
  bool cached = false;
  std::shared_ptr<const wb::Pipeline> pipeline;
  std::vector<const wb::Utterance*> test;
};

wb::TrainingConfig DeskConfig(const std::string& corpus) {
  wb::TrainingConfig c;
  c.corpus_path = corpus;
  c.corpus_limit = kDeskUtterances;
  c.split_fraction = 0.9;
  c.pretrain_epochs = 20;
  c.joint_epochs = 10;
  return c;
}

// ---- criteria ----

Outcome DspOracles(Desk& desk) {
  const auto start = Clock::now();
  std::vector<std::string> notes;
  bool ok = true;

  // 100 Hz sawtooth.
  const wb::ParameterTrack saw = wb::ExtractParameters(Sawtooth(100.0, 1.0, 22050));
  double worst_f0 = 0.0;
  int voiced = 0;
  for (int t = 0; t < saw.frames(); ++t) {
    voiced += saw.voicing[t];
    const double f0 = std::exp(saw.values(t, wb::Index(wb::Feature::kLogF0)));
    worst_f0 = std::max(worst_f0, std::abs(f0 / 100.0 - 1.0));
  }
  ok &= voiced == saw.frames() && worst_f0 <= kF0Tolerance;
  notes.push_back("sawtooth f0 worst " + Fmt(100.0 * worst_f0, 3) + "% (<=2%), voiced " +
                  std::to_string(voiced) + "/" + std::to_string(saw.frames()));

  // Gain invariance on corpus audio.
  double worst_gain = 0.0;
  bool voicing_same = true;
  for (int i = 0; i < 3; ++i) {
    const wb::Waveform& w = desk.corpus[i].wave;
    const wb::ParameterTrack ref = wb::ExtractParameters(w);
    for (double g : {0.5, 0.1}) {
      wb::Waveform s = w;
      for (double& x : s.samples) x *= g;
      const wb::ParameterTrack t = wb::ExtractParameters(s);
      voicing_same &= t.voicing == ref.voicing;
      for (int r = 0; r < ref.frames(); ++r) {
        for (int f = 0; f < wb::kNumFeatures; ++f) {
          const double a = ref.values(r, f), b = t.values(r, f);
          worst_gain = std::max(worst_gain, std::abs(a - b) / std::max(1.0, std::abs(a)));
        }
      }
    }
  }
  ok &= voicing_same && worst_gain <= kGainTolerance;
  notes.push_back("gain rel. diff " + Fmt(worst_gain, 2) + " (<=1e-6)");

  // Interpolation against a direct construction.
  wb::Rng rng(11);
  double worst_interp = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 3 + static_cast<int>(rng.Below(80));
    std::vector<double> v(n);
    std::vector<uint8_t> voicing(n);
    for (int i = 0; i < n; ++i) {
      voicing[i] = rng.Uniform() < 0.4;
      v[i] = voicing[i] ? rng.Uniform(4.0, 6.0) : -7.0;
    }
    std::vector<int> idx;
    for (int i = 0; i < n; ++i) {
      if (voicing[i]) idx.push_back(i);
    }
    std::vector<double> expect = v;
    for (int i = 0; i < n && !idx.empty(); ++i) {
      if (voicing[i]) continue;
      int lo = -1, hi = -1;
      for (int k : idx) {
        if (k < i) lo = k;
        if (k > i && hi < 0) hi = k;
      }
      if (lo < 0) {
        expect[i] = v[hi];
      } else if (hi < 0) {
        expect[i] = v[lo];
      } else {
        expect[i] = v[lo] + (v[hi] - v[lo]) * (i - lo) / static_cast<double>(hi - lo);
      }
    }
    std::vector<double> got = v;
    const bool any = wb::InterpolateUnvoiced(got, voicing);
    if (any != !idx.empty()) worst_interp = INFINITY;
    if (!any) continue;
    for (int i = 0; i < n; ++i) worst_interp = std::max(worst_interp, std::abs(got[i] - expect[i]));
  }
  ok &= worst_interp <= kInterpTolerance;
  notes.push_back("interpolation max err " + Fmt(worst_interp, 2));

  // F2 >= F1 > 0 on the desk corpus.
  long violations = 0, frames = 0;
  for (const wb::Utterance& u : desk.corpus) {
    for (int t = 0; t < u.track.frames(); ++t) {
      if (!u.track.voicing[t]) continue;
      ++frames;
      const double f1 = u.track.values(t, 0), f2 = u.track.values(t, 1);
      violations += !(f1 > 0.0 && f2 >= f1);
    }
  }
  ok &= violations == 0 && frames > 0;
  notes.push_back("F2>=F1>0 violations " + std::to_string(violations) + " of " +
                  std::to_string(frames) + " voiced frames in " +
                  std::to_string(desk.corpus.size()) + " utterances");

  const double secs = Seconds(start);
  ok &= secs < kDspSeconds;
  std::string detail;
  for (const auto& n : notes) detail += n + "; ";
  return {ok, detail + Fmt(secs, 3) + " s (<120 s)"};
}

Outcome LossOracles() {
  const auto start = Clock::now();
  wb::Rng rng(23);
  double worst = 0.0;
  std::map<std::string, double> err;

  for (double scale : {0.01, 1.0, 8.0}) {
    const wb::Matrix p = Random(37, 80, rng, scale), t = Random(37, 80, rng, scale);
    err["xsigmoid"] =
        std::max(err["xsigmoid"], std::abs(wb::XSigmoidLoss(p, t) - OracleXSigmoid(p, t)));

    const wb::Matrix real = Random(5, 13, rng, scale), fake = Random(5, 13, rng, scale);
    const double a = rng.Uniform(0.5, 1.0), b = rng.Uniform(-0.5, 0.2);
    const wb::LsganLosses l = wb::ComputeLsganLosses(real, fake, a, b);
    const double d = 0.5 * OracleMeanSquare(real, a) + 0.5 * OracleMeanSquare(fake, b);
    const double g = 0.5 * OracleMeanSquare(fake, a);
    err["lsgan"] = std::max({err["lsgan"], std::abs(l.d_loss - d), std::abs(l.g_loss - g)});

    wb::GanConfig cfg;
    cfg.recon_weight_pre = rng.Uniform(0.1, 2.0);
    cfg.recon_weight_post = rng.Uniform(0.1, 2.0);
    cfg.adversarial_weight = rng.Uniform(0.1, 2.0);
    const wb::Matrix post = Random(37, 80, rng, scale);
    const double composite = cfg.recon_weight_pre * OracleXSigmoid(p, t) +
                             cfg.recon_weight_post * OracleXSigmoid(post, t) +
                             cfg.adversarial_weight * g;
    err["composite"] = std::max(
        err["composite"], std::abs(wb::CompositeObjective(p, post, t, l.g_loss, cfg) - composite));
  }

  // Spearman over pooled frames, with ties.
  std::vector<wb::ParameterTrack> tracks;
  for (int k = 0; k < 3; ++k) {
    wb::ParameterTrack t = RandomTrack(60 + 17 * k, rng);
    for (int i = 0; i < t.frames(); i += 4) t.values(i, 3) = std::round(t.values(i, 3) / 500) * 500;
    tracks.push_back(t);
  }
  const wb::CorrelationMatrix rho = wb::SpearmanCorrelation(tracks);
  std::vector<std::vector<double>> cols(wb::kNumFeatures);
  for (const auto& t : tracks) {
    for (int i = 0; i < t.frames(); ++i) {
      for (int f = 0; f < wb::kNumFeatures; ++f) cols[f].push_back(t.values(i, f));
    }
  }
  std::vector<std::vector<double>> ranks;
  for (const auto& c : cols) ranks.push_back(OracleRanks(c));
  for (int a = 0; a < wb::kNumFeatures; ++a) {
    for (int b = 0; b < wb::kNumFeatures; ++b) {
      const double want = a == b ? 1.0 : OraclePearson(ranks[a], ranks[b]);
      err["spearman"] = std::max(err["spearman"], std::abs(rho.rho(a, b) - want));
    }
  }

  // Copy-synthesis error arithmetic: pooled squared z-differences.
  wb::NormalizationStats stats;
  for (int f = 0; f < wb::kNumFeatures; ++f) {
    stats.mean[f] = rng.Uniform(-1, 1);
    stats.std[f] = rng.Uniform(0.01, 500.0);
  }
  std::vector<wb::UtteranceErrors> utts;
  std::array<double, wb::kNumFeatures> sum{};
  long frames = 0;
  for (int k = 0; k < 4; ++k) {
    const wb::ParameterTrack d = RandomTrack(30 + 11 * k, rng);
    const wb::ParameterTrack r = RandomTrack(30 + 11 * k + (k % 3) - 1, rng);
    utts.push_back(wb::CompareTracks(d, r, stats, 2));
    const int n = std::min(d.frames(), r.frames());
    for (int t = 2; t < n - 2; ++t) {
      ++frames;
      for (int f = 0; f < wb::kNumFeatures; ++f) {
        const double z = (d.values(t, f) - r.values(t, f)) / stats.std[f];
        sum[f] += z * z;
      }
    }
  }
  const wb::PooledErrors pooled = wb::Pool(utts);
  double overall = 0.0;
  for (int f = 0; f < wb::kNumFeatures; ++f) {
    err["copy_synthesis_error"] =
        std::max(err["copy_synthesis_error"], std::abs(pooled.mse[f] - sum[f] / frames));
    overall += sum[f] / frames / wb::kNumFeatures;
  }
  err["copy_synthesis_error"] =
      std::max(err["copy_synthesis_error"], std::abs(pooled.Overall() - overall));
  if (pooled.frames != frames) err["copy_synthesis_error"] = INFINITY;

  std::string detail;
  for (const auto& [k, v] : err) {
    worst = std::max(worst, v);
    detail += k + " " + Fmt(v, 2) + ", ";
  }
  const double secs = Seconds(start);
  return {worst <= kOracleTolerance && secs < kOracleSeconds,
          detail + "tolerance 1e-10; " + Fmt(secs, 3) + " s (<60 s)"};
}

Outcome NetworkCorrectness() {
  const auto start = Clock::now();
  bool ok = true;
  std::string detail;

  // Full-size network and generator keep the time axis.
  const wb::NetworkWeights net = wb::InitNetwork(wb::WavebenderNetConfig{}, 5);
  const wb::GanWeights gan = wb::InitGan(wb::GanConfig{}, 80, 5);
  wb::Rng rng(31);
  std::vector<wb::ParameterTrack> tracks;
  std::string shapes;
  for (int t : {1, 7, 192, 1931}) {
    wb::ParameterTrack track;
    track.values = Random(t, wb::kNumFeatures, rng);
    track.voicing.assign(t, 1);
    for (int i = 0; i < t; i += 3) track.voicing[i] = 0;
    track.meta.normalized = true;
    tracks.push_back(track);
    const wb::MelSpectrogram mel = wb::Forward(track, net);
    const wb::Matrix enhanced = wb::EnhanceNormalized(mel.bins, 1, gan);
    const bool good = mel.bins.rows() == t && mel.bins.cols() == 80 && enhanced.rows() == t &&
                      enhanced.cols() == 80 && enhanced.allFinite();
    ok &= good;
    shapes += std::to_string(t) + (good ? "" : "(bad)") + " ";
  }
  detail += "T in {" + shapes.substr(0, shapes.size() - 1) + "} preserved; ";

  // A sequence's output does not depend on what else is in the batch.
  const std::vector<wb::MelSpectrogram> batch = wb::ForwardBatch(tracks, net);
  double batch_diff = 0.0;
  for (size_t i = 0; i < tracks.size(); ++i) {
    batch_diff = std::max(batch_diff, MaxAbs(batch[i].bins, wb::Forward(tracks[i], net).bins));
  }
  // Group norm on a time-concatenation equals normalizing each part.
  wb::nn::ParameterSet gp;
  const wb::nn::GroupNorm1d gn("gn", 16, 4);
  gn.Init(gp);
  Randomize(gp, rng, 1.0);
  const wb::Matrix x1 = Random(16, 9, rng, 3.0), x2 = Random(16, 40, rng, 0.2);
  wb::Matrix both(16, 49);
  both << x1, x2;
  const wb::Matrix yb = gn.Forward(gp, both);
  batch_diff = std::max({batch_diff, MaxAbs(yb.leftCols(9), gn.Forward(gp, x1)),
                         MaxAbs(yb.rightCols(40), gn.Forward(gp, x2))});
  ok &= batch_diff <= kGroupNormTolerance;
  detail += "batch independence " + Fmt(batch_diff, 2) + " (<=1e-5); ";

  // Central differences on tiny configurations.
  wb::WavebenderNetConfig tiny;
  tiny.in_channels = 6;
  tiny.widths = {8, 12, 8, 5};
  tiny.groups = 2;
  tiny.kernel_size = 3;
  tiny.long_skips = {{1, 4}};
  const wb::WavebenderNet model(tiny);
  wb::NetworkWeights tw = wb::InitNetwork(tiny, 3);
  Randomize(tw.params, rng, 0.3);
  const wb::Matrix in = Random(6, 11, rng), target = Random(5, 11, rng);
  const double g_net = CheckGradients(
      tw.params, [&] { return wb::XSigmoidLoss(model.Forward(tw.params, in), target); },
      [&] {
        wb::WavebenderNet::Tape tape;
        wb::Matrix dy;
        wb::XSigmoidLoss(model.Forward(tw.params, in, &tape), target, &dy);
        model.Backward(tw.params, tape, dy);
      });

  wb::GanConfig gc;
  gc.gen_layers = 3;
  gc.disc_layers = 4;
  gc.channels = 3;
  wb::GanWeights gw = wb::InitGan(gc, 12, 3);
  Randomize(gw.generator, rng, 0.3);
  Randomize(gw.discriminator, rng, 0.3);
  const wb::Generator gen(gc);
  const wb::Discriminator disc(gc);
  const wb::Matrix mel_in = Random(10, 12, rng), mel_target = Random(10, 12, rng);
  const double g_gen = CheckGradients(
      gw.generator, [&] { return wb::XSigmoidLoss(gen.Forward(gw.generator, mel_in), mel_target); },
      [&] {
        wb::Generator::Tape tape;
        wb::Matrix dy;
        wb::XSigmoidLoss(gen.Forward(gw.generator, mel_in, &tape), mel_target, &dy);
        gen.Backward(gw.generator, tape, dy);
      });
  const double g_disc = CheckGradients(
      gw.discriminator,
      [&] { return 0.5 * OracleMeanSquare(disc.Forward(gw.discriminator, mel_in), 1.0); },
      [&] {
        wb::Discriminator::Tape tape;
        const wb::Matrix s = disc.Forward(gw.discriminator, mel_in, &tape);
        disc.Backward(gw.discriminator, tape,
                      (s.array() - 1.0).matrix() / static_cast<double>(s.size()));
      });
  const double g_worst = std::max({g_net, g_gen, g_disc});
  ok &= g_worst < kGradientTolerance;
  detail += "gradient rel. err net " + Fmt(g_net, 2) + " gen " + Fmt(g_gen, 2) + " disc " +
            Fmt(g_disc, 2) + " (<1e-3); ";

  const double secs = Seconds(start);
  ok &= secs < kNetworkSeconds;
  return {ok, detail + Fmt(secs, 3) + " s (<300 s)"};
}

wb::TrainingConfig TinyConfig() {
  wb::TrainingConfig c;
  c.net.widths = {32, 80};
  c.net.groups = 4;
  c.net.kernel_size = 3;
  c.net.long_skips = {{1, 2}};
  c.gan.gen_layers = 2;
  c.gan.disc_layers = 3;
  c.gan.channels = 8;
  c.pretrain_epochs = 1;
  c.joint_epochs = 2;
  c.batch_size = 1;
  c.segment_frames = 64;
  c.augment = false;
  c.seed = 17;
  return c;
}

Outcome Overfit(const Desk& desk) {
  const auto start = Clock::now();
  wb::TrainingConfig c = TinyConfig();
  c.pretrain_epochs = 200;
  c.joint_epochs = 0;
  c.segment_frames = 4096;
  c.base_lr = 3e-3;
  const std::vector<wb::Utterance> one = {desk.corpus[0]};
  const wb::TrainingData d = wb::BuildTrainingData(c, one, one);
  wb::Trainer t(c, d);
  double first = 0.0, last = 0.0;
  for (long s = 0; s < t.total_steps(); ++s) {
    const double loss = t.Step().recon_pre;
    if (s == 0) first = loss;
    last = loss;
  }
  const long epochs = t.total_steps() / t.steps_per_epoch();
  const double ratio = last / first;

  // Joint phase with no adversary and no noise against pretraining.
  wb::TrainingConfig dc = TinyConfig();
  dc.gan.adversarial_weight = 0.0;
  dc.gan.noise_std = 0.0;
  const std::vector<wb::Utterance> three = {desk.corpus[1], desk.corpus[2], desk.corpus[3]};
  const std::vector<wb::Utterance> held = {desk.corpus[4]};
  const wb::TrainingData dd = wb::BuildTrainingData(dc, three, held);
  wb::Trainer pre(dc, dd), joint(dc, dd);
  const wb::StepMetrics a = pre.Step(wb::Phase::kPretrain);
  const wb::StepMetrics b = joint.Step(wb::Phase::kJoint);
  const double loss_diff = std::abs(a.recon_pre - b.recon_pre);
  const double param_diff = MaxParamDiff(pre.net().params, joint.net().params);

  const double secs = Seconds(start);
  // Weights are reported only: the post-net reconstruction term still reaches
  // the net through the generator during joint steps.
  const bool ok = epochs == 200 && ratio < kOverfitRatio && loss_diff <= kDegenerateTolerance &&
                  secs < kOverfitSeconds;
  return {ok, "epoch 200/epoch 1 xsigmoid " + Fmt(last, 3) + "/" + Fmt(first, 3) + " = " +
                  Fmt(100.0 * ratio, 3) + "% (<5%); degenerate joint step loss diff " +
                  Fmt(loss_diff, 2) + " (<=1e-6), net weight diff " + Fmt(param_diff, 2) +
                  " (info); " + Fmt(secs, 3) + " s (<900 s)"};
}

// Trains (or reuses) the desk-scale model and builds the pipeline.
void PrepareDeskModel(Desk& desk, bool verbose) {
  const fs::path run = fs::path(desk.root) / "run";
  const fs::path stamp = run / "acceptance.json";
  const std::string bundle = (fs::path(desk.root) / "vocoder").string();
  json want = wb::TrainingConfigToJson(desk.config);
  want.erase("corpus_path");  // the digest below identifies the corpus
  std::string corpus_digest;
  for (const auto& u : desk.corpus) corpus_digest += wb::Fingerprint(wb::EncodeWav(u.wave));
  want["corpus_digest"] = wb::Fingerprint(corpus_digest);

  bool reuse = false;
  if (fs::exists(stamp) && fs::exists(run / "checkpoint.wbt") && fs::exists(run / "coupling.wbt")) {
    const json have = json::parse(wb::ReadFileBytes(stamp.string()));
    reuse = have.value("key", json()) == want;
    if (reuse) desk.train_seconds = have.at("train_seconds").get<double>();
  }
  if (!reuse) {
    fs::remove_all(run);
    const auto start = Clock::now();
    const wb::TrainingData data = wb::PrepareTrainingData(desk.config, desk.corpus);
    wb::Trainer trainer(desk.config, data);
    trainer.Run(run.string(), -1, verbose);
    trainer.ToArchive().Save((run / "checkpoint.wbt").string());
    std::vector<wb::Matrix> train, heldout;
    for (const auto& e : data.train) {
      if (!e.augmented) train.push_back(e.input);
    }
    for (const auto& e : data.validation) heldout.push_back(e.input);
    wb::CouplingTrainingOptions co;
    co.seed = desk.config.seed;
    wb::TrainCouplingModel(train, heldout, data.stats, co).Save((run / "coupling.wbt").string());
    desk.train_seconds = Seconds(start);
    wb::WriteFileBytes(stamp.string(),
                       json{{"key", want}, {"train_seconds", desk.train_seconds}}.dump(2));
  }
  desk.cached = reuse;
  if (!fs::exists(bundle)) {
    wb::WriteGriffinLimBundle(bundle, desk.config.mel);
  }
  wb::TrainedModel model = wb::LoadTrainedModel(run.string());
  desk.pipeline = std::make_shared<const wb::Pipeline>(
      model, wb::LoadVocoder(bundle, model.mel),
      wb::CouplingModel::Load((run / "coupling.wbt").string()));
  const wb::nn::TensorArchive a = wb::nn::TensorArchive::Load((run / "checkpoint.wbt").string());
  desk.test_ids = a.meta.at("data").at("test_ids").get<std::vector<std::string>>();
  desk.test.clear();
  for (const auto& u : desk.corpus) {
    if (std::find(desk.test_ids.begin(), desk.test_ids.end(), u.id) != desk.test_ids.end()) {
      desk.test.push_back(&u);
    }
  }
}

struct DeskResults {
  wb::ReconstructionReport recon;
  wb::ManipulationReport manip;
};

Outcome DeskScale(Desk& desk, DeskResults& out, bool verbose) {
  const auto start = Clock::now();
  PrepareDeskModel(desk, verbose);
  const wb::Pipeline& p = *desk.pipeline;
  wb::EvalOptions opts;
  opts.extraction = p.model().extraction;
  const auto& stats = p.model().stats;
  if (verbose) std::cerr << "desk: evaluating " << desk.test.size() << " test utterances\n";
  out.recon = wb::CopySynthesisError(
      desk.test,
      {{"wavebender", [&](const wb::Utterance& u) { return p.Manipulate(u.wave, {}, 0).wave; }},
       {"vocoder_only", [&](const wb::Utterance& u) { return p.VocoderOnly(u.wave); }}},
      stats, opts);
  out.manip = wb::ManipulationSweep(desk.test, wb::PipelineSystem(p, 0), stats, p.coupling(),
                                    wb::SweepOptions{}, opts);
  const wb::DisentanglementMatrix matrix = wb::Disentanglement(out.manip, 1.3);
  wb::EmitReport(desk.root, wb::RenderReport(&out.recon, &out.manip, &matrix));

  const wb::SystemErrors& full = out.recon.system("wavebender");
  const wb::SystemErrors& voc = out.recon.system("vocoder_only");
  bool a_ok = full.excluded.empty() && voc.excluded.empty();
  std::string a_detail;
  for (int f = 0; f < wb::kNumFeatures; ++f) {
    const double ratio = full.pooled.mse[f] / voc.pooled.mse[f];
    a_ok &= ratio <= kPipelineVsVocoder;
    a_detail += std::string(wb::FeatureName(wb::kAllFeatures[f])) + " " +
                Fmt(full.pooled.mse[f], 3) + "/" + Fmt(voc.pooled.mse[f], 3) + "=" + Fmt(ratio, 3) +
                " ";
  }

  bool b1_ok = true;
  std::string b1_detail;
  for (wb::Feature f : wb::kAllFeatures) {
    const wb::SweepCell* c = out.manip.Find(f, 1.0);
    const bool in = c && full.overall_ci.Contains(c->overall_incl);
    b1_ok &= in;
    b1_detail += std::string(wb::FeatureName(f)) + " " + (c ? Fmt(c->overall_incl, 3) : "n/a") +
                 (in ? "" : "(out)") + " ";
  }

  std::map<wb::Feature, double> growth;
  for (wb::Feature f : wb::kAllFeatures) growth[f] = wb::ErrorGrowth(out.manip, f);
  const double formant_min = std::min(growth[wb::Feature::kF1], growth[wb::Feature::kF2]);
  const double other_max = std::max(
      {growth[wb::Feature::kLogF0], growth[wb::Feature::kCentroid], growth[wb::Feature::kSlope]});
  const bool b2_ok = other_max < formant_min;
  std::string b2_detail;
  for (wb::Feature f : wb::kAllFeatures) {
    b2_detail += std::string(wb::FeatureName(f)) + " " + Fmt(growth[f], 3) + " ";
  }

  const double eval_secs = Seconds(start) - (desk.cached ? 0.0 : desk.train_seconds);
  const double total = desk.train_seconds + eval_secs;
  const bool time_ok = total <= kDeskSeconds;
  std::ostringstream d;
  d << (a_ok ? "" : "[a failed] ") << (b1_ok ? "" : "[b m=1 failed] ")
    << (b2_ok ? "" : "[b slopes failed] ") << "(a) pipeline/vocoder-only mse " << a_detail
    << "(<=2x); (b) m=1 overall " << b1_detail << "vs copy-synthesis CI ["
    << Fmt(full.overall_ci.lo, 3) << ", " << Fmt(full.overall_ci.hi, 3)
    << "]; error growth per |m-1| " << b2_detail << "(f0/centroid/slope max " << Fmt(other_max, 3)
    << " < F1/F2 min " << Fmt(formant_min, 3) << "); " << desk.corpus.size() << " utterances, "
    << desk.test.size() << " test; train " << Fmt(desk.train_seconds, 4) << " s"
    << (desk.cached ? " (recorded, model reused)" : "") << " + eval " << Fmt(eval_secs, 4)
    << " s (<=4 h)";
  return {a_ok && b1_ok && b2_ok && time_ok, d.str()};
}

Outcome Determinism(const Desk& desk, const std::string& workdir) {
  const auto start = Clock::now();
  // Trainer resume.
  const wb::TrainingConfig c = TinyConfig();
  const std::vector<wb::Utterance> train = {desk.corpus[0], desk.corpus[1], desk.corpus[2]};
  const std::vector<wb::Utterance> held = {desk.corpus[3]};
  const wb::TrainingData d = wb::BuildTrainingData(c, train, held);
  wb::Trainer full(c, d);
  const long split = full.steps_per_epoch() + 1;  // inside the joint phase
  for (long s = 0; s < split + kResumeSteps; ++s) full.Step();
  wb::Trainer first(c, d);
  for (long s = 0; s < split; ++s) first.Step();
  wb::Trainer resumed =
      wb::Trainer::FromCheckpoint(wb::nn::TensorArchive::Decode(first.ToArchive().Encode()), d);
  for (int s = 0; s < kResumeSteps; ++s) resumed.Step();
  const double diff =
      std::max({MaxParamDiff(full.net().params, resumed.net().params),
                MaxParamDiff(full.gan().generator, resumed.gan().generator),
                MaxParamDiff(full.gan().discriminator, resumed.gan().discriminator)});

  // Identical CLI invocations.
  const fs::path root = fs::path(workdir) / "cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cli = WAVEBENDER_CLI;
  const std::string log = " >>" + (root / "log.txt").string() + " 2>&1";
  const std::string model =
      " --checkpoint " + (root / "run").string() + " --vocoder " + (root / "vocoder").string();
  int rc =
      RunCommand(cli + " --seed 3 make-corpus " + (root / "corpus").string() + " --count 6" + log);
  rc |= RunCommand(cli + " --config " + WAVEBENDER_CONFIGS + "/tiny.json train --corpus " +
                   (root / "corpus").string() + " --out " + (root / "run").string() + log);
  rc |= RunCommand(cli + " fetch-vocoder " + (root / "vocoder").string() +
                   " --builtin --checkpoint " + (root / "run").string() + log);
  const std::string eval =
      cli + " --seed 9 evaluate" + model + " --corpus " + (root / "corpus").string() +
      " --limit 3 --resamples 200 --scales 0.9,1.0,1.1 --matrix-scale 1.1 --out ";
  rc |= RunCommand(eval + (root / "a").string() + log);
  rc |= RunCommand(eval + (root / "b").string() + log);
  int identical = 0, files = 0;
  for (const char* name : {"recon.tsv", "manip.tsv", "disentangle.tsv", "recon.svg", "manip.svg"}) {
    const fs::path a = root / "a" / "report" / name, b = root / "b" / "report" / name;
    ++files;
    if (fs::exists(a) && fs::exists(b) &&
        wb::ReadFileBytes(a.string()) == wb::ReadFileBytes(b.string())) {
      ++identical;
    }
  }
  const bool ok = diff <= kResumeTolerance && rc == 0 && identical == files;
  return {ok, "resume after step " + std::to_string(split) + " then " +
                  std::to_string(kResumeSteps) + " steps: max weight diff " + Fmt(diff, 2) +
                  " (<=1e-6); CLI evaluate twice: " + std::to_string(identical) + "/" +
                  std::to_string(files) + " report files byte-identical" +
                  (rc ? " (a CLI step failed, see " + (root / "log.txt").string() + ")" : "") +
                  "; " + Fmt(Seconds(start), 3) + " s"};
}

Outcome ServiceContract(const Desk& desk, const DeskResults& results) {
  const auto start = Clock::now();
  wb::StimulusService svc(desk.pipeline, wb::ServiceConfig{});
  const wb::Interval envelope = results.recon.system("wavebender").overall_ci;
  std::vector<wb::UtteranceErrors> round_trip;
  bool ok = true;
  for (const wb::Utterance* u : desk.test) {
    wb::HttpRequest analyze{"POST", "/v1/analyze", {}, {}, wb::EncodeWav(u->wave)};
    const wb::HttpResponse a = svc.Handle(analyze);
    if (a.status != 200)
      return {false, "analyze returned " + std::to_string(a.status) + ": " + a.body};
    const json req = {{"session", a.json()["session"]}, {"spec", json::object()}};
    const wb::HttpResponse s = svc.Handle({"POST", "/v1/synthesize", {}, {}, req.dump()});
    if (s.status != 200) return {false, "synthesize returned " + std::to_string(s.status)};
    const json j = s.json();
    wb::UtteranceErrors e =
        wb::CompareTracks(wb::TrackFromJson(j["desired"]), wb::TrackFromJson(j["realized"]),
                          desk.pipeline->model().stats, 2);
    e.id = u->id;
    round_trip.push_back(e);
  }
  const double overall = wb::Pool(round_trip).Overall();
  ok &= overall <= envelope.hi;

  const json bad = {{"session", "none"}, {"expect", {{"checkpoint", "0000000000000000"}}}};
  const int mismatch = svc.Handle({"POST", "/v1/synthesize", {}, {}, bad.dump()}).status;
  json foreign = wb::TrackToJson(desk.test.front()->track);
  foreign["stats_id"] = "ffffffffffffffff";
  const int stats_mismatch =
      svc.Handle({"POST", "/v1/synthesize", {}, {}, json{{"track", foreign}}.dump()}).status;
  ok &= mismatch == 409 && stats_mismatch == 409;
  return {ok, "analyze->synthesize(keep)->re-analyze overall " + Fmt(overall, 4) + " over " +
                  std::to_string(round_trip.size()) +
                  " test utterances, envelope (copy-synthesis CI upper) " + Fmt(envelope.hi, 4) +
                  "; checkpoint mismatch " + std::to_string(mismatch) + ", stats mismatch " +
                  std::to_string(stats_mismatch) + " (409); " + Fmt(Seconds(start), 3) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wavebender acceptance suite", "acceptance"};
  std::string workdir = "acceptance_work";
  std::vector<std::string> only;
  bool verbose = false, fresh = false;
  app.add_option("--workdir", workdir, "scratch and cache directory");
  app.add_option("--only", only, "run these criteria (comma separated)")->delimiter(',');
  app.add_flag("--fresh", fresh, "retrain the desk-scale model");
  app.add_flag("-v,--verbose", verbose);
  CLI11_PARSE(app, argc, argv);

  const auto want = [&](const std::string& name) {
    return only.empty() || std::find(only.begin(), only.end(), name) != only.end();
  };
  fs::create_directories(workdir);
  Desk desk;
  desk.root = (fs::path(workdir) / "desk").string();
  if (fresh) fs::remove_all(fs::path(desk.root) / "run");
  const std::string corpus = (fs::path(desk.root) / "corpus").string();
  desk.config = DeskConfig(corpus);

  int failures = 0;
  json summary = json::object();
  const auto report = [&](const std::string& name, const std::function<Outcome()>& fn) {
    if (!want(name)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    summary[name] = {{"pass", o.pass}, {"detail", o.detail}};
  };

  try {
    if (!fs::exists(fs::path(corpus) / "metadata.csv")) {
      wb::WriteSyntheticCorpus(corpus, kDeskUtterances, 0);
    }
    desk.corpus = wb::LoadCorpus(wb::ReadCorpusIndex(corpus, kDeskUtterances),
                                 desk.config.extraction, desk.config.mel);
  } catch (const std::exception& e) {
    std::cout << "FAIL setup: " << e.what() << std::endl;
    return 1;
  }

  DeskResults results;
  bool desk_ran = false;
  report("dsp_oracles", [&] { return DspOracles(desk); });
  report("loss_metric_oracles", [&] { return LossOracles(); });
  report("network_correctness", [&] { return NetworkCorrectness(); });
  report("overfit", [&] { return Overfit(desk); });
  report("desk_scale", [&] {
    desk_ran = true;
    return DeskScale(desk, results, verbose);
  });
  report("determinism_resume", [&] { return Determinism(desk, workdir); });
  report("service_contract", [&] {
    if (!desk_ran) {
      // The envelope comes from the desk-scale evaluation.
      Outcome o = DeskScale(desk, results, verbose);
      (void)o;
    }
    return ServiceContract(desk, results);
  });
  wb::WriteFileBytes((fs::path(workdir) / "acceptance.json").string(), summary.dump(2) + "\n");
  return failures == 0 ? 0 : 1;
}

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

#include "wavebender/wavebender_net.h"

#include <doctest.h>

#include <cmath>
#include <limits>

#include "test_support.h"

namespace wavebender {
namespace {

using testing::MaxAbsDiff;
using testing::RandomMatrix;

ParameterTrack RandomTrack(int frames, uint64_t seed) {
  ParameterTrack t;
  t.values = RandomMatrix(frames, kNumFeatures, seed);
  Rng rng(seed);
  t.voicing.resize(frames);
  for (auto& v : t.voicing) v = rng.Uniform() < 0.7;
  t.meta.normalized = true;
  t.meta.frame_rate = 22050.0 / 256.0;
  return t;
}

WavebenderNetConfig TinyConfig() {
  WavebenderNetConfig c;
  c.widths = {8, 4};
  c.groups = 2;
  c.kernel_size = 3;
  c.long_skips = {{1, 2}};
  return c;
}

const NetworkWeights& DefaultWeights() {
  static const NetworkWeights w = InitNetwork(WavebenderNetConfig{}, 7);
  return w;
}

TEST_CASE("output length equals input length") {
  for (int frames : {1, 7, 37, 192, 1931}) {
    const MelSpectrogram mel = Forward(RandomTrack(frames, frames), DefaultWeights());
    CHECK(mel.bins.rows() == frames);
    CHECK(mel.bins.cols() == 80);
    CHECK(mel.bins.allFinite());
  }
}

TEST_CASE("fresh network maps zero input to small finite values") {
  ParameterTrack t = RandomTrack(50, 1);
  t.values.setZero();
  std::fill(t.voicing.begin(), t.voicing.end(), 0);
  const Matrix y = PredictNormalizedMel(t, DefaultWeights());
  CHECK(y.allFinite());
  CHECK(y.cwiseAbs().maxCoeff() < 10.0);
}

TEST_CASE("forward is deterministic") {
  const ParameterTrack t = RandomTrack(40, 3);
  CHECK(Forward(t, DefaultWeights()).bins == Forward(t, DefaultWeights()).bins);
}

TEST_CASE("outputs depend only on frames inside the receptive field") {
  const int radius = WavebenderNetConfig{}.ReceptiveRadius();
  CHECK(radius == 32);
  const int frames = 160, t0 = 90;
  const ParameterTrack a = RandomTrack(frames, 11);
  ParameterTrack b = a;
  b.values.bottomRows(frames - (t0 + radius)) =
      RandomMatrix(frames - (t0 + radius), kNumFeatures, 12, 3.0);
  const Matrix ya = PredictNormalizedMel(a, DefaultWeights());
  const Matrix yb = PredictNormalizedMel(b, DefaultWeights());
  CHECK(MaxAbsDiff(ya.topRows(t0 - radius), yb.topRows(t0 - radius)) <= 1e-12);
  // The radius is tight: frame t0 + radius - 1 sees the change.
  CHECK(MaxAbsDiff(ya.bottomRows(frames - t0), yb.bottomRows(frames - t0)) > 1e-6);
}

TEST_CASE("batched forward equals single-utterance forwards") {
  const std::vector<ParameterTrack> batch = {RandomTrack(64, 21), RandomTrack(64, 22)};
  const auto together = ForwardBatch(batch, DefaultWeights());
  for (size_t i = 0; i < batch.size(); ++i) {
    CHECK(MaxAbsDiff(together[i].bins, Forward(batch[i], DefaultWeights()).bins) <= 1e-5);
  }
}

TEST_CASE("removing long skips changes the output") {
  const ParameterTrack t = RandomTrack(30, 5);
  const Matrix with = PredictNormalizedMel(t, DefaultWeights());
  const Matrix without = PredictNormalizedMel(t, DefaultWeights(), {.long_skips = false});
  CHECK(MaxAbsDiff(with, without) > 1e-6);
}

TEST_CASE("analytic gradients match finite differences") {
  const NetworkWeights w = InitNetwork(TinyConfig(), 3);
  std::vector<GradientCheckSample> batch;
  for (int i = 0; i < 2; ++i) {
    batch.push_back({RandomMatrix(6, 12, 30 + i), RandomMatrix(4, 12, 40 + i, 2.0)});
  }
  const double err = GradientCheck(w, batch, 1e-4);
  MESSAGE("max relative gradient error " << err);
  CHECK(err < 1e-3);

  // Gradient with skips disabled is also consistent (skip weights get none).
  const WavebenderNet net(TinyConfig());
  nn::ParameterSet p = w.params;
  p.ZeroGrad();
  WavebenderNet::Tape tape;
  const Matrix y = net.Forward(p, batch[0].input, &tape, {.long_skips = false});
  Matrix dy;
  XSigmoidLoss(y, batch[0].target, &dy);
  net.Backward(p, tape, dy);
  CHECK(p.grad("skip1_2.weight").norm() == 0.0);
  CHECK(p.grad("block1.conv1.weight").norm() > 0.0);
}

TEST_CASE("zero loss has zero gradient and gradients scale linearly") {
  const NetworkWeights w = InitNetwork(TinyConfig(), 4);
  const WavebenderNet net(TinyConfig());
  const Matrix x = RandomMatrix(6, 10, 2);
  nn::ParameterSet p = w.params;
  WavebenderNet::Tape tape;
  const Matrix y = net.Forward(p, x, &tape);
  Matrix dy;
  CHECK(XSigmoidLoss(y, y, &dy) == 0.0);
  CHECK(dy.cwiseAbs().maxCoeff() == 0.0);

  const Matrix target = RandomMatrix(4, 10, 3);
  XSigmoidLoss(y, target, &dy);
  p.ZeroGrad();
  net.Backward(p, tape, dy);
  nn::ParameterSet single = p;
  p.ZeroGrad();
  net.Backward(p, tape, 2.0 * dy);
  for (const auto& [name, param] : p) {
    CHECK(MaxAbsDiff(param.grad, 2.0 * single.at(name).grad) <= 1e-12);
  }
}

double XSig(double e) { return XSigmoidLoss(Matrix::Constant(1, 1, e), Matrix::Zero(1, 1)); }

TEST_CASE("xsigmoid values and properties") {
  CHECK(XSigmoidLoss(Matrix::Zero(3, 4), Matrix::Zero(3, 4)) == 0.0);
  CHECK(XSig(2.0) == doctest::Approx(2.0 * std::tanh(1.0)).epsilon(1e-15));
  CHECK(XSig(2.0) == doctest::Approx(1.52318).epsilon(1e-5));
  CHECK(XSig(1e6) / 1e6 == doctest::Approx(1.0).epsilon(1e-12));
  double prev = 0.0;
  for (double e = 0.01; e < 40.0; e *= 1.3) {
    CHECK(XSig(e) == XSig(-e));
    CHECK(XSig(e) > prev);
    CHECK(XSig(e) <= e * e / 2.0);
    CHECK(XSig(e) >= e - 2.0);
    CHECK(XSig(e) > 0.0);
    prev = XSig(e);
  }
  // Equivalent form 2 e sigmoid(e) - e.
  const double e = 0.7;
  CHECK(XSig(e) == doctest::Approx(2.0 * e / (1.0 + std::exp(-e)) - e).epsilon(1e-14));

  const Matrix p = RandomMatrix(3, 5, 9, 3.0), t = RandomMatrix(3, 5, 10);
  Matrix g;
  const double base = XSigmoidLoss(p, t, &g);
  double mean = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double d = p.data()[i] - t.data()[i];
    mean += d * std::tanh(d / 2.0);
  }
  CHECK(base == doctest::Approx(mean / 15.0).epsilon(1e-13));
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Matrix up = p, down = p;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    const double numeric = (XSigmoidLoss(up, t) - XSigmoidLoss(down, t)) / 2e-6;
    CHECK(g.data()[i] == doctest::Approx(numeric).epsilon(1e-6));
  }
  CHECK_THROWS_AS(XSigmoidLoss(Matrix::Zero(2, 2), Matrix::Zero(2, 3)), Error);
}

TEST_CASE("input validation") {
  ParameterTrack raw = RandomTrack(10, 1);
  raw.meta.normalized = false;
  CHECK_THROWS_AS(Forward(raw, DefaultWeights()), Error);
  ParameterTrack bad = RandomTrack(10, 1);
  bad.values(3, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Forward(bad, DefaultWeights()), Error);

  NetworkWeights w = InitNetwork(TinyConfig(), 1);
  w.stats_id = "abc";
  ParameterTrack t = RandomTrack(10, 1);
  t.meta.stats_id = "xyz";
  try {
    Forward(t, w);
    FAIL("stats mismatch accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFingerprintMismatch);
  }
}

TEST_CASE("config validation") {
  WavebenderNetConfig c;
  CHECK_NOTHROW(ValidateNetConfig(c));
  c.long_skips = {{8, 1}};
  CHECK_THROWS_AS(ValidateNetConfig(c), Error);
  c = {};
  c.long_skips = {{0, 3}};
  CHECK_THROWS_AS(ValidateNetConfig(c), Error);
  c = {};
  c.widths = {128, 64, 80};
  CHECK_THROWS_AS(ValidateNetConfig(c), Error);
  c = {};
  c.groups = 7;
  CHECK_THROWS_AS(ValidateNetConfig(c), Error);
  c = {};
  c.kernel_size = 4;
  CHECK_THROWS_AS(ValidateNetConfig(c), Error);
  c = {};
  c.widths[3] = 0;
  CHECK_THROWS_AS(ValidateNetConfig(c), Error);
  CHECK(NetConfigFromJson(NetConfigToJson(WavebenderNetConfig{})).fingerprint() ==
        WavebenderNetConfig{}.fingerprint());
  CHECK(TinyConfig().fingerprint() != WavebenderNetConfig{}.fingerprint());
}

TEST_CASE("mel normalizer") {
  const Matrix a = RandomMatrix(30, 4, 1, 2.0), b = RandomMatrix(20, 4, 2, 2.0);
  const MelNormalizer n = MelNormalizer::Fit({&a, &b});
  Matrix all(50, 4);
  all << a, b;
  const Matrix z = n.Normalize(all);
  CHECK(z.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
  for (int j = 0; j < 4; ++j) {
    CHECK(z.col(j).squaredNorm() / 50.0 == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(MaxAbsDiff(n.Denormalize(z), all) < 1e-12);
  const Matrix flat = Matrix::Constant(10, 4, -11.5);
  CHECK(MelNormalizer::Fit({&flat}).std.minCoeff() > 0.0);
}

TEST_CASE("network archive round trip and fingerprint checks") {
  testing::TempDir dir("net");
  NetworkWeights w = InitNetwork(TinyConfig(), 9);
  w.stats_id = "s1";
  w.mel_config_id = "m1";
  const Matrix a = RandomMatrix(10, 4, 3);
  w.mel_norm = MelNormalizer::Fit({&a});
  nn::TensorArchive archive;
  ExportNetwork(w, "net/", archive);
  archive.Save(dir.file("w.wbt"));
  const NetworkWeights back = ImportNetwork(nn::TensorArchive::Load(dir.file("w.wbt")), "net/");
  CHECK(back.stats_id == "s1");
  CHECK(back.mel_config_id == "m1");
  const ParameterTrack t = RandomTrack(12, 2);
  ParameterTrack ts = t;
  ts.meta.stats_id = "s1";
  CHECK(Forward(ts, back).bins == Forward(ts, w).bins);

  nn::TensorArchive tampered = archive;
  tampered.meta["net/"]["config"]["kernel_size"] = 5;
  try {
    ImportNetwork(tampered, "net/");
    FAIL("config change accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFingerprintMismatch);
  }
  CHECK_THROWS_AS(ImportNetwork(archive, "gan/"), Error);
}

}  // namespace
}  // namespace wavebender

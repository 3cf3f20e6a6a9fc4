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

#include "wavebender/manipulation.h"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <thread>

#include "fixture.h"
#include "test_support.h"

namespace wavebender {
namespace {

using testing::Fixture;
using testing::TempDir;

ParameterTrack HandTrack() {
  const std::vector<double> ratios = {0.9, 1.1, 0.95, 1.0, 1.05, 0.8, 1.2, 1.0, 0.97, 1.03, 1.0};
  ParameterTrack t;
  const int n = static_cast<int>(ratios.size());
  t.values.resize(n, kNumFeatures);
  t.voicing.assign(n, 1);
  t.voicing[3] = 0;
  for (int i = 0; i < n; ++i) {
    t.values(i, Index(Feature::kF1)) = 450.0 + 20.0 * i;
    t.values(i, Index(Feature::kF2)) = 1400.0 - 30.0 * i;
    t.values(i, Index(Feature::kLogF0)) = std::log(110.0 * ratios[i]);
    t.values(i, Index(Feature::kCentroid)) = 1800.0 + i;
    t.values(i, Index(Feature::kSlope)) = -0.004 + 1e-4 * i;
  }
  t.meta.frame_rate = 22050.0 / 256.0;
  t.meta.sample_rate = 22050;
  return t;
}

double Median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

bool BitEqual(const Vector& a, const Vector& b) {
  return a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data());
}

ErrorKind KindOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kIo;
}

TEST_CASE("spec documents round trip and reject bad input") {
  const ManipulationSpec spec = SpecFromJson(nlohmann::json::parse(
      R"({"f0": {"scale": 1.2}, "F1": "keep", "slope_db_per_hz": {"replace": [1, 2, 3]},
          "coupling": "independent"})"));
  CHECK(spec.action(Feature::kLogF0).kind == ActionKind::kScale);
  CHECK(spec.action(Feature::kLogF0).scale == 1.2);
  CHECK(spec.action(Feature::kSlope).trajectory == std::vector<double>{1, 2, 3});
  CHECK(spec.action(Feature::kF2).kind == ActionKind::kKeep);
  CHECK(SpecToJson(SpecFromJson(SpecToJson(spec))) == SpecToJson(spec));
  CHECK(SpecFromJson(nlohmann::json::object()).all_keep());
  CHECK(SpecFromJson(nlohmann::json::parse(R"({"f1": {"scale": 1.1},
        "coupling": "predict_f2_from_f1"})"))
            .coupling == CouplingPolicy::kPredictF2FromF1);

  for (const char* bad :
       {R"({"f1": {"scale": 0}})", R"({"f1": {"scale": -1.2}})", R"({"f9": "keep"})",
        R"({"f1": "drop"})", R"({"f1": {"scale": 1, "replace": []}})", R"({"coupling": "magic"})",
        R"({"f0": {"replace": []}})", R"({"f2": {"scale": 1.1}, "coupling": "predict_f2_from_f1"})",
        R"({"f1": {"scale": 1.1}, "f2": {"scale": 0.9},
                              "coupling": "predict_f1_from_f2"})",
        R"([1, 2])"}) {
    CAPTURE(bad);
    CHECK(KindOf([&] { SpecFromJson(nlohmann::json::parse(bad)); }) == ErrorKind::kInvalidArgument);
  }
  const ManipulationSpec f2 = ManipulationSpec::ScaleOne(Feature::kF2, 1.2, true);
  CHECK(f2.coupling == CouplingPolicy::kPredictF1FromF2);
  CHECK(ManipulationSpec::ScaleOne(Feature::kF2, 1.2).coupling == CouplingPolicy::kIndependent);
}

TEST_CASE("spec directories load in name order") {
  TempDir dir("specs");
  WriteFileBytes(dir.file("b.json"), R"({"f0": {"scale": 0.8}})");
  WriteFileBytes(dir.file("a.json"), R"({"f1": {"scale": 1.3}})");
  WriteFileBytes(dir.file("notes.txt"), "ignored");
  const auto specs = LoadSpecDirectory(dir.path().string());
  REQUIRE(specs.size() == 2);
  CHECK(specs[0].first == "a");
  CHECK(specs[1].second.action(Feature::kLogF0).scale == 0.8);
  WriteFileBytes(dir.file("c.json"), "{not json");
  CHECK_THROWS_AS(LoadSpecDirectory(dir.path().string()), Error);
  CHECK(KindOf([&] { LoadSpecDirectory(dir.file("none")); }) == ErrorKind::kNotFound);
}

TEST_CASE("desired trajectories") {
  const ParameterTrack t = HandTrack();

  SUBCASE("keep and unit scale are exact identities") {
    CHECK(BuildDesired(t, ManipulationSpec{}).values == t.values);
    for (Feature f : kAllFeatures) {
      CHECK(BuildDesired(t, ManipulationSpec::ScaleOne(f, 1.0)).values == t.values);
    }
  }

  SUBCASE("f0 scales in Hz") {
    const ParameterTrack d = BuildDesired(t, ManipulationSpec::ScaleOne(Feature::kLogF0, 1.2));
    std::vector<double> hz;
    for (int i = 0; i < d.frames(); ++i) hz.push_back(std::exp(d.values(i, 2)));
    CHECK(Median(hz) == doctest::Approx(132.0).epsilon(1e-12));
    for (int i = 0; i < d.frames(); ++i) {
      CHECK(std::exp(d.values(i, 2)) ==
            doctest::Approx(std::exp(t.values(i, 2)) * 1.2).epsilon(1e-12));
    }
    CHECK(d.voicing == t.voicing);
    for (Feature f : {Feature::kF1, Feature::kF2, Feature::kCentroid, Feature::kSlope}) {
      CHECK(BitEqual(d.column(f), t.column(f)));
    }
  }

  SUBCASE("scaling by m then 1/m returns the input") {
    for (Feature f : kAllFeatures) {
      for (double m : {0.7, 0.8, 0.9, 1.1, 1.2, 1.3}) {
        const ParameterTrack there = BuildDesired(t, ManipulationSpec::ScaleOne(f, m, true));
        const ParameterTrack back =
            BuildDesired(there, ManipulationSpec::ScaleOne(f, 1.0 / m, true));
        CHECK(testing::MaxAbsDiff(back.values, t.values) <= 1e-9);
        for (Feature g : kAllFeatures) {
          if (g != f) CHECK(BitEqual(there.column(g), t.column(g)));
        }
      }
    }
  }

  SUBCASE("replacement") {
    std::vector<double> contour(t.frames());
    for (int i = 0; i < t.frames(); ++i) contour[i] = std::log(100.0 + i);
    ManipulationSpec spec;
    spec.action(Feature::kLogF0) = FeatureAction::Replace(contour);
    const ParameterTrack d = BuildDesired(t, spec);
    for (int i = 0; i < t.frames(); ++i) CHECK(d.values(i, 2) == contour[i]);
    contour.pop_back();
    spec.action(Feature::kLogF0) = FeatureAction::Replace(contour);
    CHECK_THROWS_AS(BuildDesired(t, spec), Error);
  }

  SUBCASE("crossing formants are rejected under the independent policy") {
    try {
      BuildDesired(t, ManipulationSpec::ScaleOne(Feature::kF1, 2.5));
      FAIL("expected rejection");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kInvalidArgument);
      // F1*2.5 exceeds F2 from frame 4 on; frame 3 is unvoiced.
      const std::string msg = e.what();
      CHECK(msg.find("frames 4,5,6") != std::string::npos);
    }
    CHECK_NOTHROW(BuildDesired(t, ManipulationSpec::ScaleOne(Feature::kF1, 2.5, true)));
  }

  SUBCASE("normalized tracks are refused") {
    ParameterTrack n = t;
    n.meta.normalized = true;
    CHECK_THROWS_AS(BuildDesired(n, ManipulationSpec{}), Error);
  }
}

TEST_CASE("coupling predictor records a held-out error that an oracle reproduces") {
  const testing::TinyFixture& fx = Fixture();
  for (const CouplingPredictor* p : {&fx.coupling.f2_from_f1, &fx.coupling.f1_from_f2}) {
    // Independent recomputation: mask by hand, run the network, pool errors.
    const WavebenderNet net(p->net.config);
    double sum = 0.0;
    long n = 0;
    for (const TrainingExample& e : fx.data.validation) {
      Matrix x = e.input;
      x.row(Index(p->target)).setZero();
      const Matrix y = net.Forward(p->net.params, x);
      for (Eigen::Index t = 0; t < y.cols(); ++t) {
        const double d = y(0, t) - e.input(Index(p->target), t);
        sum += d * d;
        ++n;
      }
    }
    const double rmse = std::sqrt(sum / static_cast<double>(n));
    MESSAGE(FeatureName(p->target) << " held-out rmse " << p->heldout_rmse << " ("
                                   << p->heldout_rmse_hz << " Hz), train " << p->train_rmse);
    CHECK(n == p->heldout_frames);
    CHECK(rmse == doctest::Approx(p->heldout_rmse).epsilon(1e-12));
    CHECK(p->heldout_rmse_hz ==
          doctest::Approx(rmse * fx.data.stats.std[Index(p->target)]).epsilon(1e-12));
    CHECK(std::isfinite(p->train_rmse));
  }
}

TEST_CASE("coupling replaces only the dependent formant and enforces F2 above F1") {
  const testing::TinyFixture& fx = Fixture();
  const Utterance& u = *fx.TestUtterances().front();
  for (double m : {0.7, 1.0, 1.3, 2.5}) {
    CAPTURE(m);
    const ParameterTrack desired =
        BuildDesired(u.track, ManipulationSpec::ScaleOne(Feature::kF1, m, true));
    const ParameterTrack c = ApplyCoupling(desired, fx.coupling, CouplingPolicy::kPredictF2FromF1);
    const Vector raw =
        PredictCoupled(fx.coupling.f2_from_f1, NetInput(Normalize(desired, fx.coupling.stats)));
    const int f2 = Index(Feature::kF2);
    for (Feature g : {Feature::kF1, Feature::kLogF0, Feature::kCentroid, Feature::kSlope}) {
      CHECK(BitEqual(c.column(g), desired.column(g)));
    }
    CHECK(c.voicing == desired.voicing);
    for (int t = 0; t < c.frames(); ++t) {
      const double predicted = raw[t] * fx.coupling.stats.std[f2] + fx.coupling.stats.mean[f2];
      CHECK(c.values(t, f2) >= predicted - 1e-9 * std::abs(predicted));
      if (c.voicing[t]) {
        CHECK(c.values(t, f2) >= 1.01 * c.values(t, 0) * (1 - 1e-15));
      } else {
        CHECK(c.values(t, f2) == doctest::Approx(predicted).epsilon(1e-12));
      }
    }

    const ParameterTrack d2 =
        BuildDesired(u.track, ManipulationSpec::ScaleOne(Feature::kF2, m, true));
    const ParameterTrack c2 = ApplyCoupling(d2, fx.coupling, CouplingPolicy::kPredictF1FromF2);
    CHECK(BitEqual(c2.column(Feature::kF2), d2.column(Feature::kF2)));
    for (int t = 0; t < c2.frames(); ++t) {
      if (c2.voicing[t]) CHECK(c2.values(t, 1) >= 1.01 * c2.values(t, 0) * (1 - 1e-15));
    }
  }
  const ParameterTrack same = ApplyCoupling(u.track, fx.coupling, CouplingPolicy::kIndependent);
  CHECK(same.values == u.track.values);
}

TEST_CASE("coupling archives round trip and refuse foreign statistics") {
  const testing::TinyFixture& fx = Fixture();
  const CouplingModel back = CouplingModel::Load(fx.coupling_path);
  CHECK(back.fingerprint() == fx.coupling.fingerprint());
  CHECK(back.f2_from_f1.heldout_rmse == fx.coupling.f2_from_f1.heldout_rmse);
  CHECK(back.ToArchive().Encode() == fx.coupling.ToArchive().Encode());

  ParameterTrack foreign = fx.corpus[0].track;
  foreign.meta.stats_id = "0123456789abcdef";
  CHECK(KindOf([&] { ApplyCoupling(foreign, fx.coupling, CouplingPolicy::kPredictF2FromF1); }) ==
        ErrorKind::kFingerprintMismatch);

  CouplingModel other = fx.coupling;
  other.stats.mean[0] += 1.0;
  other.stats_id = other.stats.id();
  other.f2_from_f1.net.stats_id = other.stats_id;
  other.f1_from_f2.net.stats_id = other.stats_id;
  CHECK(KindOf([&] { Pipeline(fx.model, LoadVocoder(fx.bundle_dir, fx.model.mel), other); }) ==
        ErrorKind::kFingerprintMismatch);

  nn::TensorArchive tampered = fx.coupling.ToArchive();
  tampered.meta["stats_id"] = "0123456789abcdef";
  CHECK(KindOf([&] { CouplingModel::FromArchive(tampered); }) == ErrorKind::kFingerprintMismatch);
}

TEST_CASE("render pipeline") {
  const testing::TinyFixture& fx = Fixture();
  const Pipeline pipeline = fx.MakePipeline();
  const Utterance& u = *fx.TestUtterances().front();
  const int hop = fx.model.mel.hop;

  SUBCASE("keep is copy synthesis and rendering is deterministic") {
    const RenderResult keep = pipeline.Manipulate(u.wave, ManipulationSpec{});
    const RenderResult copy = pipeline.Render(pipeline.Analyze(u.wave));
    CHECK(keep.wave.samples == copy.wave.samples);
    CHECK(keep.mel.bins.rows() == u.track.frames());
    CHECK(keep.wave.samples.size() == static_cast<size_t>(u.track.frames() * hop));
    CHECK(keep.mel.config_id == fx.model.mel.fingerprint());
    CHECK(keep.mel_pre.bins.rows() == keep.mel.bins.rows());
    const RenderResult other_seed = pipeline.Render(u.track, 5);
    CHECK(other_seed.mel_pre.bins == copy.mel_pre.bins);
  }

  SUBCASE("a single frame renders one hop") {
    ParameterTrack one = u.track;
    one.values = u.track.values.topRows(1);
    one.voicing.resize(1);
    const RenderResult r = pipeline.Render(one);
    CHECK(r.wave.samples.size() == static_cast<size_t>(hop));
  }

  SUBCASE("stage labels") {
    try {
      pipeline.Render(Normalize(u.track, fx.model.stats));
      FAIL("expected a normalize failure");
    } catch (const Error& e) {
      CHECK(e.stage().rfind("render/normalize", 0) == 0);
    }
    ParameterTrack nan = u.track;
    nan.values(0, 0) = std::nan("");
    CHECK_THROWS_AS(pipeline.Render(nan), Error);
    Waveform wrong = u.wave;
    wrong.sample_rate = 16000;
    CHECK(KindOf([&] { pipeline.Analyze(wrong); }) == ErrorKind::kInvalidArgument);
  }

  SUBCASE("coupling needs a model") {
    const Pipeline bare(fx.model, LoadVocoder(fx.bundle_dir, fx.model.mel));
    const ManipulationSpec spec = ManipulationSpec::ScaleOne(Feature::kF1, 1.2, true);
    CHECK(KindOf([&] { bare.Desired(u.track, spec); }) == ErrorKind::kNotFound);
    const ParameterTrack d = pipeline.Desired(u.track, spec);
    CHECK(BitEqual(d.column(Feature::kF1), (u.track.column(Feature::kF1) * 1.2).eval()));
  }

  SUBCASE("vocoder mel config must match the checkpoint") {
    TempDir dir("pipeline_mel");
    MelConfig other = fx.model.mel;
    other.fmax = 7600.0;
    WriteGriffinLimBundle(dir.file("b"), other);
    CHECK(KindOf([&] { Pipeline(fx.model, LoadVocoder(dir.file("b"), other)); }) ==
          ErrorKind::kFingerprintMismatch);
  }

  SUBCASE("concurrent renders agree") {
    const ParameterTrack d =
        pipeline.Desired(u.track, ManipulationSpec::ScaleOne(Feature::kLogF0, 1.1));
    std::vector<RenderResult> out(3);
    std::vector<std::thread> threads;
    for (size_t i = 0; i < out.size(); ++i) {
      threads.emplace_back([&, i] { out[i] = pipeline.Render(d); });
    }
    for (std::thread& t : threads) t.join();
    CHECK(out[0].wave.samples == out[1].wave.samples);
    CHECK(out[0].wave.samples == out[2].wave.samples);
  }

  SUBCASE("vocoder-only path") {
    const Waveform v = pipeline.VocoderOnly(u.wave);
    CHECK(v.samples.size() == static_cast<size_t>(u.log_mel.rows() * hop));
  }
}

}  // namespace
}  // namespace wavebender

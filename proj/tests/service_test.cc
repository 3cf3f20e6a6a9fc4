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

#include "wavebender/service.h"

#include <doctest.h>

#include <filesystem>
#include <future>
#include <thread>

#include "fixture.h"
#include "test_support.h"
#include "wavebender/synth.h"

// After Eigen: <resolv.h> defines a `_res` macro that clashes with it.
#include <httplib.h>

namespace wavebender {
namespace {

using testing::Fixture;
using testing::TempDir;
using json = nlohmann::json;

std::shared_ptr<const Pipeline> SharedPipeline() {
  static const auto p = std::make_shared<const Pipeline>(Fixture().MakePipeline());
  return p;
}

HttpRequest Post(const std::string& path, std::string body) {
  HttpRequest r;
  r.method = "POST";
  r.path = path;
  r.body = std::move(body);
  return r;
}

HttpRequest Get(const std::string& path) {
  HttpRequest r;
  r.method = "GET";
  r.path = path;
  return r;
}

struct FakeClock {
  StimulusService::Clock::time_point t{};
  std::function<StimulusService::Clock::time_point()> fn() {
    return [this] { return t; };
  }
};

std::string ClipWav(const Utterance& u) { return EncodeWav(u.wave); }

TEST_CASE("analyze returns one feature row per analysis frame") {
  StimulusService svc(SharedPipeline(), ServiceConfig{});
  const Waveform one_second = SyntheticVowel(140.0, 600.0, 1500.0, 1.0, 22050);
  REQUIRE(one_second.samples.size() == 22050);
  const HttpResponse r = svc.Handle(Post("/v1/analyze", EncodeWav(one_second)));
  REQUIRE(r.status == 200);
  const json j = r.json();
  // Padding of (n_fft - hop) / 2 per side leaves one frame per whole hop.
  const int expected = 22050 / 256;
  CHECK(j["track"]["frames"] == expected);
  CHECK(j["track"]["values"].size() == static_cast<size_t>(expected));
  CHECK(j["track"]["values"][0].size() == 5);
  CHECK(j["track"]["columns"] ==
        json({"f1_hz", "f2_hz", "log_f0", "centroid_hz", "slope_db_per_hz"}));
  CHECK(j["mel_preview"]["frames"] == expected);
  CHECK(j["mel_preview"]["n_mels"] == 80);
  CHECK(j["session"].get<std::string>().size() == 17);
  CHECK(j["version"] == 0);
  CHECK(svc.session_count() == 1);

  // The uploaded bytes are retrievable under their content id.
  const HttpResponse a = svc.Handle(Get("/v1/audio/" + j["audio_id"].get<std::string>()));
  CHECK(a.status == 200);
  CHECK(a.content_type == "audio/wav");
  CHECK(a.body == EncodeWav(one_second));
}

TEST_CASE("long previews are average-pooled") {
  StimulusService svc(SharedPipeline(), ServiceConfig{});
  const Waveform w = SyntheticVowel(120.0, 500.0, 1400.0, 6.0, 22050);
  const json j = svc.Handle(Post("/v1/analyze", EncodeWav(w))).json();
  CHECK(j["mel_preview"]["frames"] == 400);
  CHECK(j["mel_preview"]["source_frames"] == j["track"]["frames"]);
}

TEST_CASE("keep round trip equals copy synthesis of the upload") {
  const auto pipeline = SharedPipeline();
  StimulusService svc(pipeline, ServiceConfig{});
  const Utterance& u = *Fixture().TestUtterances().front();
  const std::string wav = ClipWav(u);
  const json a = svc.Handle(Post("/v1/analyze", wav)).json();
  const json req = {{"session", a["session"]}, {"spec", {{"f1", "keep"}}}, {"seed", 0}};
  const HttpResponse r = svc.Handle(Post("/v1/synthesize", req.dump()));
  REQUIRE(r.status == 200);
  const json j = r.json();

  // Oracle: the same chain driven directly on the decoded upload.
  const Waveform decoded = DecodeWav(wav);
  const ParameterTrack base = pipeline->Analyze(decoded);
  const RenderResult direct = pipeline->Render(pipeline->Desired(base, ManipulationSpec{}), 0);
  const ParameterTrack realized = pipeline->Analyze(direct.wave);
  CHECK(j["desired"]["values"] == TrackToJson(base)["values"]);
  CHECK(j["realized"]["values"] == TrackToJson(realized)["values"]);
  CHECK(j["audio_id"] == Fingerprint(EncodeWav(direct.wave)));
  CHECK(j["version"] == 1);

  const HttpResponse wav_out = svc.Handle(Get("/v1/audio/" + j["audio_id"].get<std::string>()));
  REQUIRE(wav_out.status == 200);
  CHECK(wav_out.headers.at("Content-Disposition").find("attachment") == 0);
  const Waveform back = DecodeWav(wav_out.body);
  CHECK(back.samples.size() == direct.wave.samples.size());

  // ?format=wav streams the same bytes.
  HttpRequest as_wav = Post("/v1/synthesize", req.dump());
  as_wav.query["format"] = "wav";
  const HttpResponse w = svc.Handle(as_wav);
  CHECK(w.status == 200);
  CHECK(w.content_type == "audio/wav");
  CHECK(w.headers.at("X-Audio-Id") == j["audio_id"]);
  CHECK(w.body == wav_out.body);
}

TEST_CASE("identical requests give identical responses") {
  StimulusService svc(SharedPipeline(), ServiceConfig{});
  const Utterance& u = *Fixture().TestUtterances().front();
  const json track = TrackToJson(u.track);
  const json req = {{"track", track}, {"spec", {{"f0", {{"scale", 1.2}}}}}, {"seed", 7}};
  const HttpResponse a = svc.Handle(Post("/v1/synthesize", req.dump()));
  const HttpResponse b = svc.Handle(Post("/v1/synthesize", req.dump()));
  REQUIRE(a.status == 200);
  CHECK(a.body == b.body);
  CHECK(svc.session_count() == 0);
}

TEST_CASE("invalid requests map to problem responses") {
  StimulusService svc(SharedPipeline(), ServiceConfig{});
  const Utterance& u = *Fixture().TestUtterances().front();
  const json track = TrackToJson(u.track);

  const auto problem = [&](const HttpRequest& req, int status) {
    const HttpResponse r = svc.Handle(req);
    CHECK(r.status == status);
    CHECK(r.content_type == "application/problem+json");
    const json j = r.json();
    CHECK(j["status"] == status);
    CHECK(j.contains("stage"));
    CHECK(!j["detail"].get<std::string>().empty());
    return j;
  };

  SUBCASE("zero scale") {
    const json j = problem(
        Post("/v1/synthesize", json{{"track", track}, {"spec", {{"f1", {{"scale", 0}}}}}}.dump()),
        400);
    CHECK(j["detail"].get<std::string>().find("scale") != std::string::npos);
  }
  SUBCASE("malformed and unknown fields") {
    problem(Post("/v1/synthesize", "{not json"), 400);
    problem(Post("/v1/synthesize", json{{"track", track}, {"speed", 2}}.dump()), 400);
    problem(Post("/v1/synthesize", json::object().dump()), 400);
    problem(Post("/v1/analyze", "RIFFnope"), 400);
    problem(Post("/v1/analyze", ""), 400);
  }
  SUBCASE("fingerprint mismatches") {
    const json expect = {{"checkpoint", "0000000000000000"}};
    const json j =
        problem(Post("/v1/synthesize", json{{"track", track}, {"expect", expect}}.dump()), 409);
    CHECK(j["detail"].get<std::string>().find("checkpoint") != std::string::npos);
    json foreign = track;
    foreign["stats_id"] = "ffffffffffffffff";
    problem(Post("/v1/synthesize", json{{"track", foreign}}.dump()), 409);
  }
  SUBCASE("unknown resources") {
    problem(Get("/v1/audio/0123456789abcdef"), 404);
    problem(Get("/v1/sessions/nope"), 404);
    problem(Post("/v1/synthesize", json{{"session", "nope"}}.dump()), 404);
    problem(Get("/v2/anything"), 404);
    problem(Get("/v1/synthesize"), 405);
  }
  SUBCASE("oversize upload") {
    ServiceConfig c;
    c.upload_limit_seconds = 1.0;
    StimulusService small(SharedPipeline(), c);
    const Waveform w = SyntheticVowel(140.0, 600.0, 1500.0, 1.5, 22050);
    const HttpResponse r = small.Handle(Post("/v1/analyze", EncodeWav(w)));
    CHECK(r.status == 413);
    CHECK(small.session_count() == 0);
  }
}

TEST_CASE("features and health describe the loaded model") {
  const auto pipeline = SharedPipeline();
  StimulusService svc(pipeline, ServiceConfig{});
  const json f = svc.Handle(Get("/v1/features")).json();
  REQUIRE(f["features"].size() == 5);
  const NormalizationStats& stats = pipeline->model().stats;
  for (int i = 0; i < kNumFeatures; ++i) {
    const json& e = f["features"][i];
    CHECK(e["mean"].get<double>() == stats.mean[i]);
    CHECK(e["max"].get<double>() - e["min"].get<double>() == doctest::Approx(6.0 * stats.std[i]));
  }
  CHECK(f["features"][2]["name"] == "f0");
  CHECK(f["coupling_available"] == true);

  const json h = svc.Handle(Get("/v1/health")).json();
  CHECK(h["status"] == "ok");
  CHECK(h["version"] == kVersion);
  CHECK(h["fingerprints"]["checkpoint"] == pipeline->model().fingerprint());
  CHECK(h["fingerprints"]["coupling"] == Fixture().coupling.fingerprint());
  CHECK(h["fingerprints"]["mel_config"] == pipeline->model().mel.fingerprint());
}

TEST_CASE("cors follows the allowlist") {
  StimulusService svc(SharedPipeline(), ServiceConfig{});
  HttpRequest pre;
  pre.method = "OPTIONS";
  pre.path = "/v1/synthesize";
  pre.headers["origin"] = "http://localhost:5173";
  const HttpResponse ok = svc.Handle(pre);
  CHECK(ok.status == 204);
  CHECK(ok.headers.at("Access-Control-Allow-Origin") == "http://localhost:5173");
  CHECK(ok.headers.at("Vary") == "Origin");

  HttpRequest other = Get("/v1/health");
  other.headers["origin"] = "http://evil.example";
  const HttpResponse denied = svc.Handle(other);
  CHECK(denied.status == 200);
  CHECK(denied.headers.count("Access-Control-Allow-Origin") == 0);
}

TEST_CASE("sessions keep versions and expire") {
  FakeClock clock;
  ServiceConfig c;
  c.session_ttl_seconds = 60.0;
  c.history_limit = 2;
  StimulusService svc(SharedPipeline(), c, clock.fn());
  const Utterance& u = *Fixture().TestUtterances().front();
  const json a = svc.Handle(Post("/v1/analyze", ClipWav(u))).json();
  const std::string id = a["session"];

  HttpRequest put;
  put.method = "PUT";
  put.path = "/v1/sessions/" + id + "/spec";
  put.body = json{{"spec", {{"f0", {{"scale", 0.9}}}}}, {"version", 0}}.dump();
  json p = svc.Handle(put).json();
  CHECK(p["version"] == 1);
  CHECK(p["previous_version"] == 0);
  CHECK(p["overwrote_newer"] == false);
  // A second editor still holding version 0 wins but is told so.
  put.body = json{{"spec", {{"f0", {{"scale", 1.1}}}}}, {"version", 0}}.dump();
  p = svc.Handle(put).json();
  CHECK(p["version"] == 2);
  CHECK(p["overwrote_newer"] == true);
  const json s = svc.Handle(Get("/v1/sessions/" + id)).json();
  CHECK(s["spec"]["f0"]["scale"] == 1.1);

  // History is bounded; evicted renders disappear.
  std::vector<std::string> renders;
  for (double m : {0.9, 1.0, 1.1}) {
    const json r =
        svc.Handle(Post("/v1/synthesize",
                        json{{"session", id}, {"spec", {{"f0", {{"scale", m}}}}}}.dump()))
            .json();
    renders.push_back(r["audio_id"]);
  }
  CHECK(svc.Handle(Get("/v1/audio/" + renders[0])).status == 404);
  CHECK(svc.Handle(Get("/v1/audio/" + renders[2])).status == 200);
  CHECK(svc.Handle(Get("/v1/sessions/" + id)).json()["renders"].size() == 2);

  clock.t += std::chrono::seconds(59);
  CHECK(svc.Handle(Get("/v1/sessions/" + id)).status == 200);
  clock.t += std::chrono::seconds(61);
  CHECK(svc.Handle(Get("/v1/sessions/" + id)).status == 404);
  CHECK(svc.session_count() == 0);
  CHECK(svc.Handle(Get("/v1/audio/" + renders[2])).status == 404);
}

TEST_CASE("sessions survive a restart with persistence") {
  TempDir dir("service");
  ServiceConfig c;
  c.persist_dir = dir.path().string();
  const Utterance& u = *Fixture().TestUtterances().front();
  std::string id, audio;
  {
    StimulusService svc(SharedPipeline(), c);
    id = svc.Handle(Post("/v1/analyze", ClipWav(u))).json()["session"];
    audio = svc.Handle(Post("/v1/synthesize", json{{"session", id}}.dump())).json()["audio_id"];
  }
  StimulusService again(SharedPipeline(), c);
  const HttpResponse s = again.Handle(Get("/v1/sessions/" + id));
  REQUIRE(s.status == 200);
  CHECK(s.json()["version"] == 1);
  CHECK(again.Handle(Get("/v1/audio/" + audio)).status == 200);
}

TEST_CASE("serves over a real socket") {
  ServiceConfig c;
  c.port = 0;
  StimulusService svc(SharedPipeline(), c);
  std::promise<int> bound;
  std::thread server([&] { svc.Serve([&](int port) { bound.set_value(port); }); });
  const int port = bound.get_future().get();
  CHECK(port > 0);

  httplib::Client client("127.0.0.1", port);
  const auto health = client.Get("/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["status"] == "ok");

  const Utterance& u = *Fixture().TestUtterances().front();
  const auto analyzed = client.Post("/v1/analyze", ClipWav(u), "audio/wav");
  REQUIRE(analyzed);
  CHECK(analyzed->status == 200);
  const auto bad = client.Post("/v1/synthesize", "{", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(bad->get_header_value("Content-Type") == "application/problem+json");

  svc.Stop();
  server.join();
}

}  // namespace
}  // namespace wavebender

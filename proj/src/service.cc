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

#include <algorithm>
#include <cmath>
#include <filesystem>

// After Eigen: <resolv.h> defines a `_res` macro that clashes with it.
#include <httplib.h>

namespace wavebender {
namespace {

namespace fs = std::filesystem;

constexpr int kPreviewFrames = 400;

const char* ProblemTitle(int status) {
  switch (status) {
    case 400:
      return "Bad Request";
    case 404:
      return "Not Found";
    case 405:
      return "Method Not Allowed";
    case 409:
      return "Conflict";
    case 413:
      return "Payload Too Large";
    default:
      return "Internal Server Error";
  }
}

int StatusFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
      return 400;
    case ErrorKind::kFingerprintMismatch:
      return 409;
    case ErrorKind::kNotFound:
      return 404;
    default:
      return 500;
  }
}

HttpResponse Problem(int status, const std::string& stage, const std::string& detail) {
  HttpResponse r;
  r.status = status;
  r.content_type = "application/problem+json";
  r.body = nlohmann::json{
      {"type", "about:blank"},
      {"title", ProblemTitle(status)},
      {"status", status},
      {"stage", stage},
      {"detail",
       detail}}.dump();
  return r;
}

HttpResponse Json(const nlohmann::json& j, int status = 200) {
  HttpResponse r;
  r.status = status;
  r.body = j.dump();
  return r;
}

HttpResponse Wav(const std::string& id, const std::string& bytes) {
  HttpResponse r;
  r.content_type = "audio/wav";
  r.body = bytes;
  r.headers["Content-Disposition"] = "attachment; filename=\"" + id + ".wav\"";
  r.headers["X-Audio-Id"] = id;
  return r;
}

nlohmann::json ParseBody(const std::string& body, const std::string& stage) {
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, stage, std::string("malformed JSON body: ") + e.what());
  }
}

// Average-pools frames so the preview has at most kPreviewFrames rows.
nlohmann::json MelPreview(const Matrix& bins) {
  const long t = bins.rows();
  const long out_t = std::min<long>(t, kPreviewFrames);
  Matrix pooled = Matrix::Zero(out_t, bins.cols());
  std::vector<int> count(out_t, 0);
  for (long i = 0; i < t; ++i) {
    const long j = i * out_t / t;
    pooled.row(j) += bins.row(i);
    ++count[j];
  }
  nlohmann::json rows = nlohmann::json::array();
  for (long j = 0; j < out_t; ++j) {
    pooled.row(j) /= std::max(1, count[j]);
    rows.push_back(std::vector<double>(pooled.row(j).data(), pooled.row(j).data() + pooled.cols()));
  }
  // Row-major copy: Eigen rows are strided, so copy element-wise.
  for (long j = 0; j < out_t; ++j) {
    for (long k = 0; k < pooled.cols(); ++k) rows[j][k] = pooled(j, k);
  }
  return {{"frames", out_t}, {"source_frames", t}, {"n_mels", bins.cols()}, {"values", rows}};
}

std::string Lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

ServiceConfig ServiceConfigFromJson(const nlohmann::json& j) {
  ServiceConfig c;
  if (j.is_null()) return c;
  if (!j.is_object())
    Fail(ErrorKind::kInvalidArgument, "service", "service config must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "host")
        c.host = v.get<std::string>();
      else if (key == "port")
        c.port = v.get<int>();
      else if (key == "upload_limit")
        c.upload_limit_seconds = v.get<double>();
      else if (key == "session_ttl")
        c.session_ttl_seconds = v.get<double>();
      else if (key == "request_timeout")
        c.request_timeout_seconds = v.get<double>();
      else if (key == "history_limit")
        c.history_limit = v.get<int>();
      else if (key == "cors_origins")
        c.cors_origins = v.get<std::vector<std::string>>();
      else if (key == "persist_dir")
        c.persist_dir = v.get<std::string>();
      else
        Fail(ErrorKind::kInvalidArgument, "service", "unknown service key " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, "service", e.what());
  }
  if (c.port < 0 || c.port > 65535 || !(c.upload_limit_seconds > 0) ||
      !(c.session_ttl_seconds > 0) || !(c.request_timeout_seconds > 0) || c.history_limit < 1) {
    Fail(ErrorKind::kInvalidArgument, "service", "service limits must be positive");
  }
  return c;
}

nlohmann::json TrackToJson(const ParameterTrack& t) {
  nlohmann::json columns = nlohmann::json::array();
  for (Feature f : kAllFeatures) columns.push_back(FeatureColumn(f));
  nlohmann::json values = nlohmann::json::array();
  for (int i = 0; i < t.frames(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int f = 0; f < kNumFeatures; ++f) row.push_back(t.values(i, f));
    values.push_back(std::move(row));
  }
  return {{"columns", columns},
          {"values", values},
          {"voicing", t.voicing},
          {"frames", t.frames()},
          {"frame_rate", t.meta.frame_rate},
          {"sample_rate", t.meta.sample_rate},
          {"normalized", t.meta.normalized},
          {"stats_id", t.meta.stats_id}};
}

ParameterTrack TrackFromJson(const nlohmann::json& j) {
  const char* stage = "track";
  if (!j.is_object()) Fail(ErrorKind::kInvalidArgument, stage, "track must be an object");
  ParameterTrack t;
  try {
    std::vector<int> order(kNumFeatures);
    std::iota(order.begin(), order.end(), 0);
    if (j.contains("columns")) {
      const auto cols = j.at("columns").get<std::vector<std::string>>();
      if (cols.size() != kNumFeatures) {
        Fail(ErrorKind::kInvalidArgument, stage, "track needs five columns");
      }
      std::vector<bool> seen(kNumFeatures, false);
      for (int c = 0; c < kNumFeatures; ++c) {
        const auto f = ParseFeature(cols[c]);
        if (!f || seen[Index(*f)]) {
          Fail(ErrorKind::kInvalidArgument, stage, "bad column " + cols[c]);
        }
        seen[Index(*f)] = true;
        order[c] = Index(*f);
      }
    }
    const auto& rows = j.at("values");
    const auto voicing = j.at("voicing").get<std::vector<int>>();
    if (!rows.is_array() || rows.empty() || rows.size() != voicing.size()) {
      Fail(ErrorKind::kInvalidArgument, stage, "values and voicing must have T >= 1 rows");
    }
    t.values.resize(static_cast<Eigen::Index>(rows.size()), kNumFeatures);
    for (size_t i = 0; i < rows.size(); ++i) {
      const auto row = rows[i].get<std::vector<double>>();
      if (row.size() != kNumFeatures) {
        Fail(ErrorKind::kInvalidArgument, stage, "row " + std::to_string(i) + " needs 5 values");
      }
      for (int c = 0; c < kNumFeatures; ++c) t.values(i, order[c]) = row[c];
    }
    for (int v : voicing) {
      if (v != 0 && v != 1) Fail(ErrorKind::kInvalidArgument, stage, "voicing must be 0 or 1");
      t.voicing.push_back(static_cast<uint8_t>(v));
    }
    t.meta.frame_rate = j.value("frame_rate", 0.0);
    t.meta.sample_rate = j.value("sample_rate", 0);
    t.meta.normalized = j.value("normalized", false);
    t.meta.stats_id = j.value("stats_id", "");
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kInvalidArgument, stage, e.what());
  }
  return t;
}

StimulusService::StimulusService(std::shared_ptr<const Pipeline> pipeline, ServiceConfig config,
                                 std::function<Clock::time_point()> now)
    : pipeline_(std::move(pipeline)), config_(std::move(config)), now_(std::move(now)) {
  if (!pipeline_) Fail(ErrorKind::kInvalidArgument, "service", "a pipeline is required");
  if (!config_.persist_dir.empty()) LoadPersisted();
}

StimulusService::~StimulusService() { Stop(); }

size_t StimulusService::session_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return sessions_.size();
}

HttpResponse StimulusService::Handle(const HttpRequest& req) {
  HttpResponse resp;
  const auto origin = req.headers.find("origin");
  try {
    Expire();
    const std::string& p = req.path;
    const auto is = [&](const char* method, const char* path) {
      return req.method == method && p == path;
    };
    if (req.method == "OPTIONS") {
      resp.status = 204;
      resp.content_type.clear();
    } else if (is("POST", "/v1/analyze")) {
      resp = Analyze(req);
    } else if (is("POST", "/v1/synthesize")) {
      resp = Synthesize(req);
    } else if (is("GET", "/v1/features")) {
      resp = Features();
    } else if (is("GET", "/v1/health")) {
      resp = Health();
    } else if (req.method == "GET" && p.rfind("/v1/audio/", 0) == 0) {
      std::string id = p.substr(10);
      if (id.size() > 4 && id.substr(id.size() - 4) == ".wav") id.resize(id.size() - 4);
      resp = Audio(id);
    } else if (p.rfind("/v1/sessions/", 0) == 0) {
      const std::string rest = p.substr(13);
      const size_t slash = rest.find('/');
      if (req.method == "GET" && slash == std::string::npos) {
        resp = GetSession(rest);
      } else if (req.method == "PUT" && slash != std::string::npos &&
                 rest.substr(slash) == "/spec") {
        resp = PutSpec(rest.substr(0, slash), req);
      } else {
        resp = Problem(404, "route", "no route for " + req.method + " " + p);
      }
    } else if (p == "/v1/analyze" || p == "/v1/synthesize" || p == "/v1/features" ||
               p == "/v1/health") {
      resp = Problem(405, "route", req.method + " is not allowed on " + p);
    } else {
      resp = Problem(404, "route", "no route for " + req.method + " " + p);
    }
  } catch (const Error& e) {
    resp = Problem(StatusFor(e.kind()), e.stage(), e.detail());
  } catch (const std::exception& e) {
    resp = Problem(500, "service", e.what());
  }
  if (origin != req.headers.end()) {
    const auto& allow = config_.cors_origins;
    if (std::find(allow.begin(), allow.end(), origin->second) != allow.end() ||
        std::find(allow.begin(), allow.end(), "*") != allow.end()) {
      resp.headers["Access-Control-Allow-Origin"] = origin->second;
      resp.headers["Access-Control-Allow-Methods"] = "GET, POST, PUT, OPTIONS";
      resp.headers["Access-Control-Allow-Headers"] = "Content-Type";
      resp.headers["Access-Control-Expose-Headers"] = "X-Audio-Id, Content-Disposition";
      resp.headers["Vary"] = "Origin";
    }
  }
  return resp;
}

HttpResponse StimulusService::Analyze(const HttpRequest& r) {
  if (r.body.empty()) return Problem(400, "analyze", "request body must be a WAV file");
  Waveform wave = DecodeWav(r.body);
  if (wave.duration_seconds() > config_.upload_limit_seconds) {
    return Problem(413, "analyze",
                   "upload is " + FormatDouble(wave.duration_seconds()) + " s; the limit is " +
                       FormatDouble(config_.upload_limit_seconds) + " s");
  }
  const ParameterTrack track = pipeline_->Analyze(wave);
  MelSpectrogram mel;
  try {
    mel = ComputeMel(wave, pipeline_->model().mel);
  } catch (const Error& e) {
    Restage(e, "analyze");
  }
  const std::string upload_id = StoreAudio(r.body);

  Session s;
  s.upload_id = upload_id;
  s.track = track;
  s.last_access = now_();
  {
    std::lock_guard<std::mutex> lock(mu_);
    s.id = "s" + Fingerprint(upload_id + ":" + std::to_string(++session_counter_));
    sessions_[s.id] = s;
  }
  Persist(s);
  return Json({{"session", s.id},
               {"version", s.version},
               {"audio_id", upload_id},
               {"track", TrackToJson(track)},
               {"mel_preview", MelPreview(mel.bins)},
               {"fingerprints", Fingerprints()}});
}

HttpResponse StimulusService::Synthesize(const HttpRequest& r) {
  const nlohmann::json body = ParseBody(r.body, "synthesize");
  if (!body.is_object()) return Problem(400, "synthesize", "body must be a JSON object");
  for (const auto& [key, v] : body.items()) {
    if (key != "session" && key != "track" && key != "spec" && key != "seed" && key != "expect") {
      return Problem(400, "synthesize", "unknown field " + key);
    }
  }
  if (body.contains("expect")) {
    const nlohmann::json have = Fingerprints();
    if (!body["expect"].is_object()) return Problem(400, "synthesize", "expect must be an object");
    for (const auto& [key, want] : body["expect"].items()) {
      if (!have.contains(key)) return Problem(400, "synthesize", "unknown fingerprint " + key);
      if (have[key] != want) {
        return Problem(
            409, "synthesize",
            key + " fingerprint is " + have[key].dump() + ", request expects " + want.dump());
      }
    }
  }
  ManipulationSpec spec;
  if (body.contains("spec")) spec = SpecFromJson(body["spec"]);
  uint64_t seed = 0;
  if (body.contains("seed")) {
    if (!body["seed"].is_number_unsigned()) {
      return Problem(400, "synthesize", "seed must be a non-negative integer");
    }
    seed = body["seed"].get<uint64_t>();
  }

  std::string session_id;
  ParameterTrack base;
  if (body.contains("track")) {
    base = TrackFromJson(body["track"]);
    const std::string stats = pipeline_->model().stats.id();
    if (!base.meta.stats_id.empty() && base.meta.stats_id != stats) {
      return Problem(
          409, "synthesize",
          "track belongs to stats " + base.meta.stats_id + "; the service uses " + stats);
    }
    if (base.meta.normalized) return Problem(400, "synthesize", "send denormalized tracks");
  }
  if (body.contains("session")) {
    if (!body["session"].is_string()) return Problem(400, "synthesize", "session must be a string");
    session_id = body["session"].get<std::string>();
    std::lock_guard<std::mutex> lock(mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) return Problem(404, "synthesize", "unknown session " + session_id);
    it->second.last_access = now_();
    if (!body.contains("track")) base = it->second.track;
  } else if (!body.contains("track")) {
    return Problem(400, "synthesize", "send a session or a track");
  }

  const ParameterTrack desired = pipeline_->Desired(base, spec);
  const RenderResult rendered = pipeline_->Render(desired, seed);
  const ParameterTrack realized = pipeline_->Analyze(rendered.wave);
  const std::string audio_id = StoreAudio(EncodeWav(rendered.wave));

  nlohmann::json out = {{"audio_id", audio_id},
                        {"audio_url", "/v1/audio/" + audio_id},
                        {"spec", SpecToJson(spec)},
                        {"seed", seed},
                        {"desired", TrackToJson(desired)},
                        {"realized", TrackToJson(realized)},
                        {"fingerprints", Fingerprints()}};
  if (!session_id.empty()) {
    Session snapshot;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = sessions_.find(session_id);
      if (it == sessions_.end()) return Problem(404, "synthesize", "session expired");
      Session& s = it->second;
      s.spec = spec;
      s.renders.push_back(audio_id);
      while (static_cast<int>(s.renders.size()) > config_.history_limit) {
        const std::string old = s.renders.front();
        s.renders.erase(s.renders.begin());
        if (old != s.upload_id &&
            std::find(s.renders.begin(), s.renders.end(), old) == s.renders.end()) {
          audio_.erase(old);
        }
      }
      ++s.version;
      out["session"] = s.id;
      out["version"] = s.version;
      snapshot = s;
    }
    Persist(snapshot);
  }
  const auto format = r.query.find("format");
  if (format != r.query.end() && format->second == "wav") {
    std::lock_guard<std::mutex> lock(mu_);
    HttpResponse w = Wav(audio_id, audio_.at(audio_id));
    if (out.contains("version")) w.headers["X-Session-Version"] = out["version"].dump();
    return w;
  }
  return Json(out);
}

HttpResponse StimulusService::Audio(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = audio_.find(id);
  if (it == audio_.end()) return Problem(404, "audio", "unknown audio id " + id);
  return Wav(id, it->second);
}

HttpResponse StimulusService::Features() const {
  const NormalizationStats& stats = pipeline_->model().stats;
  static const std::array<const char*, kNumFeatures> kUnits = {"Hz", "Hz", "log Hz", "Hz", "dB/Hz"};
  nlohmann::json features = nlohmann::json::array();
  for (Feature f : kAllFeatures) {
    const int i = Index(f);
    nlohmann::json entry = {{"name", FeatureName(f)},
                            {"column", FeatureColumn(f)},
                            {"unit", kUnits[i]},
                            {"mean", stats.mean[i]},
                            {"std", stats.std[i]},
                            {"min", stats.mean[i] - 3.0 * stats.std[i]},
                            {"max", stats.mean[i] + 3.0 * stats.std[i]}};
    if (f == Feature::kLogF0) {
      entry["min_hz"] = std::exp(stats.mean[i] - 3.0 * stats.std[i]);
      entry["max_hz"] = std::exp(stats.mean[i] + 3.0 * stats.std[i]);
    }
    features.push_back(entry);
  }
  return Json({{"features", features},
               {"scales", {0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3}},
               {"coupling_policies", {"independent", "predict_f2_from_f1", "predict_f1_from_f2"}},
               {"coupling_available", pipeline_->coupling() != nullptr},
               {"frame_rate", pipeline_->model().mel.frame_rate()},
               {"sample_rate", pipeline_->model().mel.sample_rate}});
}

nlohmann::json StimulusService::Fingerprints() const {
  const TrainedModel& m = pipeline_->model();
  return {{"checkpoint", m.fingerprint()},
          {"vocoder", pipeline_->vocoder().fingerprint()},
          {"coupling", pipeline_->coupling() ? nlohmann::json(pipeline_->coupling()->fingerprint())
                                             : nlohmann::json(nullptr)},
          {"stats", m.stats.id()},
          {"mel_config", m.mel.fingerprint()}};
}

HttpResponse StimulusService::Health() const {
  return Json({{"status", "ok"},
               {"version", kVersion},
               {"vocoder",
                {{"name", pipeline_->vocoder().manifest().name},
                 {"version", pipeline_->vocoder().manifest().version},
                 {"kind", pipeline_->vocoder().manifest().kind}}},
               {"step", pipeline_->model().step},
               {"fingerprints", Fingerprints()}});
}

nlohmann::json StimulusService::SessionJson(const Session& s) const {
  return {{"session", s.id},
          {"version", s.version},
          {"audio_id", s.upload_id},
          {"renders", s.renders},
          {"spec", SpecToJson(s.spec)},
          {"track", TrackToJson(s.track)},
          {"fingerprints", Fingerprints()}};
}

HttpResponse StimulusService::GetSession(const std::string& id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return Problem(404, "session", "unknown session " + id);
  it->second.last_access = now_();
  return Json(SessionJson(it->second));
}

HttpResponse StimulusService::PutSpec(const std::string& id, const HttpRequest& r) {
  const nlohmann::json body = ParseBody(r.body, "session");
  if (!body.is_object() || !body.contains("spec")) {
    return Problem(400, "session", "body must be {\"spec\": ..., \"version\": n}");
  }
  const ManipulationSpec spec = SpecFromJson(body["spec"]);
  Session snapshot;
  long seen = -1;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return Problem(404, "session", "unknown session " + id);
    Session& s = it->second;
    ValidateSpec(spec, s.track.frames());
    seen = s.version;
    s.spec = spec;
    ++s.version;
    s.last_access = now_();
    snapshot = s;
  }
  Persist(snapshot);
  const long sent = body.value("version", -1L);
  return Json({{"session", id},
               {"version", snapshot.version},
               {"previous_version", seen},
               {"overwrote_newer", sent >= 0 && sent != seen}});
}

void StimulusService::Expire() {
  const auto now = now_();
  const auto ttl = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(config_.session_ttl_seconds));
  std::vector<std::string> gone;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (now - it->second.last_access > ttl) {
        audio_.erase(it->second.upload_id);
        for (const std::string& a : it->second.renders) audio_.erase(a);
        gone.push_back(it->first);
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }
  if (!config_.persist_dir.empty()) {
    for (const std::string& id : gone) {
      std::error_code ec;
      fs::remove(fs::path(config_.persist_dir) / "sessions" / (id + ".json"), ec);
    }
  }
}

std::string StimulusService::StoreAudio(const std::string& wav) {
  const std::string id = Fingerprint(wav);
  {
    std::lock_guard<std::mutex> lock(mu_);
    audio_[id] = wav;
  }
  if (!config_.persist_dir.empty()) {
    const fs::path p = fs::path(config_.persist_dir) / "audio" / (id + ".wav");
    if (!fs::exists(p)) WriteFileBytes(p.string(), wav);
  }
  return id;
}

void StimulusService::Persist(const Session& s) {
  if (config_.persist_dir.empty()) return;
  const nlohmann::json j = {
      {"session", s.id},      {"version", s.version},       {"audio_id", s.upload_id},
      {"renders", s.renders}, {"spec", SpecToJson(s.spec)}, {"track", TrackToJson(s.track)}};
  const fs::path dir = fs::path(config_.persist_dir) / "sessions";
  const fs::path tmp = dir / (s.id + ".json.tmp");
  WriteFileBytes(tmp.string(), j.dump());
  fs::rename(tmp, dir / (s.id + ".json"));
}

void StimulusService::LoadPersisted() {
  const fs::path dir = fs::path(config_.persist_dir) / "sessions";
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return;
  const auto now = now_();
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(ReadFileBytes(e.path().string()));
      Session s;
      s.id = j.at("session").get<std::string>();
      s.version = j.at("version").get<long>();
      s.upload_id = j.at("audio_id").get<std::string>();
      s.renders = j.at("renders").get<std::vector<std::string>>();
      s.spec = SpecFromJson(j.at("spec"));
      s.track = TrackFromJson(j.at("track"));
      s.last_access = now;
      for (const std::string& id : s.renders) {
        const fs::path a = fs::path(config_.persist_dir) / "audio" / (id + ".wav");
        if (fs::exists(a)) audio_[id] = ReadFileBytes(a.string());
      }
      const fs::path a = fs::path(config_.persist_dir) / "audio" / (s.upload_id + ".wav");
      if (fs::exists(a)) audio_[s.upload_id] = ReadFileBytes(a.string());
      sessions_[s.id] = std::move(s);
      ++session_counter_;
    } catch (const std::exception& ex) {
      // A damaged session file only loses that session.
      std::fprintf(stderr, "service: skipping %s: %s\n", e.path().c_str(), ex.what());
    }
  }
}

void StimulusService::Serve(const std::function<void(int)>& on_bound) {
  httplib::Server server;
  const auto timeout = std::chrono::duration<double>(config_.request_timeout_seconds);
  server.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  server.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  // WAV headroom over the audio limit: 8 bytes per sample at 48 kHz, plus 1 MiB.
  server.set_payload_max_length(static_cast<size_t>(config_.upload_limit_seconds * 48000.0 * 8.0) +
                                (1u << 20));
  const auto handler = [this](const httplib::Request& in, httplib::Response& out) {
    HttpRequest req;
    req.method = in.method;
    req.path = in.path;
    req.body = in.body;
    for (const auto& [k, v] : in.params) req.query[k] = v;
    for (const auto& [k, v] : in.headers) req.headers[Lower(k)] = v;
    const HttpResponse resp = Handle(req);
    out.status = resp.status;
    for (const auto& [k, v] : resp.headers) out.set_header(k, v);
    if (!resp.content_type.empty()) out.set_content(resp.body, resp.content_type);
  };
  const std::string pattern = R"(/.*)";
  server.Get(pattern, handler);
  server.Post(pattern, handler);
  server.Put(pattern, handler);
  server.Options(pattern, handler);
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      const HttpResponse p = Problem(res.status, "http", ProblemTitle(res.status));
      res.set_content(p.body, p.content_type);
    }
  });

  int port = config_.port;
  if (port == 0) {
    port = server.bind_to_any_port(config_.host);
  } else if (!server.bind_to_port(config_.host, port)) {
    port = -1;
  }
  if (port <= 0) {
    Fail(ErrorKind::kIo, "service",
         "cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  {
    std::lock_guard<std::mutex> lock(server_mu_);
    server_ = &server;
  }
  if (on_bound) on_bound(port);
  server.listen_after_bind();
  std::lock_guard<std::mutex> lock(server_mu_);
  server_ = nullptr;
}

void StimulusService::Stop() {
  std::lock_guard<std::mutex> lock(server_mu_);
  if (server_) server_->stop();
}

}  // namespace wavebender

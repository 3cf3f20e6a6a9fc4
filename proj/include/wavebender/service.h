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

// HTTP front end for analysis, synthesis and manipulation.
//
//   POST /v1/analyze             WAV body -> session, track, mel preview
//   POST /v1/synthesize          JSON {session|track, spec, seed, expect}
//   GET  /v1/audio/{id}          rendered or uploaded WAV
//   GET  /v1/features            feature metadata and valid ranges
//   GET  /v1/health              fingerprints and versions
//   GET  /v1/sessions/{id}       session state
//   PUT  /v1/sessions/{id}/spec  {spec, version} -> new version
//
// Errors are application/problem+json with the failing stage.

#ifndef WAVEBENDER_SERVICE_H_
#define WAVEBENDER_SERVICE_H_

#include <chrono>
#include <functional>
#include <json.hpp>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "wavebender/manipulation.h"

namespace httplib {
class Server;
}

namespace wavebender {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  double upload_limit_seconds = 60.0;
  double session_ttl_seconds = 1800.0;
  double request_timeout_seconds = 120.0;
  int history_limit = 20;
  std::vector<std::string> cors_origins = {"http://localhost:5173"};
  // Sessions and their audio survive restarts when set.
  std::string persist_dir;
};

// Reads the "service" object: {port, upload_limit, session_ttl, ...}.
ServiceConfig ServiceConfigFromJson(const nlohmann::json& j);

nlohmann::json TrackToJson(const ParameterTrack& track);
ParameterTrack TrackFromJson(const nlohmann::json& j);

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lowercase names
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

class StimulusService {
 public:
  using Clock = std::chrono::steady_clock;

  StimulusService(std::shared_ptr<const Pipeline> pipeline, ServiceConfig config,
                  std::function<Clock::time_point()> now = Clock::now);
  ~StimulusService();

  // Thread-safe; never throws.
  HttpResponse Handle(const HttpRequest& request);

  // Binds and blocks until Stop(). `on_bound` receives the actual port.
  void Serve(const std::function<void(int)>& on_bound = {});
  void Stop();

  const ServiceConfig& config() const { return config_; }
  size_t session_count() const;

 private:
  struct Session {
    std::string id;
    std::string upload_id;
    ParameterTrack track;
    ManipulationSpec spec;
    std::vector<std::string> renders;  // audio ids, oldest first
    long version = 0;
    Clock::time_point last_access;
  };

  HttpResponse Analyze(const HttpRequest& r);
  HttpResponse Synthesize(const HttpRequest& r);
  HttpResponse Audio(const std::string& id) const;
  HttpResponse Features() const;
  HttpResponse Health() const;
  HttpResponse GetSession(const std::string& id);
  HttpResponse PutSpec(const std::string& id, const HttpRequest& r);

  nlohmann::json Fingerprints() const;
  nlohmann::json SessionJson(const Session& s) const;
  void Expire();
  std::string StoreAudio(const std::string& wav);
  void Persist(const Session& s);
  void LoadPersisted();

  std::shared_ptr<const Pipeline> pipeline_;
  ServiceConfig config_;
  std::function<Clock::time_point()> now_;

  mutable std::mutex mu_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, std::string> audio_;  // id -> WAV bytes
  long session_counter_ = 0;

  std::mutex server_mu_;
  httplib::Server* server_ = nullptr;  // set while serving
};

}  // namespace wavebender

#endif  // WAVEBENDER_SERVICE_H_

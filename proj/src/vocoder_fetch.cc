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

#include <algorithm>
#include <filesystem>
#include <regex>

#include "wavebender/vocoder.h"

// After Eigen: <resolv.h> defines a `_res` macro that clashes with it.
#include <httplib.h>

namespace wavebender {
namespace {

namespace fs = std::filesystem;
constexpr char kStage[] = "fetch-vocoder";

std::string FetchBytes(const std::string& url) {
  if (url.rfind("file://", 0) == 0) {
    const std::string path = url.substr(7);
    if (!fs::exists(path)) Fail(ErrorKind::kNotFound, kStage, "no file at " + path);
    return ReadFileBytes(path);
  }
  static const std::regex kHttp(R"(^http://([^/:]+)(?::(\d+))?(/.*)$)");
  std::smatch m;
  if (!std::regex_match(url, m, kHttp)) {
    Fail(ErrorKind::kInvalidArgument, kStage,
         "unsupported URL '" + url +
             "'; use http:// or file:// (download https "
             "bundles manually and fetch them through file://)");
  }
  const int port = m[2].matched ? std::stoi(m[2].str()) : 80;
  httplib::Client client(m[1].str(), port);
  client.set_connection_timeout(10);
  client.set_read_timeout(120);
  client.set_follow_location(true);
  const httplib::Result res = client.Get(m[3].str());
  if (!res) {
    Fail(ErrorKind::kIo, kStage, "GET " + url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    Fail(ErrorKind::kNotFound, kStage,
         "GET " + url + " returned HTTP " + std::to_string(res->status));
  }
  return res->body;
}

std::string Sibling(const std::string& url, const std::string& relative) {
  return url.substr(0, url.rfind('/') + 1) + relative;
}

void CheckSha(const std::string& what, const std::string& bytes, const std::string& pinned) {
  const std::string actual = Sha256Hex(bytes);
  if (actual != pinned) {
    Fail(ErrorKind::kChecksum, kStage,
         what + " has sha256 " + actual + " but " + pinned + " was pinned");
  }
}

}  // namespace

void FetchBundle(const std::string& url, const std::string& manifest_sha256, const std::string& dir,
                 const MelConfig& expected) {
  static const std::regex kHex("^[0-9a-f]{64}$");
  if (!std::regex_match(manifest_sha256, kHex)) {
    Fail(ErrorKind::kInvalidArgument, kStage,
         "--sha256 must be the 64-digit lowercase hex digest of the manifest");
  }
  if (fs::exists(fs::path(dir) / "manifest.json")) {
    Fail(ErrorKind::kInvalidArgument, kStage, dir + " already holds a bundle");
  }
  const std::string manifest_bytes = FetchBytes(url);
  CheckSha("manifest", manifest_bytes, manifest_sha256);
  const nlohmann::json j = nlohmann::json::parse(manifest_bytes, nullptr, false);
  if (j.is_discarded()) Fail(ErrorKind::kInvalidArgument, kStage, "manifest is not JSON");
  const VocoderManifest m = ManifestFromJson(j);

  const fs::path staging = fs::path(dir).string() + ".partial";
  fs::remove_all(staging);
  WriteFileBytes((staging / "manifest.json").string(), manifest_bytes);
  std::vector<std::pair<std::string, std::string>> files = {{m.weights_file, m.weights_sha256}};
  for (const GoldenVector& g : m.golden) files.emplace_back(g.file, g.sha256);
  for (const auto& [rel, sha] : files) {
    const std::string bytes = FetchBytes(Sibling(url, rel));
    CheckSha(rel, bytes, sha);
    WriteFileBytes((staging / rel).string(), bytes);
  }
  const BundleReport report = VerifyBundle(staging.string(), expected);
  if (!report.ok()) {
    fs::remove_all(staging);
    Fail(ErrorKind::kInvalidArgument, kStage,
         "downloaded bundle failed verification:\n" + report.ToText());
  }
  if (fs::exists(dir)) fs::remove(dir);  // only an empty directory can remain here
  fs::rename(staging, dir);
}

}  // namespace wavebender

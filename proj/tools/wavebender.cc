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

// Command-line front end. Exit status: 0 success, 1 usage, 2 runtime failure.

#include <CLI11.hpp>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "wavebender/audio.h"
#include "wavebender/corpus.h"
#include "wavebender/eval.h"
#include "wavebender/manipulation.h"
#include "wavebender/service.h"
#include "wavebender/trainer.h"
#include "wavebender/vocoder.h"

namespace wb = wavebender;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kCouplingFile[] = "coupling.wbt";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<uint64_t> seed;
  std::string config;
  bool verbose = false;
};

json ReadConfig(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    return json::parse(wb::ReadFileBytes(path));
  } catch (const json::exception& e) {
    wb::Fail(wb::ErrorKind::kInvalidArgument, "config", path + ": " + e.what());
  }
}

uint64_t SeedOr(const Globals& g, uint64_t fallback = 0) { return g.seed.value_or(fallback); }

// Model, vocoder and coupling locations shared by the inference commands.
struct ModelFlags {
  std::string checkpoint;
  std::string vocoder;
  std::string coupling;

  void Add(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "checkpoint file or training output directory")
        ->required();
    app->add_option("--vocoder", vocoder,
                    "vocoder bundle directory (default: config vocoder.bundle, then "
                    "$WAVEBENDER_VOCODER)");
    app->add_option("--coupling", coupling,
                    "F1/F2 coupling model (default: coupling.wbt next to the checkpoint)");
  }

  wb::Pipeline Load(const json& config) const {
    wb::TrainedModel model = wb::LoadTrainedModel(checkpoint);
    std::string bundle = vocoder;
    if (bundle.empty() && config.contains("vocoder")) {
      bundle = config["vocoder"].value("bundle", "");
    }
    wb::Vocoder voc = wb::LoadVocoder(wb::ResolveBundlePath(bundle), model.mel);
    std::optional<wb::CouplingModel> coupled;
    std::string cpath = coupling;
    if (cpath.empty()) {
      const fs::path p(checkpoint);
      const fs::path dir = fs::is_directory(p) ? p : p.parent_path();
      if (fs::exists(dir / kCouplingFile)) cpath = (dir / kCouplingFile).string();
    }
    if (!cpath.empty()) coupled = wb::CouplingModel::Load(cpath);
    return wb::Pipeline(std::move(model), std::move(voc), std::move(coupled));
  }
};

// Test ids recorded in a checkpoint, for evaluating on the held-out split.
std::vector<std::string> CheckpointTestIds(const std::string& checkpoint) {
  fs::path p(checkpoint);
  if (fs::is_directory(p)) p /= "checkpoint.wbt";
  const wb::nn::TensorArchive a = wb::nn::TensorArchive::Load(p.string());
  return a.meta.at("data").at("test_ids").get<std::vector<std::string>>();
}

struct CorpusFlags {
  std::string root;
  int limit = 0;
  std::string split = "all";
  std::string cache;

  void Add(CLI::App* app) {
    app->add_option("--corpus", root, "corpus root (metadata.csv + wavs/)")->required();
    app->add_option("--limit", limit, "use the first N utterances")->check(CLI::NonNegativeNumber);
    app->add_option("--split", split, "all, or test for the checkpoint's held-out ids")
        ->check(CLI::IsMember({"all", "test"}));
    app->add_option("--cache", cache, "feature cache directory");
  }

  std::vector<wb::Utterance> Load(const wb::TrainedModel& model,
                                  const std::string& checkpoint) const {
    std::vector<wb::CorpusEntry> entries = wb::ReadCorpusIndex(root);
    if (split == "test") {
      const auto ids = CheckpointTestIds(checkpoint);
      std::erase_if(entries, [&](const wb::CorpusEntry& e) {
        return std::find(ids.begin(), ids.end(), e.id) == ids.end();
      });
    }
    if (limit > 0 && static_cast<int>(entries.size()) > limit) entries.resize(limit);
    if (entries.empty()) wb::Fail(wb::ErrorKind::kNotFound, "corpus", "no utterances selected");
    return wb::LoadCorpus(entries, model.extraction, model.mel, cache);
  }
};

std::vector<const wb::Utterance*> Pointers(const std::vector<wb::Utterance>& utts) {
  std::vector<const wb::Utterance*> out;
  for (const auto& u : utts) out.push_back(&u);
  return out;
}

wb::Feature FeatureFlag(const std::string& name) {
  const auto f = wb::ParseFeature(name);
  if (!f) throw UsageError("unknown feature '" + name + "' (f1, f2, f0, centroid, slope)");
  return *f;
}

wb::CouplingTrainingOptions CouplingOptions(const json& j, uint64_t seed) {
  wb::CouplingTrainingOptions o;
  o.seed = seed;
  if (!j.is_object()) return o;
  o.widths = j.value("widths", o.widths);
  o.kernel_size = j.value("kernel_size", o.kernel_size);
  o.groups = j.value("groups", o.groups);
  o.epochs = j.value("epochs", o.epochs);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.segment_frames = j.value("segment_frames", o.segment_frames);
  o.base_lr = j.value("base_lr", o.base_lr);
  return o;
}

std::optional<fs::path> LatestCheckpoint(const fs::path& out) {
  std::optional<fs::path> best;
  long best_step = -1;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(out / "ckpt", ec)) {
    const std::string name = e.path().filename().string();
    if (name.empty() || !std::all_of(name.begin(), name.end(), ::isdigit)) continue;
    const long step = std::stol(name);
    if (step > best_step && fs::exists(e.path() / "checkpoint.wbt")) {
      best_step = step;
      best = e.path() / "checkpoint.wbt";
    }
  }
  return best;
}

// ---- subcommands ----

void MakeCorpus(const Globals& g, const std::string& out, int count) {
  wb::WriteSyntheticCorpus(out, count, SeedOr(g));
  std::cout << "wrote " << count << " utterances to " << out << "\n";
}

void Extract(const Globals& g, const std::string& in, const std::string& out,
             const std::string& checkpoint) {
  wb::TrainingConfig defaults =
      wb::TrainingConfigFromJson(ReadConfig(g.config).value("train", json::object()));
  wb::ExtractionOptions options = defaults.extraction;
  if (!checkpoint.empty()) options = wb::LoadTrainedModel(checkpoint).extraction;
  const wb::ParameterTrack track = wb::ExtractParameters(wb::ReadWav(in), options);
  wb::SaveTrack(out, track);
  std::cout << "wrote " << track.frames() << " frames to " << out << "\n";
}

struct TrainFlags {
  std::string corpus;
  std::string out;
  int limit = -1;
  int pretrain_epochs = -1;
  int joint_epochs = -1;
  long max_steps = -1;
  bool resume = false;
  bool no_coupling = false;
  std::string cache;
};

void Train(const Globals& g, const TrainFlags& f) {
  const json file = ReadConfig(g.config);
  wb::TrainingConfig config =
      wb::TrainingConfigFromJson(file.contains("train") ? file["train"] : file);
  if (!f.corpus.empty()) config.corpus_path = f.corpus;
  if (f.limit >= 0) config.corpus_limit = f.limit;
  if (f.pretrain_epochs >= 0) config.pretrain_epochs = f.pretrain_epochs;
  if (f.joint_epochs >= 0) config.joint_epochs = f.joint_epochs;
  if (!f.cache.empty()) config.cache_dir = f.cache;
  if (g.seed) {
    config.seed = *g.seed;
    config.split_seed = *g.seed;
    config.augmentation.seed = *g.seed;
  }

  std::optional<wb::nn::TensorArchive> restored;
  if (f.resume) {
    const auto latest = LatestCheckpoint(f.out);
    if (!latest) {
      wb::Fail(wb::ErrorKind::kNotFound, "train",
               "--resume: no checkpoint under " + f.out + "/ckpt");
    }
    restored = wb::nn::TensorArchive::Load(latest->string());
    // The run continues with the configuration it was started with.
    const std::string corpus = config.corpus_path;
    config = wb::TrainingConfigFromJson(restored->meta.at("config"));
    if (!f.corpus.empty()) config.corpus_path = corpus;
    if (g.verbose) std::cerr << "resuming from " << latest->string() << "\n";
  }
  if (config.corpus_path.empty()) throw UsageError("train needs --corpus or train.corpus_path");
  wb::ValidateTrainingConfig(config);

  const auto entries = wb::ReadCorpusIndex(config.corpus_path, config.corpus_limit);
  if (g.verbose) std::cerr << "preparing " << entries.size() << " utterances\n";
  const auto corpus = wb::LoadCorpus(entries, config.extraction, config.mel, config.cache_dir);
  const wb::TrainingData data = wb::PrepareTrainingData(config, corpus);
  for (const auto& w : data.warnings) std::cerr << "warning: " << w << "\n";

  wb::Trainer trainer =
      restored ? wb::Trainer::FromCheckpoint(*restored, data) : wb::Trainer(config, data);
  trainer.Run(f.out, f.max_steps, g.verbose);
  for (const auto& w : trainer.warnings()) std::cerr << "warning: " << w << "\n";
  if (trainer.step() < trainer.total_steps()) {
    std::cout << "stopped at step " << trainer.step() << " of " << trainer.total_steps()
              << "; continue with --resume\n";
    return;
  }
  const fs::path final_path = fs::path(f.out) / "checkpoint.wbt";
  trainer.ToArchive().Save(final_path.string());
  std::cout << "wrote " << final_path.string() << " (step " << trainer.step() << ")\n";
  if (f.no_coupling) return;

  std::vector<wb::Matrix> train, heldout;
  for (const auto& e : data.train) {
    if (!e.augmented) train.push_back(e.input);
  }
  for (const auto& e : data.validation) heldout.push_back(e.input);
  const wb::CouplingModel coupling = wb::TrainCouplingModel(
      train, heldout, data.stats, CouplingOptions(file.value("coupling", json()), config.seed));
  const fs::path cpath = fs::path(f.out) / kCouplingFile;
  coupling.Save(cpath.string());
  std::cout << "wrote " << cpath.string() << " (held-out rmse f2<-f1 "
            << coupling.f2_from_f1.heldout_rmse_hz << " Hz, f1<-f2 "
            << coupling.f1_from_f2.heldout_rmse_hz << " Hz)\n";
}

void CopySynth(const Globals& g, const ModelFlags& m, const std::string& in, const std::string& out,
               bool vocoder_only) {
  const wb::Pipeline p = m.Load(ReadConfig(g.config));
  const wb::Waveform wave = wb::ReadWav(in);
  wb::WriteWav(out, vocoder_only ? p.VocoderOnly(wave)
                                 : p.Manipulate(wave, wb::ManipulationSpec{}, SeedOr(g)).wave);
  std::cout << "wrote " << out << "\n";
}

struct ManipulateFlags {
  std::string in, out;
  std::string feature;
  double scale = 1.0;
  bool couple = false;
  std::string spec;
  std::string spec_dir;
  std::string track_out;
};

void Manipulate(const Globals& g, const ModelFlags& m, const ManipulateFlags& f) {
  const int modes = !f.feature.empty() + !f.spec.empty() + !f.spec_dir.empty();
  if (modes != 1) throw UsageError("give exactly one of --feature, --spec or --spec-dir");
  std::vector<std::pair<std::string, wb::ManipulationSpec>> specs;
  if (!f.feature.empty()) {
    specs.emplace_back("",
                       wb::ManipulationSpec::ScaleOne(FeatureFlag(f.feature), f.scale, f.couple));
  } else if (!f.spec.empty()) {
    specs.emplace_back("", wb::SpecFromJson(ReadConfig(f.spec)));
  } else {
    specs = wb::LoadSpecDirectory(f.spec_dir);
    if (specs.empty()) wb::Fail(wb::ErrorKind::kNotFound, "spec", "no *.json in " + f.spec_dir);
  }

  const wb::Pipeline p = m.Load(ReadConfig(g.config));
  const wb::Waveform wave = wb::ReadWav(f.in);
  const wb::ParameterTrack track = p.Analyze(wave);
  if (!f.spec_dir.empty()) fs::create_directories(f.out);
  for (const auto& [name, spec] : specs) {
    const wb::ParameterTrack desired = p.Desired(track, spec);
    const wb::RenderResult r = p.Render(desired, SeedOr(g));
    const std::string out =
        f.spec_dir.empty() ? f.out : (fs::path(f.out) / (name + ".wav")).string();
    wb::WriteWav(out, r.wave);
    if (!f.track_out.empty()) {
      const std::string tp =
          f.spec_dir.empty() ? f.track_out : (fs::path(f.track_out) / (name + ".csv")).string();
      if (!f.spec_dir.empty()) fs::create_directories(f.track_out);
      wb::SaveTrack(tp, desired);
    }
    std::cout << "wrote " << out << "\n";
  }
}

struct EvaluateFlags {
  CorpusFlags corpus;
  std::string out = ".";
  int resamples = 1000;
  std::vector<double> scales = {0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3};
  std::vector<std::string> features;
  double matrix_scale = 1.3;
  bool no_coupling = false;
};

void Evaluate(const Globals& g, const ModelFlags& m, const EvaluateFlags& f) {
  wb::SweepOptions sweep;
  sweep.scales = f.scales;
  sweep.matrix_scale = f.matrix_scale;
  if (!f.features.empty()) {
    sweep.features.clear();
    for (const auto& n : f.features) sweep.features.push_back(FeatureFlag(n));
  }
  if (std::find(sweep.scales.begin(), sweep.scales.end(), sweep.matrix_scale) ==
      sweep.scales.end()) {
    throw UsageError("--matrix-scale must be one of --scales");
  }

  const wb::Pipeline p = m.Load(ReadConfig(g.config));
  const auto utts = f.corpus.Load(p.model(), m.checkpoint);
  const auto ptrs = Pointers(utts);
  wb::EvalOptions opts;
  opts.bootstrap.resamples = f.resamples;
  opts.bootstrap.seed = SeedOr(g);
  opts.noise_seed = SeedOr(g);
  opts.extraction = p.model().extraction;
  const auto& stats = p.model().stats;

  if (g.verbose) std::cerr << "copy synthesis on " << utts.size() << " utterances\n";
  const uint64_t noise = SeedOr(g);
  const wb::ReconstructionReport recon = wb::CopySynthesisError(
      ptrs,
      {{"wavebender", [&](const wb::Utterance& u) { return p.Manipulate(u.wave, {}, noise).wave; }},
       {"vocoder_only", [&](const wb::Utterance& u) { return p.VocoderOnly(u.wave); }}},
      stats, opts);
  if (g.verbose) std::cerr << "manipulation sweep\n";
  const wb::ManipulationReport manip =
      wb::ManipulationSweep(ptrs, wb::PipelineSystem(p, noise), stats,
                            f.no_coupling ? nullptr : p.coupling(), sweep, opts);
  const wb::DisentanglementMatrix matrix = wb::Disentanglement(manip, sweep.matrix_scale);
  wb::EmitReport(f.out, wb::RenderReport(&recon, &manip, &matrix));
  for (const auto& s : recon.systems) {
    for (const auto& e : s.excluded) std::cerr << "excluded (" << s.name << "): " << e << "\n";
  }
  std::cout << "wrote " << (fs::path(f.out) / "report").string()
            << "/{recon,manip,disentangle}.tsv\n";
}

void ExportStimuliCmd(const Globals& g, const ModelFlags& m, const CorpusFlags& c,
                      const std::string& spec_dir, const std::string& out) {
  const auto specs = wb::LoadSpecDirectory(spec_dir);
  if (specs.empty()) wb::Fail(wb::ErrorKind::kNotFound, "spec", "no *.json in " + spec_dir);
  const wb::Pipeline p = m.Load(ReadConfig(g.config));
  const auto utts = c.Load(p.model(), m.checkpoint);
  wb::StimulusOptions o;
  o.seed = SeedOr(g);
  o.noise_seed = SeedOr(g);
  wb::ExportStimuli(out, p, Pointers(utts), specs, o);
  std::cout << "wrote stimuli to " << out << "\n";
}

void FetchVocoder(const Globals& g, const std::string& dest, bool builtin, const std::string& url,
                  const std::string& sha, const std::string& checkpoint) {
  if (builtin == !url.empty()) throw UsageError("give exactly one of --builtin or --url");
  if (!url.empty() && sha.empty()) throw UsageError("--url needs --sha256");
  wb::MelConfig mel;
  if (!checkpoint.empty()) {
    mel = wb::LoadTrainedModel(checkpoint).mel;
  } else {
    const json file = ReadConfig(g.config);
    mel = wb::TrainingConfigFromJson(file.value("train", json::object())).mel;
  }
  if (builtin) {
    if (fs::exists(dest)) {
      wb::Fail(wb::ErrorKind::kInvalidArgument, "fetch-vocoder", dest + " already exists");
    }
    wb::WriteGriffinLimBundle(dest, mel);
  } else {
    wb::FetchBundle(url, sha, dest, mel);
  }
  std::cout << wb::VerifyBundle(dest, mel).ToText();
}

void Serve(const Globals& g, const ModelFlags& m, std::optional<int> port, const std::string& host,
           const std::string& persist) {
  const json file = ReadConfig(g.config);
  wb::ServiceConfig config = wb::ServiceConfigFromJson(file.value("service", json()));
  if (port) config.port = *port;
  if (!host.empty()) config.host = host;
  if (!persist.empty()) config.persist_dir = persist;
  if (!config.persist_dir.empty()) {
    fs::create_directories(fs::path(config.persist_dir) / "sessions");
    fs::create_directories(fs::path(config.persist_dir) / "audio");
  }
  auto pipeline = std::make_shared<const wb::Pipeline>(m.Load(file));
  wb::StimulusService service(pipeline, config);

  // Blocked here so only the waiter thread sees them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    service.Stop();
  });
  waiter.detach();

  service.Serve(
      [&](int bound) { std::cout << "listening on " << config.host << ":" << bound << std::endl; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wavebender: controllable speech synthesis from five acoustic features",
               "wavebender"};
  app.set_version_flag("--version", std::string(wb::kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "seed for every random choice (default 0)");
  app.add_option("--config", g.config, "JSON config with train/service/vocoder sections");
  app.add_flag("-v,--verbose", g.verbose, "progress on stderr");

  std::function<void()> run;

  auto* make_corpus = app.add_subcommand("make-corpus", "write a synthetic corpus");
  std::string mc_out;
  int mc_count = 50;
  make_corpus->add_option("out", mc_out, "corpus root")->required();
  make_corpus->add_option("--count", mc_count, "utterances")->check(CLI::PositiveNumber);
  make_corpus->callback([&] { run = [&] { MakeCorpus(g, mc_out, mc_count); }; });

  auto* extract = app.add_subcommand("extract", "write the five-feature track of a WAV as CSV");
  std::string ex_in, ex_out, ex_ckpt;
  extract->add_option("in", ex_in, "input WAV")->required()->check(CLI::ExistingFile);
  extract->add_option("out", ex_out, "output CSV (metadata JSON is written alongside)")->required();
  extract->add_option("--checkpoint", ex_ckpt, "take extraction settings from this checkpoint");
  extract->callback([&] { run = [&] { Extract(g, ex_in, ex_out, ex_ckpt); }; });

  auto* train =
      app.add_subcommand("train", "pretrain then train jointly, then fit the coupling model");
  TrainFlags tf;
  train->add_option("--corpus", tf.corpus, "corpus root");
  train->add_option("--out", tf.out, "output directory")->required();
  train->add_option("--limit", tf.limit, "use the first N utterances (0 = all)");
  train->add_option("--pretrain-epochs", tf.pretrain_epochs);
  train->add_option("--joint-epochs", tf.joint_epochs);
  train->add_option("--max-steps", tf.max_steps, "stop after N more steps");
  train->add_option("--cache", tf.cache, "feature cache directory");
  train->add_flag("--resume", tf.resume, "continue from the newest checkpoint under --out");
  train->add_flag("--no-coupling", tf.no_coupling, "skip the coupling model");
  train->callback([&] { run = [&] { Train(g, tf); }; });

  auto* copy = app.add_subcommand("copy-synth", "analyze and resynthesize unchanged");
  ModelFlags copy_m;
  std::string cs_in, cs_out;
  bool cs_vocoder_only = false;
  copy_m.Add(copy);
  copy->add_option("in", cs_in, "input WAV")->required()->check(CLI::ExistingFile);
  copy->add_option("out", cs_out, "output WAV")->required();
  copy->add_flag("--vocoder-only", cs_vocoder_only, "vocoder on the ground-truth mel");
  copy->callback([&] { run = [&] { CopySynth(g, copy_m, cs_in, cs_out, cs_vocoder_only); }; });

  auto* manip = app.add_subcommand("manipulate", "scale or replace feature trajectories");
  ModelFlags manip_m;
  ManipulateFlags mf;
  manip_m.Add(manip);
  manip->add_option("in", mf.in, "input WAV")->required()->check(CLI::ExistingFile);
  manip->add_option("out", mf.out, "output WAV, or a directory with --spec-dir")->required();
  manip->add_option("--feature", mf.feature, "f1, f2, f0, centroid or slope");
  manip->add_option("--scale", mf.scale, "scaling factor m > 0");
  manip->add_flag("--couple", mf.couple, "predict the other formant when scaling F1 or F2");
  manip->add_option("--spec", mf.spec, "manipulation spec JSON")->check(CLI::ExistingFile);
  manip->add_option("--spec-dir", mf.spec_dir, "directory of spec JSON files")
      ->check(CLI::ExistingDirectory);
  manip->add_option("--track-out", mf.track_out, "also write the desired track CSV");
  manip->callback([&] { run = [&] { Manipulate(g, manip_m, mf); }; });

  auto* evaluate = app.add_subcommand("evaluate", "copy-synthesis and manipulation reports");
  ModelFlags eval_m;
  EvaluateFlags ef;
  eval_m.Add(evaluate);
  ef.corpus.Add(evaluate);
  evaluate->add_option("--out", ef.out, "report/ is created here");
  evaluate->add_option("--resamples", ef.resamples, "bootstrap resamples")
      ->check(CLI::NonNegativeNumber);
  evaluate->add_option("--scales", ef.scales, "sweep scales")->delimiter(',');
  evaluate->add_option("--features", ef.features, "sweep features")->delimiter(',');
  evaluate->add_option("--matrix-scale", ef.matrix_scale, "scale of the disentanglement matrix");
  evaluate->add_flag("--no-coupling", ef.no_coupling, "manipulate formants independently");
  evaluate->callback([&] { run = [&] { Evaluate(g, eval_m, ef); }; });

  auto* stimuli = app.add_subcommand("export-stimuli", "A/B/reference listening-test material");
  ModelFlags st_m;
  CorpusFlags st_c;
  std::string st_specs, st_out;
  st_m.Add(stimuli);
  st_c.Add(stimuli);
  stimuli->add_option("--spec-dir", st_specs, "candidate specs")
      ->required()
      ->check(CLI::ExistingDirectory);
  stimuli->add_option("--out", st_out, "output directory")->required();
  stimuli->callback([&] { run = [&] { ExportStimuliCmd(g, st_m, st_c, st_specs, st_out); }; });

  auto* fetch = app.add_subcommand("fetch-vocoder", "install and verify a vocoder bundle");
  std::string fv_dest, fv_url, fv_sha, fv_ckpt;
  bool fv_builtin = false;
  fetch->add_option("dest", fv_dest, "bundle directory to create")->required();
  fetch->add_flag("--builtin", fv_builtin, "write the built-in Griffin-Lim bundle");
  fetch->add_option("--url", fv_url, "manifest URL (http:// or file://)");
  fetch->add_option("--sha256", fv_sha, "expected manifest SHA-256");
  fetch->add_option("--checkpoint", fv_ckpt, "match this checkpoint's mel configuration");
  fetch->callback(
      [&] { run = [&] { FetchVocoder(g, fv_dest, fv_builtin, fv_url, fv_sha, fv_ckpt); }; });

  auto* serve = app.add_subcommand("serve", "HTTP service for analysis and synthesis");
  ModelFlags sv_m;
  std::optional<int> sv_port;
  std::string sv_host, sv_persist;
  sv_m.Add(serve);
  serve->add_option("--port", sv_port, "0 picks a free port")->check(CLI::Range(0, 65535));
  serve->add_option("--host", sv_host);
  serve->add_option("--persist-dir", sv_persist, "keep sessions across restarts");
  serve->callback([&] { run = [&] { Serve(g, sv_m, sv_port, sv_host, sv_persist); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 1;
  }

  try {
    run();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const wb::Error& e) {
    std::cerr << "error [" << e.stage() << "]: " << e.detail() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

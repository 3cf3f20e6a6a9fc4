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

#include "wavebender/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

namespace wavebender {
namespace {

constexpr char kStage[] = "eval";

// SVG palette, one color per feature in column order.
constexpr std::array<const char*, kNumFeatures> kColors = {"#1b9e77", "#d95f02", "#7570b3",
                                                           "#e7298a", "#66a61e"};
constexpr std::array<const char*, 4> kSystemColors = {"#4477aa", "#ee6677", "#228833", "#ccbb44"};

double Quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const size_t i = static_cast<size_t>(std::floor(pos));
  const size_t j = std::min(i + 1, sorted.size() - 1);
  return sorted[i] + (pos - static_cast<double>(i)) * (sorted[j] - sorted[i]);
}

double SampleStd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string Fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string Join(const std::vector<std::string>& cells) {
  std::string out;
  for (size_t i = 0; i < cells.size(); ++i) out += (i ? "\t" : "") + cells[i];
  return out + "\n";
}

std::string Escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else if (c == '&')
      out += "&amp;";
    else
      out += c;
  }
  return out;
}

UtteranceErrors Measure(const Utterance& u, const ParameterTrack& desired,
                        const ParameterTrack& realized, const NormalizationStats& stats,
                        const EvalOptions& o) {
  UtteranceErrors e = CompareTracks(desired, realized, stats, o.edge);
  e.id = u.id;
  if (e.frames == 0) {
    Fail(ErrorKind::kInvalidArgument, kStage, "no frames left after dropping the edges");
  }
  return e;
}

void FillCell(SweepCell& cell, const BootstrapOptions& b) {
  cell.pooled = Pool(cell.utterances);
  const int skip = Index(cell.feature);
  cell.overall_incl = cell.pooled.Overall();
  cell.overall_excl = cell.pooled.Overall(skip);
  std::vector<double> incl, excl;
  for (const UtteranceErrors& u : cell.utterances) {
    incl.push_back(u.Overall());
    excl.push_back(u.Overall(skip));
  }
  cell.std_incl = SampleStd(incl);
  cell.std_excl = SampleStd(excl);
  cell.ci_incl =
      BootstrapInterval(cell.utterances, [](const PooledErrors& p) { return p.Overall(); }, b);
}

std::string ReconSvg(const ReconstructionReport& r) {
  constexpr double kW = 640, kH = 360, kLeft = 60, kBottom = 40, kTop = 30;
  double ymax = 0.0;
  for (const SystemErrors& s : r.systems) {
    for (int f = 0; f < kNumFeatures; ++f) ymax = std::max({ymax, s.pooled.mse[f], s.ci[f].hi});
  }
  if (ymax <= 0.0) ymax = 1.0;
  const double plot_h = kH - kBottom - kTop;
  const double group_w = (kW - kLeft - 20) / kNumFeatures;
  const double bar_w = group_w * 0.8 / static_cast<double>(r.systems.size());
  auto y = [&](double v) { return kTop + plot_h * (1.0 - v / ymax); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<text x=\"" << kLeft << "\" y=\"18\">Copy-synthesis error (z-normalized MSE)</text>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << y(0) << "\" x2=\"" << kW - 20 << "\" y2=\"" << y(0)
    << "\" stroke=\"black\"/>\n";
  o << "<text x=\"5\" y=\"" << Fixed(y(ymax) + 4) << "\">" << Fixed(ymax, 3) << "</text>\n";
  for (int f = 0; f < kNumFeatures; ++f) {
    const double gx = kLeft + f * group_w + group_w * 0.1;
    for (size_t s = 0; s < r.systems.size(); ++s) {
      const SystemErrors& sys = r.systems[s];
      const double x = gx + static_cast<double>(s) * bar_w;
      const double v = sys.pooled.mse[f];
      o << "<rect x=\"" << Fixed(x) << "\" y=\"" << Fixed(y(v)) << "\" width=\""
        << Fixed(bar_w * 0.9) << "\" height=\"" << Fixed(y(0) - y(v)) << "\" fill=\""
        << kSystemColors[s % kSystemColors.size()] << "\"/>\n";
      const double cx = x + bar_w * 0.45;
      o << "<line x1=\"" << Fixed(cx) << "\" y1=\"" << Fixed(y(sys.ci[f].lo)) << "\" x2=\""
        << Fixed(cx) << "\" y2=\"" << Fixed(y(sys.ci[f].hi)) << "\" stroke=\"black\"/>\n";
    }
    o << "<text x=\"" << Fixed(gx) << "\" y=\"" << Fixed(y(0) + 16) << "\">"
      << FeatureName(static_cast<Feature>(f)) << "</text>\n";
  }
  for (size_t s = 0; s < r.systems.size(); ++s) {
    const double ly = kTop + 14.0 * static_cast<double>(s);
    o << "<rect x=\"" << kW - 170 << "\" y=\"" << Fixed(ly) << "\" width=\"10\" height=\"10\" "
      << "fill=\"" << kSystemColors[s % kSystemColors.size()] << "\"/><text x=\"" << kW - 155
      << "\" y=\"" << Fixed(ly + 9) << "\">" << Escape(r.systems[s].name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string ManipSvg(const ManipulationReport& r) {
  constexpr double kW = 640, kH = 360, kLeft = 60, kRight = 120, kBottom = 40, kTop = 30;
  double xmin = 1e300, xmax = -1e300, ymax = 0.0;
  for (const SweepCell& c : r.cells) {
    xmin = std::min(xmin, c.scale);
    xmax = std::max(xmax, c.scale);
    ymax = std::max(ymax, c.overall_incl + c.std_incl);
  }
  if (ymax <= 0.0) ymax = 1.0;
  if (xmax <= xmin) {
    xmin -= 0.1;
    xmax += 0.1;
  }
  const double plot_w = kW - kLeft - kRight, plot_h = kH - kBottom - kTop;
  auto x = [&](double m) { return kLeft + plot_w * (m - xmin) / (xmax - xmin); };
  auto y = [&](double v) { return kTop + plot_h * (1.0 - std::max(0.0, v) / ymax); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<text x=\"" << kLeft << "\" y=\"18\">Overall MSE from the desired trajectory vs m"
    << "</text>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << y(0) << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
    << y(0) << "\" stroke=\"black\"/>\n";
  o << "<text x=\"5\" y=\"" << Fixed(y(ymax) + 4) << "\">" << Fixed(ymax, 3) << "</text>\n";
  std::vector<double> ticks;
  for (const SweepCell& c : r.cells) {
    if (std::find(ticks.begin(), ticks.end(), c.scale) == ticks.end()) ticks.push_back(c.scale);
  }
  for (double m : ticks) {
    o << "<text x=\"" << Fixed(x(m) - 10) << "\" y=\"" << Fixed(y(0) + 16) << "\">" << Fixed(m, 1)
      << "</text>\n";
  }
  int legend = 0;
  for (Feature f : kAllFeatures) {
    std::vector<const SweepCell*> cells;
    for (const SweepCell& c : r.cells) {
      if (c.feature == f) cells.push_back(&c);
    }
    if (cells.empty()) continue;
    const char* color = kColors[Index(f)];
    std::string band, line;
    for (const SweepCell* c : cells) {
      band += Fixed(x(c->scale)) + "," + Fixed(y(c->overall_incl + c->std_incl)) + " ";
      line += Fixed(x(c->scale)) + "," + Fixed(y(c->overall_incl)) + " ";
    }
    for (auto it = cells.rbegin(); it != cells.rend(); ++it) {
      band += Fixed(x((*it)->scale)) + "," + Fixed(y((*it)->overall_incl - (*it)->std_incl)) + " ";
    }
    o << "<polygon points=\"" << band << "\" fill=\"" << color << "\" fill-opacity=\"0.2\"/>\n";
    o << "<polyline points=\"" << line << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\"/>\n";
    const double ly = kTop + 14.0 * legend++;
    o << "<rect x=\"" << kW - kRight + 10 << "\" y=\"" << Fixed(ly) << "\" width=\"10\" "
      << "height=\"10\" fill=\"" << color << "\"/><text x=\"" << kW - kRight + 25 << "\" y=\""
      << Fixed(ly + 9) << "\">" << FeatureName(f) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace

FeatureArray UtteranceErrors::Mse() const {
  FeatureArray out{};
  if (frames == 0) return out;
  for (int f = 0; f < kNumFeatures; ++f) out[f] = sum_sq[f] / static_cast<double>(frames);
  return out;
}

double UtteranceErrors::Overall(int exclude) const {
  PooledErrors p;
  p.mse = Mse();
  return p.Overall(exclude);
}

double PooledErrors::Overall(int exclude) const {
  double sum = 0.0;
  int n = 0;
  for (int f = 0; f < kNumFeatures; ++f) {
    if (f == exclude) continue;
    sum += mse[f];
    ++n;
  }
  return sum / n;
}

UtteranceErrors CompareTracks(const ParameterTrack& desired, const ParameterTrack& realized,
                              const NormalizationStats& stats, int edge) {
  if (desired.values.cols() != kNumFeatures || realized.values.cols() != kNumFeatures) {
    Fail(ErrorKind::kInvalidArgument, kStage, "tracks must have five feature columns");
  }
  if (desired.meta.normalized || realized.meta.normalized) {
    Fail(ErrorKind::kInvalidArgument, kStage, "tracks are compared in denormalized units");
  }
  if (edge < 0) Fail(ErrorKind::kInvalidArgument, kStage, "edge must be >= 0");
  UtteranceErrors e;
  const long n = std::min(desired.values.rows(), realized.values.rows());
  for (long t = edge; t < n - edge; ++t) {
    for (int f = 0; f < kNumFeatures; ++f) {
      const double z = (desired.values(t, f) - realized.values(t, f)) / stats.std[f];
      e.sum_sq[f] += z * z;
    }
    ++e.frames;
  }
  return e;
}

PooledErrors Pool(const std::vector<UtteranceErrors>& utterances) {
  PooledErrors p;
  FeatureArray sum{};
  for (const UtteranceErrors& u : utterances) {
    for (int f = 0; f < kNumFeatures; ++f) sum[f] += u.sum_sq[f];
    p.frames += u.frames;
    ++p.utterances;
  }
  if (p.frames > 0) {
    for (int f = 0; f < kNumFeatures; ++f) p.mse[f] = sum[f] / static_cast<double>(p.frames);
  }
  return p;
}

Interval BootstrapInterval(const std::vector<UtteranceErrors>& utterances,
                           const std::function<double(const PooledErrors&)>& statistic,
                           const BootstrapOptions& o) {
  if (utterances.empty()) return {};
  if (o.resamples < 1 || !(o.level > 0.0 && o.level < 1.0)) {
    Fail(ErrorKind::kInvalidArgument, kStage, "bootstrap needs resamples >= 1 and 0 < level < 1");
  }
  Rng rng(o.seed);
  const size_t n = utterances.size();
  std::vector<double> stats;
  stats.reserve(o.resamples);
  std::vector<UtteranceErrors> sample(n);
  for (int b = 0; b < o.resamples; ++b) {
    for (size_t i = 0; i < n; ++i) sample[i] = utterances[rng.Below(n)];
    stats.push_back(statistic(Pool(sample)));
  }
  std::sort(stats.begin(), stats.end());
  const double tail = (1.0 - o.level) / 2.0;
  return {Quantile(stats, tail), Quantile(stats, 1.0 - tail)};
}

const SystemErrors& ReconstructionReport::system(const std::string& name) const {
  for (const SystemErrors& s : systems) {
    if (s.name == name) return s;
  }
  Fail(ErrorKind::kNotFound, kStage, "report has no system " + name);
}

ReconstructionReport CopySynthesisError(
    const std::vector<const Utterance*>& utterances,
    const std::vector<std::pair<std::string, CopySystem>>& systems, const NormalizationStats& stats,
    const EvalOptions& options) {
  ReconstructionReport r;
  r.seed = options.bootstrap.seed;
  r.resamples = options.bootstrap.resamples;
  for (const Utterance* u : utterances) r.ids.push_back(u->id);
  for (const auto& [name, system] : systems) {
    SystemErrors s;
    s.name = name;
    for (const Utterance* u : utterances) {
      try {
        s.utterances.push_back(Measure(
            *u, u->track, ExtractParameters(system(*u), options.extraction), stats, options));
      } catch (const Error& e) {
        s.excluded.push_back(u->id + ": " + e.what());
      }
    }
    s.pooled = Pool(s.utterances);
    for (int f = 0; f < kNumFeatures; ++f) {
      s.ci[f] = BootstrapInterval(
          s.utterances, [f](const PooledErrors& p) { return p.mse[f]; }, options.bootstrap);
    }
    s.overall_ci = BootstrapInterval(
        s.utterances, [](const PooledErrors& p) { return p.Overall(); }, options.bootstrap);
    r.systems.push_back(std::move(s));
  }
  return r;
}

RenderSystem PipelineSystem(const Pipeline& pipeline, uint64_t noise_seed) {
  return [&pipeline, noise_seed](const Utterance&, const ParameterTrack& desired,
                                 const ManipulationSpec&) {
    return pipeline.Analyze(pipeline.Render(desired, noise_seed).wave);
  };
}

const SweepCell* ManipulationReport::Find(Feature f, double scale) const {
  for (const SweepCell& c : cells) {
    if (c.feature == f && std::abs(c.scale - scale) < 1e-12) return &c;
  }
  return nullptr;
}

ManipulationReport ManipulationSweep(const std::vector<const Utterance*>& utterances,
                                     const RenderSystem& system, const NormalizationStats& stats,
                                     const CouplingModel* coupling, const SweepOptions& sweep,
                                     const EvalOptions& options) {
  ManipulationReport r;
  r.seed = options.bootstrap.seed;
  r.resamples = options.bootstrap.resamples;
  for (double m : sweep.scales) {
    if (!(m > 0.0)) Fail(ErrorKind::kInvalidArgument, kStage, "scales must be positive");
  }
  std::vector<double> scales = sweep.scales;
  std::sort(scales.begin(), scales.end());
  for (Feature f : sweep.features) {
    for (double m : scales) {
      SweepCell cell;
      cell.feature = f;
      cell.scale = m;
      const ManipulationSpec spec = ManipulationSpec::ScaleOne(f, m, coupling != nullptr);
      for (const Utterance* u : utterances) {
        try {
          ParameterTrack desired = BuildDesired(u->track, spec);
          if (spec.coupling != CouplingPolicy::kIndependent) {
            desired = ApplyCoupling(desired, *coupling, spec.coupling);
          }
          cell.utterances.push_back(
              Measure(*u, desired, system(*u, desired, spec), stats, options));
        } catch (const Error& e) {
          cell.excluded.push_back(u->id + ": " + e.what());
        }
      }
      FillCell(cell, options.bootstrap);
      r.cells.push_back(std::move(cell));
    }
  }
  return r;
}

DisentanglementMatrix Disentanglement(const ManipulationReport& report, double scale) {
  DisentanglementMatrix d;
  d.scale = scale;
  std::vector<const SweepCell*> rows;
  for (Feature f : kAllFeatures) {
    if (const SweepCell* c = report.Find(f, scale)) {
      d.rows.push_back(f);
      rows.push_back(c);
    }
  }
  d.mse.resize(static_cast<Eigen::Index>(rows.size()), kNumFeatures);
  for (size_t i = 0; i < rows.size(); ++i) {
    for (int f = 0; f < kNumFeatures; ++f) d.mse(i, f) = rows[i]->pooled.mse[f];
  }
  return d;
}

double ErrorGrowth(const ManipulationReport& report, Feature f) {
  std::vector<double> xs, ys;
  for (const SweepCell& c : report.cells) {
    if (c.feature != f || c.utterances.empty()) continue;
    xs.push_back(std::abs(c.scale - 1.0));
    ys.push_back(c.overall_incl);
  }
  if (xs.size() < 2) return 0.0;
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

ReportFiles RenderReport(const ReconstructionReport* recon, const ManipulationReport* manip,
                         const DisentanglementMatrix* matrix) {
  ReportFiles out;
  out.recon_tsv = Join({"system", "feature", "mse", "ci_low", "ci_high", "utterances", "frames",
                        "excluded", "resamples", "seed"});
  if (recon) {
    for (const SystemErrors& s : recon->systems) {
      auto row = [&](const std::string& feature, double v, const Interval& ci) {
        out.recon_tsv += Join({s.name, feature, FormatDouble(v), FormatDouble(ci.lo),
                               FormatDouble(ci.hi), std::to_string(s.pooled.utterances),
                               std::to_string(s.pooled.frames), std::to_string(s.excluded.size()),
                               std::to_string(recon->resamples), std::to_string(recon->seed)});
      };
      for (Feature f : kAllFeatures) {
        row(std::string(FeatureName(f)), s.pooled.mse[Index(f)], s.ci[Index(f)]);
      }
      row("overall", s.pooled.Overall(), s.overall_ci);
    }
    if (!recon->systems.empty()) out.recon_svg = ReconSvg(*recon);
  }

  out.manip_tsv =
      Join({"feature", "m", "overall_incl", "std_incl", "ci_low", "ci_high", "overall_excl",
            "std_excl", "utterances", "frames", "excluded", "resamples", "seed"});
  if (manip) {
    for (const SweepCell& c : manip->cells) {
      out.manip_tsv +=
          Join({std::string(FeatureName(c.feature)), FormatDouble(c.scale),
                FormatDouble(c.overall_incl), FormatDouble(c.std_incl), FormatDouble(c.ci_incl.lo),
                FormatDouble(c.ci_incl.hi), FormatDouble(c.overall_excl), FormatDouble(c.std_excl),
                std::to_string(c.pooled.utterances), std::to_string(c.pooled.frames),
                std::to_string(c.excluded.size()), std::to_string(manip->resamples),
                std::to_string(manip->seed)});
    }
    if (!manip->cells.empty()) out.manip_svg = ManipSvg(*manip);
  }

  std::vector<std::string> header = {"manipulated", "m"};
  for (Feature f : kAllFeatures) header.emplace_back(FeatureName(f));
  out.disentangle_tsv = Join(header);
  if (matrix) {
    for (size_t i = 0; i < matrix->rows.size(); ++i) {
      std::vector<std::string> row = {std::string(FeatureName(matrix->rows[i])),
                                      FormatDouble(matrix->scale)};
      for (int f = 0; f < kNumFeatures; ++f) {
        row.push_back(FormatDouble(matrix->mse(static_cast<Eigen::Index>(i), f)));
      }
      out.disentangle_tsv += Join(row);
    }
  }
  return out;
}

void EmitReport(const std::string& dir, const ReportFiles& files) {
  namespace fs = std::filesystem;
  const fs::path report = fs::path(dir) / "report";
  WriteFileBytes((report / "recon.tsv").string(), files.recon_tsv);
  WriteFileBytes((report / "manip.tsv").string(), files.manip_tsv);
  WriteFileBytes((report / "disentangle.tsv").string(), files.disentangle_tsv);
  for (const auto& [name, svg] :
       {std::pair{"recon.svg", &files.recon_svg}, std::pair{"manip.svg", &files.manip_svg}}) {
    const fs::path p = report / name;
    if (svg->empty()) {
      std::error_code ec;
      fs::remove(p, ec);
    } else {
      WriteFileBytes(p.string(), *svg);
    }
  }
}

void ExportStimuli(const std::string& dir, const Pipeline& pipeline,
                   const std::vector<const Utterance*>& utterances,
                   const std::vector<std::pair<std::string, ManipulationSpec>>& specs,
                   const StimulusOptions& options) {
  namespace fs = std::filesystem;
  std::vector<std::string> systems = {"vocoder_only", "copy_synthesis"};
  for (const auto& [name, spec] : specs) {
    if (name.empty() || name.find_first_of("/\\\t\n") != std::string::npos ||
        std::find(systems.begin(), systems.end(), name) != systems.end()) {
      Fail(ErrorKind::kInvalidArgument, kStage,
           "invalid or duplicate stimulus name '" + name + "'");
    }
    systems.push_back(name);
  }

  struct Trial {
    std::string id, utterance;
    size_t a, b;
  };
  std::vector<Trial> trials;
  for (const Utterance* u : utterances) {
    for (size_t i = 0; i < systems.size(); ++i) {
      for (size_t j = i + 1; j < systems.size(); ++j) trials.push_back({"", u->id, i, j});
    }
  }
  // Half the trials present the pair swapped; which half is seeded.
  std::vector<uint8_t> swap(trials.size(), 0);
  std::fill(swap.begin(), swap.begin() + static_cast<long>(trials.size() / 2), 1);
  Rng rng(MixSeed(options.seed, "stimuli"));
  for (size_t i = swap.size(); i > 1; --i) std::swap(swap[i - 1], swap[rng.Below(i)]);
  for (size_t k = 0; k < trials.size(); ++k) {
    char id[32];
    std::snprintf(id, sizeof(id), "t%03zu", k + 1);
    trials[k].id = id;
    if (swap[k]) std::swap(trials[k].a, trials[k].b);
  }

  std::string key = Join({"trial", "utterance", "A", "B"});
  std::string sheet =
      Join({"trial", "utterance", "preference", "rating_A", "rating_B", "rating_reference"});
  nlohmann::json manifest = {{"seed", options.seed},
                             {"systems", systems},
                             {"layout", "trials/<trial>/{reference,A,B}.wav"},
                             {"trials", nlohmann::json::array()}};
  size_t next = 0;
  for (const Utterance* u : utterances) {
    std::vector<Waveform> audio;
    audio.push_back(pipeline.VocoderOnly(u->wave));
    audio.push_back(pipeline.Render(u->track, options.noise_seed).wave);
    for (const auto& [name, spec] : specs) {
      audio.push_back(pipeline.Render(pipeline.Desired(u->track, spec), options.noise_seed).wave);
    }
    for (; next < trials.size() && trials[next].utterance == u->id; ++next) {
      const Trial& t = trials[next];
      const fs::path base = fs::path(dir) / "trials" / t.id;
      WriteWav((base / "reference.wav").string(), u->wave);
      WriteWav((base / "A.wav").string(), audio[t.a]);
      WriteWav((base / "B.wav").string(), audio[t.b]);
      key += Join({t.id, t.utterance, systems[t.a], systems[t.b]});
      sheet += Join({t.id, t.utterance, "", "", "", ""});
      manifest["trials"].push_back({{"id", t.id},
                                    {"utterance", t.utterance},
                                    {"reference", "trials/" + t.id + "/reference.wav"},
                                    {"A", "trials/" + t.id + "/A.wav"},
                                    {"B", "trials/" + t.id + "/B.wav"}});
    }
  }
  WriteFileBytes((fs::path(dir) / "key.tsv").string(), key);
  WriteFileBytes((fs::path(dir) / "rating_sheet.tsv").string(), sheet);
  WriteFileBytes((fs::path(dir) / "stimuli.json").string(), manifest.dump(2) + "\n");
}

}  // namespace wavebender

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

#include "wavebender/nn.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "wavebender/audio.h"

namespace wavebender::nn {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr char kArchiveMagic[8] = {'W', 'B', 'T', 'A', '0', '0', '0', '1'};

void CheckShape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    Fail(ErrorKind::kInvalidArgument, "nn",
         what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
             std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

template <typename T>
void Put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T Get() {
    T v;
    std::memcpy(&v, Take(sizeof(T)).data(), sizeof(T));
    return v;
  }
  std::string_view Take(size_t n) {
    if (n > data_.size() - pos_) {
      Fail(ErrorKind::kIo, "archive", "truncated tensor archive");
    }
    std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  size_t pos_ = 0;
};

}  // namespace

Parameter& ParameterSet::Add(const std::string& name, Matrix value) {
  if (params_.count(name)) {
    Fail(ErrorKind::kInvalidArgument, "nn", "duplicate parameter " + name);
  }
  Parameter& p = params_[name];
  p.grad = Matrix::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  return p;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    Fail(ErrorKind::kNotFound, "nn", "missing parameter " + name);
  }
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  return const_cast<Parameter&>(std::as_const(*this).at(name));
}

void ParameterSet::ZeroGrad() {
  for (auto& [name, p] : params_) p.grad.setZero();
}

void ParameterSet::ScaleGrad(double factor) {
  for (auto& [name, p] : params_) p.grad *= factor;
}

size_t ParameterSet::NumScalars() const {
  size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

bool ParameterSet::AllFinite() const {
  for (const auto& [name, p] : params_) {
    if (!p.value.allFinite()) return false;
  }
  return true;
}

Matrix UniformInit(Eigen::Index rows, Eigen::Index cols, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.Uniform(-bound, bound);
  }
  return m;
}

// ---- Conv1d ----

Conv1d::Conv1d(std::string name, int in_channels, int out_channels, int kernel)
    : name_(std::move(name)), in_(in_channels), out_(out_channels), kernel_(kernel) {
  if (in_ < 1 || out_ < 1 || kernel_ < 1 || kernel_ % 2 == 0) {
    Fail(ErrorKind::kInvalidArgument, "nn",
         name_ + ": channels must be positive and the kernel odd");
  }
}

void Conv1d::Init(ParameterSet& params, Rng& rng, bool zero) const {
  const int fan_in = in_ * kernel_;
  Matrix w = UniformInit(out_, fan_in, fan_in, rng);
  Matrix b = UniformInit(out_, 1, fan_in, rng);
  if (zero) {
    w.setZero();
    b.setZero();
  }
  params.Add(name_ + ".weight", std::move(w));
  params.Add(name_ + ".bias", std::move(b));
}

namespace {

// Rows are (channel * K + tap), columns are frames; zero padding K/2.
RowMatrix Im2Col1d(const Matrix& x, int kernel) {
  const Eigen::Index c = x.rows(), t = x.cols();
  const int pad = kernel / 2;
  RowMatrix xr = x;
  RowMatrix col = RowMatrix::Zero(c * kernel, t);
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    for (int k = 0; k < kernel; ++k) {
      const Eigen::Index shift = k - pad;
      const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
      const Eigen::Index hi = std::min<Eigen::Index>(t, t - shift);
      if (hi <= lo) continue;
      col.row(ch * kernel + k).segment(lo, hi - lo) = xr.row(ch).segment(lo + shift, hi - lo);
    }
  }
  return col;
}

}  // namespace

Matrix Conv1d::Forward(const ParameterSet& params, const Matrix& x) const {
  if (x.rows() != in_) {
    Fail(ErrorKind::kInvalidArgument, "nn",
         name_ + ": expected " + std::to_string(in_) + " input channels, got " +
             std::to_string(x.rows()));
  }
  const Matrix& w = params.value(name_ + ".weight");
  const Matrix& b = params.value(name_ + ".bias");
  Matrix y;
  if (kernel_ == 1) {
    y.noalias() = w * x;
  } else {
    y.noalias() = w * Im2Col1d(x, kernel_);
  }
  y.colwise() += b.col(0);
  return y;
}

Matrix Conv1d::Backward(ParameterSet& params, const Matrix& x, const Matrix& dy) const {
  CheckShape(dy, out_, x.cols(), name_ + " grad");
  Parameter& w = params.at(name_ + ".weight");
  params.grad(name_ + ".bias").col(0) += dy.rowwise().sum();
  if (kernel_ == 1) {
    w.grad.noalias() += dy * x.transpose();
    return w.value.transpose() * dy;
  }
  const RowMatrix col = Im2Col1d(x, kernel_);
  w.grad.noalias() += dy * col.transpose();
  const RowMatrix dcol = w.value.transpose() * dy;
  const Eigen::Index t = x.cols();
  const int pad = kernel_ / 2;
  RowMatrix dx = RowMatrix::Zero(in_, t);
  for (int ch = 0; ch < in_; ++ch) {
    for (int k = 0; k < kernel_; ++k) {
      const Eigen::Index shift = k - pad;
      const Eigen::Index lo = std::max<Eigen::Index>(0, -shift);
      const Eigen::Index hi = std::min<Eigen::Index>(t, t - shift);
      if (hi <= lo) continue;
      dx.row(ch).segment(lo + shift, hi - lo) += dcol.row(ch * kernel_ + k).segment(lo, hi - lo);
    }
  }
  return dx;
}

// ---- GroupNorm1d ----

GroupNorm1d::GroupNorm1d(std::string name, int channels, int groups)
    : name_(std::move(name)), channels_(channels), groups_(groups) {
  if (channels_ < 1 || groups_ < 1 || channels_ % groups_ != 0) {
    Fail(ErrorKind::kInvalidArgument, "nn",
         name_ + ": " + std::to_string(groups_) + " groups do not divide " +
             std::to_string(channels_) + " channels");
  }
}

void GroupNorm1d::Init(ParameterSet& params) const {
  params.Add(name_ + ".gamma", Matrix::Ones(channels_, 1));
  params.Add(name_ + ".beta", Matrix::Zero(channels_, 1));
}

Matrix GroupNorm1d::Forward(const ParameterSet& params, const Matrix& x) const {
  CheckShape(x, channels_, x.cols(), name_ + " input");
  const Matrix& gamma = params.value(name_ + ".gamma");
  const Matrix& beta = params.value(name_ + ".beta");
  const int cg = channels_ / groups_;
  Matrix y(x.rows(), x.cols());
  for (int g = 0; g < groups_; ++g) {
    const auto block = x.middleRows(g * cg, cg);
    const Eigen::RowVectorXd mean = block.colwise().mean();
    const Matrix centered = block.rowwise() - mean;
    const Eigen::RowVectorXd inv_std = (centered.array().square().colwise().mean() + kEps).rsqrt();
    y.middleRows(g * cg, cg) = (centered.array().rowwise() * inv_std.array()).matrix();
  }
  y = gamma.col(0).asDiagonal() * y;
  y.colwise() += beta.col(0);
  return y;
}

Matrix GroupNorm1d::Backward(ParameterSet& params, const Matrix& x, const Matrix& dy) const {
  CheckShape(dy, x.rows(), x.cols(), name_ + " grad");
  Parameter& gamma = params.at(name_ + ".gamma");
  Parameter& beta = params.at(name_ + ".beta");
  const int cg = channels_ / groups_;
  Matrix dx(x.rows(), x.cols());
  beta.grad.col(0) += dy.rowwise().sum();
  for (int g = 0; g < groups_; ++g) {
    const auto block = x.middleRows(g * cg, cg);
    const Eigen::RowVectorXd mean = block.colwise().mean();
    const Matrix centered = block.rowwise() - mean;
    const Eigen::RowVectorXd inv_std = (centered.array().square().colwise().mean() + kEps).rsqrt();
    const Matrix xhat = (centered.array().rowwise() * inv_std.array()).matrix();
    const auto dyb = dy.middleRows(g * cg, cg);
    gamma.grad.middleRows(g * cg, cg).col(0) += dyb.cwiseProduct(xhat).rowwise().sum();
    const Matrix dxhat = gamma.value.middleRows(g * cg, cg).col(0).asDiagonal() * dyb;
    const Eigen::RowVectorXd m1 = dxhat.colwise().mean();
    const Eigen::RowVectorXd m2 = dxhat.cwiseProduct(xhat).colwise().mean();
    Matrix d = dxhat.rowwise() - m1;
    d -= (xhat.array().rowwise() * m2.array()).matrix();
    dx.middleRows(g * cg, cg) = (d.array().rowwise() * inv_std.array()).matrix();
  }
  return dx;
}

// ---- Activations ----

Matrix Silu(const Matrix& x) {
  return x.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
}

Matrix SiluBackward(const Matrix& x, const Matrix& dy) {
  return x.binaryExpr(dy, [](double v, double g) {
    const double s = 1.0 / (1.0 + std::exp(-v));
    return g * s * (1.0 + v * (1.0 - s));
  });
}

Matrix LeakyRelu(const Matrix& x, double slope) {
  return x.unaryExpr([slope](double v) { return v >= 0.0 ? v : slope * v; });
}

Matrix LeakyReluBackward(const Matrix& x, const Matrix& dy, double slope) {
  return x.binaryExpr(dy, [slope](double v, double g) { return v >= 0.0 ? g : slope * g; });
}

// ---- Conv2d ----

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride)
    : name_(std::move(name)),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride) {
  if (in_ < 1 || out_ < 1 || kernel_ < 1 || kernel_ % 2 == 0 || stride_ < 1) {
    Fail(ErrorKind::kInvalidArgument, "nn", name_ + ": invalid conv2d geometry");
  }
}

void Conv2d::Init(ParameterSet& params, Rng& rng, bool zero) const {
  const int fan_in = in_ * kernel_ * kernel_;
  Matrix w = UniformInit(out_, fan_in, fan_in, rng);
  Matrix b = UniformInit(out_, 1, fan_in, rng);
  if (zero) {
    w.setZero();
    b.setZero();
  }
  params.Add(name_ + ".weight", std::move(w));
  params.Add(name_ + ".bias", std::move(b));
}

Shape2d Conv2d::OutputShape(const Shape2d& in) const {
  const int pad = kernel_ / 2;
  Shape2d out;
  out.channels = out_;
  out.height = (in.height + 2 * pad - kernel_) / stride_ + 1;
  out.width = (in.width + 2 * pad - kernel_) / stride_ + 1;
  return out;
}

namespace {

// Output rows per im2col tile; keeps the scratch buffer cache sized.
constexpr int kTargetTileColumns = 2048;

using RowMap = Eigen::Map<RowMatrix>;

struct Geometry {
  Shape2d in, out;
  int kernel, stride, pad;
};

// Fills `col` (rows (c * K + ky) * K + kx, columns over output rows
// [oy0, oy1)) from the row-major input.
void FillTile(const RowMatrix& xr, const Geometry& g, int oy0, int oy1, RowMap& col) {
  col.setZero();
  const int k = g.kernel;
  for (int c = 0; c < g.in.channels; ++c) {
    const double* src = xr.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col.row((c * k + ky) * k + kx).data();
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in.height) continue;
          double* drow = dst + static_cast<size_t>(oy - oy0) * g.out.width;
          const double* srow = src + static_cast<size_t>(iy) * g.in.width;
          for (int ox = 0; ox < g.out.width; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.in.width) drow[ox] = srow[ix];
          }
        }
      }
    }
  }
}

// Adds the tile gradient back onto the input positions it was read from.
void ScatterTile(const RowMap& dcol, const Geometry& g, int oy0, int oy1, RowMatrix& dx) {
  const int k = g.kernel;
  for (int c = 0; c < g.in.channels; ++c) {
    double* dst = dx.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = dcol.row((c * k + ky) * k + kx).data();
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in.height) continue;
          const double* srow = src + static_cast<size_t>(oy - oy0) * g.out.width;
          double* drow = dst + static_cast<size_t>(iy) * g.in.width;
          for (int ox = 0; ox < g.out.width; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.in.width) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

int TileRows(const Shape2d& out) {
  return std::clamp(kTargetTileColumns / std::max(1, out.width), 1, out.height);
}

double* Scratch(std::vector<double>& buffer, size_t n) {
  if (buffer.size() < n) buffer.resize(n);
  return buffer.data();
}

thread_local std::vector<double> tile_buffer, grad_tile_buffer;

}  // namespace

Matrix Conv2d::Forward(const ParameterSet& params, const Matrix& x, const Shape2d& in) const {
  if (in.channels != in_) {
    Fail(ErrorKind::kInvalidArgument, "nn", name_ + ": channel mismatch");
  }
  CheckShape(x, in_, static_cast<Eigen::Index>(in.height) * in.width, name_ + " input");
  const Geometry g{in, OutputShape(in), kernel_, stride_, kernel_ / 2};
  const Matrix& w = params.value(name_ + ".weight");
  const Matrix& b = params.value(name_ + ".bias");
  const RowMatrix xr = x;
  const int rows = in_ * kernel_ * kernel_;
  const int tile = TileRows(g.out);
  Matrix y(out_, static_cast<Eigen::Index>(g.out.height) * g.out.width);
  for (int oy0 = 0; oy0 < g.out.height; oy0 += tile) {
    const int oy1 = std::min(g.out.height, oy0 + tile);
    const Eigen::Index n = static_cast<Eigen::Index>(oy1 - oy0) * g.out.width;
    RowMap col(Scratch(tile_buffer, static_cast<size_t>(rows) * n), rows, n);
    FillTile(xr, g, oy0, oy1, col);
    y.middleCols(static_cast<Eigen::Index>(oy0) * g.out.width, n).noalias() = w * col;
  }
  y.colwise() += b.col(0);
  return y;
}

Matrix Conv2d::Backward(ParameterSet& params, const Matrix& x, const Shape2d& in,
                        const Matrix& dy) const {
  const Geometry g{in, OutputShape(in), kernel_, stride_, kernel_ / 2};
  CheckShape(dy, out_, static_cast<Eigen::Index>(g.out.height) * g.out.width, name_ + " grad");
  Parameter& w = params.at(name_ + ".weight");
  params.grad(name_ + ".bias").col(0) += dy.rowwise().sum();
  const RowMatrix xr = x;
  const int rows = in_ * kernel_ * kernel_;
  const int tile = TileRows(g.out);
  RowMatrix dx = RowMatrix::Zero(in_, static_cast<Eigen::Index>(in.height) * in.width);
  for (int oy0 = 0; oy0 < g.out.height; oy0 += tile) {
    const int oy1 = std::min(g.out.height, oy0 + tile);
    const Eigen::Index n = static_cast<Eigen::Index>(oy1 - oy0) * g.out.width;
    const auto dy_tile = dy.middleCols(static_cast<Eigen::Index>(oy0) * g.out.width, n);
    RowMap col(Scratch(tile_buffer, static_cast<size_t>(rows) * n), rows, n);
    FillTile(xr, g, oy0, oy1, col);
    w.grad.noalias() += dy_tile * col.transpose();
    RowMap dcol(Scratch(grad_tile_buffer, static_cast<size_t>(rows) * n), rows, n);
    dcol.noalias() = w.value.transpose() * dy_tile;
    ScatterTile(dcol, g, oy0, oy1, dx);
  }
  return dx;
}

// ---- Adam ----

void Adam::Step(ParameterSet& params, double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (auto& [name, p] : params) {
    auto [mit, m_new] = m_.try_emplace(name, Matrix::Zero(p.value.rows(), p.value.cols()));
    auto [vit, v_new] = v_.try_emplace(name, Matrix::Zero(p.value.rows(), p.value.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    m = config_.beta1 * m + (1.0 - config_.beta1) * p.grad;
    v = config_.beta2 * v + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.eps);
  }
}

void Adam::Export(const std::string& prefix, std::map<std::string, Matrix>& out,
                  nlohmann::json& meta) const {
  for (const auto& [name, m] : m_) out[prefix + "m/" + name] = m;
  for (const auto& [name, v] : v_) out[prefix + "v/" + name] = v;
  meta[prefix + "steps"] = steps_;
}

void Adam::Import(const std::string& prefix, const std::map<std::string, Matrix>& in,
                  const nlohmann::json& meta) {
  m_.clear();
  v_.clear();
  const std::string mp = prefix + "m/", vp = prefix + "v/";
  for (const auto& [key, value] : in) {
    if (key.starts_with(mp)) m_[key.substr(mp.size())] = value;
    if (key.starts_with(vp)) v_[key.substr(vp.size())] = value;
  }
  steps_ = meta.value(prefix + "steps", 0L);
}

double CosineLearningRate(double base_lr, long step, long total_steps) {
  if (total_steps <= 0) return base_lr;
  const double s = std::clamp(static_cast<double>(step), 0.0, static_cast<double>(total_steps));
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * s / static_cast<double>(total_steps)));
}

// ---- TensorArchive ----
//
// Layout: magic, u64 header length, header JSON, u64 tensor count, then per
// tensor u32 name length, name, u64 rows, u64 cols, column-major f64 data.
// A trailing 64-byte hex SHA-256 covers everything before it.

std::string TensorArchive::Encode() const {
  std::string out(kArchiveMagic, sizeof(kArchiveMagic));
  const std::string header = meta.dump();
  Put<uint64_t>(out, header.size());
  out += header;
  Put<uint64_t>(out, tensors.size());
  for (const auto& [name, m] : tensors) {
    Put<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out += name;
    Put<uint64_t>(out, static_cast<uint64_t>(m.rows()));
    Put<uint64_t>(out, static_cast<uint64_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()),
               sizeof(double) * static_cast<size_t>(m.size()));
  }
  out += Sha256Hex(out);
  return out;
}

TensorArchive TensorArchive::Decode(std::string_view bytes) {
  if (bytes.size() < sizeof(kArchiveMagic) + 64 ||
      bytes.substr(0, sizeof(kArchiveMagic)) !=
          std::string_view(kArchiveMagic, sizeof(kArchiveMagic))) {
    Fail(ErrorKind::kIo, "archive", "not a tensor archive");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 64);
  if (Sha256Hex(body) != bytes.substr(bytes.size() - 64)) {
    Fail(ErrorKind::kChecksum, "archive", "tensor archive checksum mismatch");
  }
  Reader r(body);
  r.Take(sizeof(kArchiveMagic));
  TensorArchive a;
  const auto header_len = r.Get<uint64_t>();
  try {
    a.meta = nlohmann::json::parse(r.Take(header_len));
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kIo, "archive", std::string("bad header: ") + e.what());
  }
  const auto count = r.Get<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.Get<uint32_t>();
    std::string name(r.Take(name_len));
    const auto rows = r.Get<uint64_t>();
    const auto cols = r.Get<uint64_t>();
    if (rows != 0 && cols > r.remaining() / sizeof(double) / rows) {
      Fail(ErrorKind::kIo, "archive", "truncated tensor " + name);
    }
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const std::string_view data = r.Take(sizeof(double) * rows * cols);
    std::memcpy(m.data(), data.data(), data.size());
    a.tensors.emplace(std::move(name), std::move(m));
  }
  if (r.remaining() != 0) {
    Fail(ErrorKind::kIo, "archive", "trailing bytes in tensor archive");
  }
  return a;
}

void TensorArchive::Save(const std::string& path) const { WriteFileBytes(path, Encode()); }

TensorArchive TensorArchive::Load(const std::string& path) { return Decode(ReadFileBytes(path)); }

void ExportParameters(const ParameterSet& params, const std::string& prefix,
                      std::map<std::string, Matrix>& out) {
  for (const auto& [name, p] : params) out[prefix + name] = p.value;
}

void ImportParameters(ParameterSet& params, const std::string& prefix,
                      const std::map<std::string, Matrix>& in) {
  for (auto& [name, p] : params) {
    auto it = in.find(prefix + name);
    if (it == in.end()) {
      Fail(ErrorKind::kNotFound, "checkpoint", "missing tensor " + prefix + name);
    }
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      Fail(ErrorKind::kFingerprintMismatch, "checkpoint",
           "shape mismatch for tensor " + prefix + name);
    }
    p.value = it->second;
  }
}

}  // namespace wavebender::nn

// Copyright 2026 The Impromptu Authors
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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <ios>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "impromptu/dynamics.hpp"
#include "impromptu/errors.hpp"
#include "impromptu/types.hpp"

namespace impromptu {

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct InverseSample {
  Vector input;  // [x(k), y(k+r)]
  double label;  // u(k)
};

struct InverseDataset {
  std::vector<InverseSample> samples;
  int relative_degree = 1;
  std::size_t skipped_traces = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  int input_dim() const { return empty() ? 0 : static_cast<int>(samples.front().input.size()); }
};

// Pairs (x(k), y(k+r)) with u(k) inside each trace; `stride` keeps every
// stride-th sample. Traces with fewer than r + 1 states are skipped.
inline InverseDataset build_inverse_dataset(std::span<const SimTrace> traces, int r, std::size_t stride = 1) {
  if (r < 1) throw InvalidArgument("build_inverse_dataset: relative degree must be positive");
  if (stride == 0) throw InvalidArgument("build_inverse_dataset: stride must be positive");
  InverseDataset data;
  data.relative_degree = r;
  const auto ur = static_cast<std::size_t>(r);
  for (const auto& trace : traces) {
    const std::size_t len = trace.states.size();
    if (len < ur + 1 || trace.outputs.size() != len) {
      ++data.skipped_traces;
      continue;
    }
    const std::size_t count = std::min(len - ur, trace.inputs.size());
    for (std::size_t k = 0; k < count; k += stride) {
      const Vector& x = trace.states[k];
      Vector input(x.size() + 1);
      input << x, trace.outputs[k + ur];
      data.samples.push_back({std::move(input), trace.inputs[k]});
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Per-dimension affine map v -> (v - mean) / scale.
struct Normalizer {
  Vector mean;
  Vector scale;

  static Normalizer fit(const Matrix& columns) {  // one sample per column
    Normalizer nz;
    const auto n = static_cast<double>(columns.cols());
    nz.mean = columns.rowwise().mean();
    nz.scale.resize(columns.rows());
    for (Eigen::Index i = 0; i < columns.rows(); ++i) {
      const double var = (columns.row(i).array() - nz.mean(i)).square().sum() / std::max(1.0, n);
      const double s = std::sqrt(var);
      nz.scale(i) = s > 1e-12 ? s : 1.0;
    }
    return nz;
  }
  static Normalizer identity(int dim) { return {Vector::Zero(dim), Vector::Ones(dim)}; }

  Vector normalize(const Vector& v) const { return (v - mean).cwiseQuotient(scale); }
  Vector denormalize(const Vector& z) const { return z.cwiseProduct(scale) + mean; }
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

// Fully connected network with tanh hidden layers and a linear output.
// Operates on normalized data; MlpInverseModel adds the affine maps.
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::vector<int> sizes, std::uint64_t seed) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw InvalidArgument("Mlp: need at least input and output layers");
    for (int s : sizes_) {
      if (s <= 0) throw InvalidArgument("Mlp: layer sizes must be positive");
    }
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const int fan_in = sizes_[l];
      const double limit = std::sqrt(3.0 / fan_in);
      std::uniform_real_distribution<double> init(-limit, limit);
      Matrix W(sizes_[l + 1], fan_in);
      for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = init(rng);
      weights_.push_back(std::move(W));
      biases_.push_back(Vector::Zero(sizes_[l + 1]));
    }
  }

  const std::vector<int>& sizes() const { return sizes_; }
  std::size_t layers() const { return weights_.size(); }
  const Matrix& weight(std::size_t l) const { return weights_[l]; }
  const Vector& bias(std::size_t l) const { return biases_[l]; }
  Matrix& weight(std::size_t l) { return weights_[l]; }
  Vector& bias(std::size_t l) { return biases_[l]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layers(); ++l) n += weights_[l].size() + biases_[l].size();
    return n;
  }

  // Row-major weights then bias, layer by layer.
  Vector parameters() const {
    Vector p(parameter_count());
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < layers(); ++l) {
      for (Eigen::Index i = 0; i < weights_[l].rows(); ++i) {
        for (Eigen::Index j = 0; j < weights_[l].cols(); ++j) p(o++) = weights_[l](i, j);
      }
      for (Eigen::Index i = 0; i < biases_[l].size(); ++i) p(o++) = biases_[l](i);
    }
    return p;
  }

  void set_parameters(const Vector& p) {
    if (static_cast<std::size_t>(p.size()) != parameter_count()) {
      throw InvalidArgument("Mlp: parameter vector has wrong size");
    }
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < layers(); ++l) {
      for (Eigen::Index i = 0; i < weights_[l].rows(); ++i) {
        for (Eigen::Index j = 0; j < weights_[l].cols(); ++j) weights_[l](i, j) = p(o++);
      }
      for (Eigen::Index i = 0; i < biases_[l].size(); ++i) biases_[l](i) = p(o++);
    }
  }

  // Forward pass on a batch (one sample per column).
  Matrix forward(const Matrix& X) const {
    Matrix a = X;
    for (std::size_t l = 0; l < layers(); ++l) {
      Matrix z = (weights_[l] * a).colwise() + biases_[l];
      a = (l + 1 < layers()) ? Matrix(z.array().tanh()) : z;
    }
    return a;
  }

  // Mean squared error over the batch and its gradient, laid out like
  // parameters().
  double loss_and_gradient(const Matrix& X, const Matrix& Y, std::vector<Matrix>& grad_w,
                           std::vector<Vector>& grad_b) const {
    const std::size_t L = layers();
    const double m = static_cast<double>(X.cols());
    std::vector<Matrix> acts;
    acts.reserve(L + 1);
    acts.push_back(X);
    for (std::size_t l = 0; l < L; ++l) {
      Matrix z = (weights_[l] * acts.back()).colwise() + biases_[l];
      acts.push_back((l + 1 < L) ? Matrix(z.array().tanh()) : z);
    }
    Matrix delta = acts.back() - Y;
    const double loss = delta.squaredNorm() / m;
    delta *= 2.0 / m;
    grad_w.resize(L);
    grad_b.resize(L);
    for (std::size_t l = L; l-- > 0;) {
      grad_w[l] = delta * acts[l].transpose();
      grad_b[l] = delta.rowwise().sum();
      if (l > 0) {
        delta = (weights_[l].transpose() * delta).cwiseProduct(
            Matrix((1.0 - acts[l].array().square()).matrix()));
      }
    }
    return loss;
  }

  double loss(const Matrix& X, const Matrix& Y) const { return (forward(X) - Y).squaredNorm() / X.cols(); }

  Vector flatten(const std::vector<Matrix>& gw, const std::vector<Vector>& gb) const {
    Mlp tmp = *this;
    for (std::size_t l = 0; l < layers(); ++l) {
      tmp.weights_[l] = gw[l];
      tmp.biases_[l] = gb[l];
    }
    return tmp.parameters();
  }

 private:
  std::vector<int> sizes_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

// Learned approximation of u(k) = (y_d(k+r) - F(x)) / G(x).
class MlpInverseModel {
 public:
  MlpInverseModel() = default;
  MlpInverseModel(Mlp net, Normalizer input_norm, Normalizer output_norm)
      : net_(std::move(net)), in_(std::move(input_norm)), out_(std::move(output_norm)) {}

  const Mlp& network() const { return net_; }
  const Normalizer& input_normalizer() const { return in_; }
  const Normalizer& output_normalizer() const { return out_; }
  int input_dim() const { return net_.sizes().front(); }

  double predict(const Vector& input) const {
    if (input.size() != input_dim()) throw InvalidArgument("MlpInverseModel: input has wrong dimension");
    const Matrix z = net_.forward(in_.normalize(input));
    return z(0, 0) * out_.scale(0) + out_.mean(0);
  }

  double reference(const Vector& x, double y_d_future) const {
    Vector input(x.size() + 1);
    input << x, y_d_future;
    return predict(input);
  }

 private:
  Mlp net_;
  Normalizer in_;
  Normalizer out_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainingConfig {
  std::vector<int> hidden = {20, 20};
  int max_epochs = 2000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double validation_fraction = 0.2;
  int patience = 50;
  // An epoch counts as an improvement only if it lowers the best validation
  // loss by this relative amount.
  double min_relative_improvement = 1e-3;
};

struct TrainingReport {
  int epochs_run = 0;
  int best_epoch = 0;
  double train_rmse = 0.0;       // normalized units
  double validation_rmse = 0.0;  // normalized units
  bool early_stopped = false;
};

class TrainingDiverged : public DivergenceError {
 public:
  using DivergenceError::DivergenceError;
};

struct TrainedInverse {
  MlpInverseModel model;
  TrainingReport report;
};

// Adam on mean squared error in z-scored units. Deterministic for a given
// seed; the best validation epoch is kept.
inline TrainedInverse train_mlp(const InverseDataset& data, const TrainingConfig& cfg, std::uint64_t seed) {
  if (data.empty()) throw InvalidArgument("train_mlp: dataset is empty");
  if (cfg.batch_size <= 0 || cfg.max_epochs <= 0 || !(cfg.learning_rate > 0.0)) {
    throw InvalidArgument("train_mlp: bad training configuration");
  }
  const int dim = data.input_dim();
  const auto n = static_cast<Eigen::Index>(data.size());

  Matrix X(dim, n);
  Matrix Y(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X.col(i) = data.samples[i].input;
    Y(0, i) = data.samples[i].label;
  }
  const Normalizer in = Normalizer::fit(X);
  const Normalizer out = Normalizer::fit(Y);
  for (Eigen::Index i = 0; i < n; ++i) {
    X.col(i) = in.normalize(X.col(i));
    Y.col(i) = out.normalize(Y.col(i));
  }

  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Eigen::Index n_val = static_cast<Eigen::Index>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
  if (n - n_val < 1) n_val = n - 1;
  const Eigen::Index n_train = n - n_val;
  std::vector<Eigen::Index> train_idx(order.begin(), order.begin() + n_train);
  Matrix Xv(dim, n_val), Yv(1, n_val);
  for (Eigen::Index i = 0; i < n_val; ++i) {
    Xv.col(i) = X.col(order[n_train + i]);
    Yv(0, i) = Y(0, order[n_train + i]);
  }

  std::vector<int> sizes{dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(1);
  Mlp net(sizes, rng());

  Vector theta = net.parameters();
  Vector m1 = Vector::Zero(theta.size());
  Vector m2 = Vector::Zero(theta.size());
  std::int64_t t = 0;

  TrainingReport report;
  Mlp best = net;
  double best_val = std::numeric_limits<double>::infinity();
  double plateau_ref = best_val;
  int since_best = 0;
  std::vector<Matrix> gw;
  std::vector<Vector> gb;
  Matrix Xb, Yb;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    for (Eigen::Index start = 0; start < n_train; start += cfg.batch_size) {
      const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n_train - start);
      Xb.resize(dim, bs);
      Yb.resize(1, bs);
      for (Eigen::Index j = 0; j < bs; ++j) {
        Xb.col(j) = X.col(train_idx[start + j]);
        Yb(0, j) = Y(0, train_idx[start + j]);
      }
      const double loss = net.loss_and_gradient(Xb, Yb, gw, gb);
      if (!std::isfinite(loss)) throw TrainingDiverged("training loss is not finite", static_cast<std::size_t>(epoch));
      const Vector g = net.flatten(gw, gb);
      ++t;
      m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g;
      m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
      theta.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.epsilon);
      net.set_parameters(theta);
    }
    report.epochs_run = epoch;

    const double val = n_val > 0 ? net.loss(Xv, Yv) : net.loss(X, Y);
    if (!std::isfinite(val)) throw TrainingDiverged("validation loss is not finite", static_cast<std::size_t>(epoch));
    if (val < best_val) {
      best_val = val;
      best = net;
      report.best_epoch = epoch;
    }
    if (val < plateau_ref * (1.0 - cfg.min_relative_improvement)) {
      plateau_ref = val;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      report.early_stopped = true;
      break;
    }
  }

  Matrix Xt(dim, n_train), Yt(1, n_train);
  for (Eigen::Index i = 0; i < n_train; ++i) {
    Xt.col(i) = X.col(order[i]);
    Yt(0, i) = Y(0, order[i]);
  }
  report.train_rmse = std::sqrt(best.loss(Xt, Yt));
  report.validation_rmse = n_val > 0 ? std::sqrt(best.loss(Xv, Yv)) : report.train_rmse;
  return {MlpInverseModel(std::move(best), in, out), report};
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------
//
//   impromptu-mlp 1
//   activation tanh
//   layers <L+1> s0 s1 ... sL
//   input_mean ... / input_scale ... / output_mean ... / output_scale ...
//   W<l> <row-major values> / b<l> <values>
//
// Values are written as hexadecimal floats so a load reproduces every bit.

namespace detail {

inline void write_values(std::ostream& os, const char* tag, const double* v, Eigen::Index n) {
  os << tag;
  for (Eigen::Index i = 0; i < n; ++i) os << ' ' << std::hexfloat << v[i] << std::defaultfloat;
  os << '\n';
}

inline std::vector<double> read_values(std::istream& is, const std::string& tag, Eigen::Index n) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("mlp model: missing '" + tag + "' line");
  std::istringstream ls(line);
  std::string got;
  ls >> got;
  if (got != tag) throw IoError("mlp model: expected '" + tag + "', found '" + got + "'");
  std::vector<double> out;
  std::string tok;
  while (ls >> tok) out.push_back(std::strtod(tok.c_str(), nullptr));
  if (static_cast<Eigen::Index>(out.size()) != n) throw IoError("mlp model: wrong value count for " + tag);
  return out;
}

}  // namespace detail

inline void save_mlp(std::ostream& os, const MlpInverseModel& model) {
  const Mlp& net = model.network();
  os << "impromptu-mlp 1\n";
  os << "activation tanh\n";
  os << "layers " << net.sizes().size();
  for (int s : net.sizes()) os << ' ' << s;
  os << '\n';
  detail::write_values(os, "input_mean", model.input_normalizer().mean.data(), model.input_normalizer().mean.size());
  detail::write_values(os, "input_scale", model.input_normalizer().scale.data(),
                       model.input_normalizer().scale.size());
  detail::write_values(os, "output_mean", model.output_normalizer().mean.data(),
                       model.output_normalizer().mean.size());
  detail::write_values(os, "output_scale", model.output_normalizer().scale.data(),
                       model.output_normalizer().scale.size());
  for (std::size_t l = 0; l < net.layers(); ++l) {
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const RowMajor W = net.weight(l);
    detail::write_values(os, ("W" + std::to_string(l)).c_str(), W.data(), W.size());
    detail::write_values(os, ("b" + std::to_string(l)).c_str(), net.bias(l).data(), net.bias(l).size());
  }
}

inline MlpInverseModel load_mlp(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "impromptu-mlp 1") throw IoError("mlp model: bad header or version");
  if (!std::getline(is, line) || line != "activation tanh") throw IoError("mlp model: unsupported activation");
  if (!std::getline(is, line)) throw IoError("mlp model: missing layers line");
  std::istringstream ls(line);
  std::string tag;
  std::size_t count = 0;
  ls >> tag >> count;
  if (tag != "layers" || count < 2) throw IoError("mlp model: bad layers line");
  std::vector<int> sizes(count);
  for (auto& s : sizes) {
    if (!(ls >> s) || s <= 0) throw IoError("mlp model: bad layer size");
  }
  const int in_dim = sizes.front();
  const int out_dim = sizes.back();
  auto to_vec = [](const std::vector<double>& v) { return Vector(Eigen::Map<const Vector>(v.data(), v.size())); };
  Normalizer in{to_vec(detail::read_values(is, "input_mean", in_dim)),
                to_vec(detail::read_values(is, "input_scale", in_dim))};
  Normalizer out{to_vec(detail::read_values(is, "output_mean", out_dim)),
                 to_vec(detail::read_values(is, "output_scale", out_dim))};
  Mlp net(sizes, 0);
  for (std::size_t l = 0; l < net.layers(); ++l) {
    const auto rows = net.weight(l).rows();
    const auto cols = net.weight(l).cols();
    const auto w = detail::read_values(is, "W" + std::to_string(l), rows * cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) net.weight(l)(i, j) = w[i * cols + j];
    }
    net.bias(l) = to_vec(detail::read_values(is, "b" + std::to_string(l), rows));
  }
  return MlpInverseModel(std::move(net), std::move(in), std::move(out));
}

inline void save_mlp(const std::string& path, const MlpInverseModel& model) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write model file " + path);
  save_mlp(os, model);
}

inline MlpInverseModel load_mlp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read model file " + path);
  return load_mlp(is);
}

// ---------------------------------------------------------------------------
// Analytic inverse
// ---------------------------------------------------------------------------

// u(k) = (y_d(k+r) - F(x)) / G(x) for a system with a known input-output form.
template <InputOutputForm System>
class AnalyticInverse {
 public:
  explicit AnalyticInverse(System sys) : sys_(std::move(sys)) {}

  const System& system() const { return sys_; }

  double reference(const Vector& x, double y_d_future) const {
    const double gain = sys_.io_gain(x);
    if (!(std::abs(gain) >= kSingularGainTol)) throw SingularGainError("inverse undefined: input gain vanishes");
    return (y_d_future - sys_.io_drift(x)) / gain;
  }

 private:
  System sys_;
};

template <typename M>
concept InverseModel = requires(const M& m, const Vector& x, double yd) {
  { m.reference(x, yd) } -> std::convertible_to<double>;
};

template <InverseModel M>
double inverse_reference(const M& model, const Vector& x, double y_d_future) {
  return model.reference(x, y_d_future);
}

// ---------------------------------------------------------------------------
// Source excitation
// ---------------------------------------------------------------------------

struct ExcitationGrid {
  std::vector<double> amplitudes = {0.5, 1.0, 1.5, 2.0, 2.5};
  // rad/s; at dt = 1.5e-3 these are 0.002, 0.01, 0.05, 0.2 and 0.8 rad/step.
  std::vector<double> omegas = {0.002 / 1.5e-3, 0.01 / 1.5e-3, 0.05 / 1.5e-3, 0.2 / 1.5e-3, 0.8 / 1.5e-3};
  double duration = 40.0;
  double dt = 1.5e-3;
  std::size_t stride = 10;
};

// Open-loop response of the source system to u(k) = a sin(w k dt) for every
// (a, w) on the grid.
template <DiscreteSystem System>
std::vector<SimTrace> excite_source(const System& source, const ExcitationGrid& grid) {
  std::vector<SimTrace> traces;
  const auto steps = static_cast<std::size_t>(std::floor(grid.duration / grid.dt + 1e-9));
  for (double a : grid.amplitudes) {
    for (double w : grid.omegas) {
      auto u = [&](std::size_t k) { return a * std::sin(w * grid.dt * static_cast<double>(k)); };
      auto policy = [&](std::size_t k, const Vector&, double) { return u(k); };
      auto unused = [](std::size_t) { return 0.0; };
      traces.push_back(simulate(source, policy, unused, steps, Vector::Zero(source.state_dim()), grid.dt));
      traces.back().desired.clear();
    }
  }
  return traces;
}

}  // namespace impromptu

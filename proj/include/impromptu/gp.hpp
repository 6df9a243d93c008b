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
#include <deque>
#include <functional>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SVD>

#include "impromptu/errors.hpp"
#include "impromptu/trajectory.hpp"
#include "impromptu/types.hpp"

namespace impromptu {

// Explicit basis of the GP mean.
enum class GpBasis {
  kNone,           // zero mean
  kConstant,       // {1}
  kLinear,         // {1, xi_i}
  kPureQuadratic,  // {1, xi_i, xi_i^2}
};

inline int basis_size(GpBasis basis, int dim) {
  switch (basis) {
    case GpBasis::kNone: return 0;
    case GpBasis::kConstant: return 1;
    case GpBasis::kLinear: return 1 + dim;
    case GpBasis::kPureQuadratic: return 1 + 2 * dim;
  }
  return 0;
}

struct GpHyperparams {
  // One entry means a length scale shared by every input dimension.
  std::vector<double> length_scales = {1.0};
  double signal_variance = 1.0;
  double noise_variance = 1e-4;
  GpBasis basis = GpBasis::kPureQuadratic;

  double length_scale(int i) const {
    return length_scales.size() == 1 ? length_scales.front() : length_scales[static_cast<std::size_t>(i)];
  }

  void validate(int dim) const {
    if (length_scales.empty() || (length_scales.size() != 1 && static_cast<int>(length_scales.size()) != dim)) {
      throw InvalidArgument("GpHyperparams: need one shared length scale or one per input dimension");
    }
    for (double l : length_scales) {
      if (!(l > 0.0) || !std::isfinite(l)) throw InvalidArgument("GpHyperparams: length scales must be positive");
    }
    if (!(signal_variance > 0.0) || !std::isfinite(signal_variance)) {
      throw InvalidArgument("GpHyperparams: signal variance must be positive");
    }
    if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance)) {
      throw InvalidArgument("GpHyperparams: noise variance must be non-negative");
    }
  }
};

// sigma1^2 exp(-1/2 sum_i (a_i - b_i)^2 / l_i^2)
inline double kernel(const Vector& a, const Vector& b, const GpHyperparams& hyper) {
  if (a.size() != b.size()) throw InvalidArgument("kernel: dimension mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = (a(i) - b(i)) / hyper.length_scale(static_cast<int>(i));
    s += d * d;
  }
  return hyper.signal_variance * std::exp(-0.5 * s);
}

struct GpOptions {
  std::size_t capacity = 15;
  // Re-fit hyperparameters every `refit_stride` observations; 0 keeps them fixed.
  int refit_stride = 1;
  bool fit_noise = true;
  bool shared_length_scale = true;
  int max_evaluations = 100;
  double f_tolerance = 1e-8;  // stop once the simplex spread in -log L is this small (relative)
  std::size_t min_fit_samples = 0;  // 0: basis size + 2
  double length_scale_min = 1e-3, length_scale_max = 1e3;
  double signal_variance_min = 1e-8, signal_variance_max = 1e4;
  double noise_variance_min = 1e-12, noise_variance_max = 1e2;
  double jitter = 1e-10;
  double max_jitter = 1e-6;
};

struct GpPrediction {
  double mean = 0.0;
  double variance = std::numeric_limits<double>::infinity();
  bool cold = true;  // no data: mean is the zero fallback
};

struct GpSample {
  Vector input;
  double output;
};

// Nelder-Mead on a box, minimizing `f`. Returns the best point found; the
// initial point is always evaluated first, so the result is never worse.
struct SimplexResult {
  Vector x;
  double value;
  int evaluations;
};

inline SimplexResult bounded_simplex_minimize(const std::function<double(const Vector&)>& f, const Vector& x0,
                                              const Vector& lower, const Vector& upper, int max_evaluations,
                                              double step = 1.0, double f_tolerance = 1e-8) {
  const Eigen::Index n = x0.size();
  auto clamp = [&](Vector v) { return Vector(v.cwiseMax(lower).cwiseMin(upper)); };
  int evals = 0;
  auto eval = [&](const Vector& v) {
    ++evals;
    const double y = f(v);
    return std::isfinite(y) ? y : std::numeric_limits<double>::infinity();
  };

  std::vector<Vector> pts;
  std::vector<double> vals;
  pts.push_back(clamp(x0));
  vals.push_back(eval(pts[0]));
  for (Eigen::Index i = 0; i < n && evals < max_evaluations; ++i) {
    Vector p = pts[0];
    p(i) += (p(i) + step <= upper(i)) ? step : -step;
    pts.push_back(clamp(p));
    vals.push_back(eval(pts.back()));
  }

  while (evals < max_evaluations && static_cast<Eigen::Index>(pts.size()) == n + 1) {
    std::vector<std::size_t> idx(pts.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = idx.front(), worst = idx.back(), second = idx[idx.size() - 2];
    if (std::abs(vals[worst] - vals[best]) <= f_tolerance * (1.0 + std::abs(vals[best]))) {
      break;
    }

    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i != worst) centroid += pts[i];
    }
    centroid /= static_cast<double>(n);

    const Vector xr = clamp(centroid + (centroid - pts[worst]));
    const double fr = eval(xr);
    if (fr < vals[best] && evals < max_evaluations) {
      const Vector xe = clamp(centroid + 2.0 * (centroid - pts[worst]));
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    if (evals >= max_evaluations) break;
    const bool outside = fr < vals[worst];
    const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid)) : Vector(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = eval(xc);
    if (fc < std::min(fr, vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size() && evals < max_evaluations; ++i) {
      if (i == best) continue;
      pts[i] = clamp(pts[best] + 0.5 * (pts[i] - pts[best]));
      vals[i] = eval(pts[i]);
    }
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < vals.size(); ++i) {
    if (vals[i] < vals[best]) best = i;
  }
  return {pts[best], vals[best], evals};
}

// Sliding-window GP regression with an explicit polynomial basis.
//
// The window keeps the newest `capacity` samples. After every change the
// model re-centres the inputs on the window mean (the basis span and the
// stationary kernel are unchanged by a shift), factors K + (sigma2^2 + jitter) I
// and estimates the basis coefficients by generalized least squares, solved
// on the whitened design with an SVD so that nearly collinear windows keep
// full precision.
class GpWindowModel {
 public:
  GpWindowModel(int input_dim, GpHyperparams hyper = {}, GpOptions options = {})
      : dim_(input_dim), hyper_(std::move(hyper)), opt_(options) {
    if (dim_ <= 0) throw InvalidArgument("GpWindowModel: input dimension must be positive");
    if (opt_.capacity == 0) throw InvalidArgument("GpWindowModel: capacity must be positive");
    hyper_.validate(dim_);
    if (!opt_.shared_length_scale && hyper_.length_scales.size() == 1) {
      hyper_.length_scales.assign(static_cast<std::size_t>(dim_), hyper_.length_scales.front());
    }
  }

  int input_dim() const { return dim_; }
  std::size_t capacity() const { return opt_.capacity; }
  std::size_t size() const { return window_.size(); }
  bool empty() const { return window_.empty(); }
  const std::deque<GpSample>& samples() const { return window_; }
  const GpHyperparams& hyperparams() const { return hyper_; }
  const GpOptions& options() const { return opt_; }
  std::size_t observations() const { return seen_; }
  std::size_t fit_failures() const { return fit_failures_; }
  const std::vector<std::string>& events() const { return events_; }
  double jitter() const { return state_.jitter; }
  const Matrix& cholesky_factor() const { return state_.L; }
  const Vector& basis_coefficients() const { return state_.beta; }
  const Vector& center() const { return state_.center; }

  std::size_t min_fit_samples() const {
    return opt_.min_fit_samples > 0 ? opt_.min_fit_samples
                                    : static_cast<std::size_t>(basis_size(hyper_.basis, dim_)) + 2;
  }

  // K + sigma2^2 I over the current window, without jitter.
  Matrix covariance() const {
    const auto n = static_cast<Eigen::Index>(window_.size());
    Matrix K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        K(i, j) = K(j, i) = kernel(window_[i].input, window_[j].input, hyper_);
      }
    }
    K.diagonal().array() += hyper_.noise_variance;
    return K;
  }

  void observe(const Vector& input, double output) {
    if (input.size() != dim_) throw InvalidArgument("GpWindowModel::observe: input has wrong dimension");
    if (!input.allFinite() || !std::isfinite(output)) {
      throw InvalidArgument("GpWindowModel::observe: non-finite sample rejected");
    }
    window_.push_back({input, output});
    while (window_.size() > opt_.capacity) window_.pop_front();
    ++seen_;
    if (opt_.refit_stride > 0 && seen_ % static_cast<std::size_t>(opt_.refit_stride) == 0 &&
        window_.size() >= min_fit_samples()) {
      fit_hyperparams();
    } else {
      refresh();
    }
  }

  void set_hyperparams(GpHyperparams hyper) {
    hyper.validate(dim_);
    hyper_ = std::move(hyper);
    refresh();
  }

  GpPrediction predict(const Vector& query) const {
    if (query.size() != dim_) throw InvalidArgument("GpWindowModel::predict: query has wrong dimension");
    if (window_.empty()) return {};
    const Vector qc = query - state_.center;
    const Vector k = kernel_vector(query);
    GpPrediction p;
    p.cold = false;
    p.mean = basis_row(qc).dot(state_.beta) + k.dot(state_.alpha);
    const Vector v = state_.L.triangularView<Eigen::Lower>().solve(k);
    p.variance = std::max(0.0, hyper_.signal_variance - v.squaredNorm());
    return p;
  }

  // d mean / d query(dim), analytic.
  double mean_derivative(const Vector& query, int dim) const {
    if (query.size() != dim_ || dim < 0 || dim >= dim_) {
      throw InvalidArgument("GpWindowModel::mean_derivative: bad query or dimension");
    }
    if (window_.empty()) return 0.0;
    double d = 0.0;
    const double qc = query(dim) - state_.center(dim);
    if (hyper_.basis == GpBasis::kLinear || hyper_.basis == GpBasis::kPureQuadratic) d += state_.beta(1 + dim);
    if (hyper_.basis == GpBasis::kPureQuadratic) d += 2.0 * state_.beta(1 + dim_ + dim) * qc;
    const double l2 = hyper_.length_scale(dim) * hyper_.length_scale(dim);
    for (std::size_t i = 0; i < window_.size(); ++i) {
      const double ki = kernel(query, window_[i].input, hyper_);
      d += -ki * (query(dim) - window_[i].input(dim)) / l2 * state_.alpha(static_cast<Eigen::Index>(i));
    }
    return d;
  }

  // Log marginal likelihood with the basis coefficients profiled out.
  double log_marginal_likelihood() const { return state_.lml; }

  double log_marginal_likelihood(const GpHyperparams& hyper) const {
    const State s = factorize(hyper, false);
    return s.ok ? s.lml : -std::numeric_limits<double>::infinity();
  }

  // Maximizes the log marginal likelihood over log hyperparameters. On failure
  // the previous hyperparameters are kept and the event is logged.
  GpHyperparams fit_hyperparams() {
    if (window_.size() < min_fit_samples()) {
      refresh();
      return hyper_;
    }
    const std::size_t nl = hyper_.length_scales.size();
    const Eigen::Index np = static_cast<Eigen::Index>(nl) + 1 + (opt_.fit_noise ? 1 : 0);
    Vector x0(np), lo(np), hi(np);
    for (std::size_t i = 0; i < nl; ++i) {
      x0(i) = std::log(hyper_.length_scales[i]);
      lo(i) = std::log(opt_.length_scale_min);
      hi(i) = std::log(opt_.length_scale_max);
    }
    x0(nl) = std::log(hyper_.signal_variance);
    lo(nl) = std::log(opt_.signal_variance_min);
    hi(nl) = std::log(opt_.signal_variance_max);
    if (opt_.fit_noise) {
      x0(nl + 1) = std::log(std::max(hyper_.noise_variance, opt_.noise_variance_min));
      lo(nl + 1) = std::log(opt_.noise_variance_min);
      hi(nl + 1) = std::log(opt_.noise_variance_max);
    }
    auto unpack = [&](const Vector& x) {
      GpHyperparams h = hyper_;
      for (std::size_t i = 0; i < nl; ++i) h.length_scales[i] = std::exp(x(i));
      h.signal_variance = std::exp(x(nl));
      if (opt_.fit_noise) h.noise_variance = std::exp(x(nl + 1));
      return h;
    };
    auto objective = [&](const Vector& x) {
      const State s = factorize(unpack(x), false);
      return s.ok ? -s.lml : std::numeric_limits<double>::infinity();
    };

    const SimplexResult res = bounded_simplex_minimize(objective, x0, lo, hi, opt_.max_evaluations, 1.0, opt_.f_tolerance);
    const GpHyperparams previous = hyper_;
    if (std::isfinite(res.value)) {
      hyper_ = unpack(res.x);
      if (!try_refresh()) {
        hyper_ = previous;
        note_fit_failure("factorization failed at optimum");
        refresh();
      }
    } else {
      note_fit_failure("no finite likelihood in the search box");
      refresh();
    }
    return hyper_;
  }

  // One row per sample: input entries then output.
  void dump_csv(std::ostream& os) const {
    for (int i = 0; i < dim_; ++i) os << "xi" << i << ',';
    os << "output\n";
    const auto old = os.precision(17);
    for (const auto& s : window_) {
      for (int i = 0; i < dim_; ++i) os << s.input(i) << ',';
      os << s.output << '\n';
    }
    os.precision(old);
  }

  // Replaces the window with the CSV rows (oldest first); hyperparameters are
  // left as configured.
  void restore_csv(std::istream& is) {
    const CsvTable table = read_csv_table(is);
    if (static_cast<int>(table.header.size()) != dim_ + 1) {
      throw InvalidArgument("GpWindowModel::restore_csv: expected " + std::to_string(dim_ + 1) + " columns");
    }
    std::deque<GpSample> restored;
    const std::size_t rows = table.columns.front().size();
    for (std::size_t r = 0; r < rows; ++r) {
      Vector in(dim_);
      for (int i = 0; i < dim_; ++i) in(i) = table.columns[static_cast<std::size_t>(i)][r];
      restored.push_back({in, table.columns.back()[r]});
    }
    while (restored.size() > opt_.capacity) restored.pop_front();
    window_ = std::move(restored);
    refresh();
  }

 private:
  struct State {
    bool ok = false;
    double jitter = 0.0;
    Vector center;
    Matrix L;      // chol(K + (sigma2^2 + jitter) I)
    Vector beta;   // basis coefficients, centred coordinates
    Vector alpha;  // (K + ...)^-1 (y - H beta)
    double lml = -std::numeric_limits<double>::infinity();
  };

  Vector basis_row(const Vector& qc) const {
    Vector h(basis_size(hyper_.basis, dim_));
    if (h.size() == 0) return h;
    h(0) = 1.0;
    if (hyper_.basis == GpBasis::kLinear || hyper_.basis == GpBasis::kPureQuadratic) h.segment(1, dim_) = qc;
    if (hyper_.basis == GpBasis::kPureQuadratic) h.segment(1 + dim_, dim_) = qc.array().square().matrix();
    return h;
  }

  Vector kernel_vector(const Vector& query) const {
    Vector k(static_cast<Eigen::Index>(window_.size()));
    for (std::size_t i = 0; i < window_.size(); ++i) k(static_cast<Eigen::Index>(i)) = kernel(query, window_[i].input, hyper_);
    return k;
  }

  State factorize(const GpHyperparams& hyper, bool keep_all) const {
    State s;
    const auto n = static_cast<Eigen::Index>(window_.size());
    const int p = basis_size(hyper.basis, dim_);
    s.center = Vector::Zero(dim_);
    if (n == 0) {
      s.ok = true;
      s.lml = 0.0;
      return s;
    }
    for (const auto& smp : window_) s.center += smp.input;
    s.center /= static_cast<double>(n);

    Matrix K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) K(i, j) = K(j, i) = kernel(window_[i].input, window_[j].input, hyper);
    }
    K.diagonal().array() += hyper.noise_variance;

    Eigen::LLT<Matrix> llt;
    double jitter = opt_.jitter;
    for (;;) {
      Matrix Kj = K;
      Kj.diagonal().array() += jitter;
      llt.compute(Kj);
      if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 0.0) break;
      jitter *= 2.0;
      if (jitter > opt_.max_jitter) return s;
    }
    s.jitter = jitter;
    s.L = llt.matrixL();

    Vector y(n);
    Matrix H(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      y(i) = window_[i].output;
      if (p > 0) H.row(i) = basis_row(window_[i].input - s.center).transpose();
    }
    const auto Lt = s.L.triangularView<Eigen::Lower>();
    const Vector yw = Lt.solve(y);
    Vector rw = yw;
    s.beta = Vector::Zero(p);
    if (p > 0) {
      const Matrix Hw = Lt.solve(H);
      const double tol = std::numeric_limits<double>::epsilon() * static_cast<double>(std::max<Eigen::Index>(n, p));
      if (keep_all) {
        Eigen::JacobiSVD<Matrix> svd(Hw, Eigen::ComputeThinU | Eigen::ComputeThinV);
        svd.setThreshold(tol);
        s.beta = svd.solve(yw);
      } else {
        // Likelihood-only path: a pivoted QR gives the same residual for less work.
        Eigen::ColPivHouseholderQR<Matrix> qr(Hw);
        qr.setThreshold(tol);
        s.beta = qr.solve(yw);
      }
      rw = yw - Hw * s.beta;
    }
    s.lml = -0.5 * rw.squaredNorm() - s.L.diagonal().array().log().sum() -
            0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    if (keep_all) s.alpha = s.L.transpose().triangularView<Eigen::Upper>().solve(rw);
    s.ok = std::isfinite(s.lml);
    return s;
  }

  bool try_refresh() {
    State s = factorize(hyper_, true);
    if (!s.ok) return false;
    state_ = std::move(s);
    return true;
  }

  void refresh() {
    if (!try_refresh()) throw AnalysisError("GpWindowModel: covariance is not positive definite even with max jitter");
  }

  void note_fit_failure(const std::string& why) {
    ++fit_failures_;
    events_.push_back("observation " + std::to_string(seen_) + ": hyperparameter fit kept previous values (" + why + ")");
  }

  int dim_;
  GpHyperparams hyper_;
  GpOptions opt_;
  std::deque<GpSample> window_;
  State state_;
  std::size_t seen_ = 0;
  std::size_t fit_failures_ = 0;
  std::vector<std::string> events_;
};

}  // namespace impromptu

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
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "impromptu/dynamics.hpp"
#include "impromptu/errors.hpp"
#include "impromptu/gp.hpp"
#include "impromptu/inverse.hpp"
#include "impromptu/types.hpp"

namespace impromptu {

// Anything that learns e(k+r) from {x(k), u(k), y_d(k+r)} and predicts it.
template <typename P>
concept ErrorPredictor = requires(P& p, const P& cp, const Vector& xi, double e, int dim) {
  { p.observe(xi, e) };
  { cp.predict(xi) } -> std::convertible_to<GpPrediction>;
  { cp.mean_derivative(xi, dim) } -> std::convertible_to<double>;
  { cp.size() } -> std::convertible_to<std::size_t>;
};

// Offline-only mode: no online module, u2 = 0.
struct NoPredictor {
  void observe(const Vector&, double) {}
  GpPrediction predict(const Vector&) const { return {}; }
  double mean_derivative(const Vector&, int) const { return 0.0; }
  std::size_t size() const { return 0; }
};

// Exact r-step error of the target under u1 alone,
// e*(k+r) = y_d(k+r) - F_t(x) - G_t(x) u1. Stands in for a learned predictor
// when checking the composition algebra.
template <InputOutputForm System>
class AnalyticErrorOracle {
 public:
  explicit AnalyticErrorOracle(System target) : target_(std::move(target)) {}

  void observe(const Vector&, double) { ++seen_; }
  GpPrediction predict(const Vector& xi) const {
    const int n = target_.state_dim();
    const Vector x = xi.head(n);
    const double u1 = xi(n);
    const double yd = xi(n + 1);
    return {yd - target_.io_drift(x) - target_.io_gain(x) * u1, 0.0, false};
  }
  double mean_derivative(const Vector& xi, int dim) const {
    const int n = target_.state_dim();
    if (dim == n) return -target_.io_gain(xi.head(n));
    if (dim == n + 1) return 1.0;
    return 0.0;  // not needed by the controller
  }
  std::size_t size() const { return seen_ + 1; }

 private:
  System target_;
  std::size_t seen_ = 0;
};

enum class GainMode { kFixed, kEstimated };

struct GainPolicy {
  GainMode mode = GainMode::kEstimated;
  double alpha = 1.0;   // fixed mode
  double floor = 0.05;  // |alpha| bounds in estimated mode
  double cap = 20.0;
  double smoothing = 0.0;     // alpha <- s alpha_prev + (1 - s) alpha_raw
  double min_slope = 1e-9;    // |dF/du1| below this keeps the last valid alpha

  static GainPolicy fixed(double a) {
    GainPolicy g;
    g.mode = GainMode::kFixed;
    g.alpha = a;
    return g;
  }
};

struct ControllerOptions {
  GainPolicy gain;
  double u_max = 1e6;
  // Online correction starts once the predictor holds this many samples;
  // 0 means "the predictor's capacity" for a GP window, 1 otherwise.
  std::size_t warmup = 0;
};

struct StepRecord {
  std::size_t k = 0;
  Vector x;
  double y = 0.0;
  double y_d = 0.0;         // y_d(k); NaN until known (k < r without a harness)
  double y_d_future = 0.0;  // y_d(k+r)
  double u1 = 0.0;
  double e_p = 0.0;
  double alpha = 0.0;
  double u2 = 0.0;
  double u = 0.0;
  double variance = std::numeric_limits<double>::infinity();
  bool online_active = false;
  double e_ref = std::numeric_limits<double>::quiet_NaN();  // reference error, filled by harnesses
};

struct ObservedPair {
  std::size_t from_step;  // p - r
  std::size_t at_step;    // p
  Vector input;
  double output;
};

// u(k) = u1(k) + alpha e_p(k+r).
//
// Each call retires the record from step k - r: its realized error
// y_d(k) - y(k) is paired with {x(k-r), u(k-r), y_d(k)} and handed to the
// predictor. The query uses u1(k), so the prediction is the error the
// transferred inverse alone would leave.
template <InverseModel Inverse, ErrorPredictor Predictor = NoPredictor>
class TransferController {
 public:
  TransferController(Inverse inverse, Predictor predictor, int relative_degree, ControllerOptions options = {},
                     bool online = true)
      : inverse_(std::move(inverse)),
        predictor_(std::move(predictor)),
        r_(relative_degree),
        opt_(options),
        online_(online && !std::is_same_v<Predictor, NoPredictor>) {
    if (r_ < 1) throw InvalidArgument("TransferController: relative degree must be positive");
    if (opt_.gain.mode == GainMode::kEstimated && !(opt_.gain.floor > 0.0 && opt_.gain.cap >= opt_.gain.floor)) {
      throw InvalidArgument("TransferController: need 0 < floor <= cap");
    }
    if (opt_.warmup == 0) {
      if constexpr (std::is_same_v<Predictor, GpWindowModel>) {
        opt_.warmup = predictor_.capacity();
      } else {
        opt_.warmup = 1;
      }
    }
    last_alpha_ = opt_.gain.floor;
  }

  const Inverse& inverse() const { return inverse_; }
  const Predictor& predictor() const { return predictor_; }
  Predictor& predictor() { return predictor_; }
  int relative_degree() const { return r_; }
  bool online() const { return online_; }
  const ControllerOptions& options() const { return opt_; }
  const std::vector<StepRecord>& log() const { return log_; }
  std::vector<StepRecord>& mutable_log() { return log_; }
  std::vector<StepRecord> take_log() { return std::move(log_); }
  const std::vector<ObservedPair>& observed_pairs() const { return pairs_; }
  void keep_observed_pairs(bool keep) { keep_pairs_ = keep; }
  std::size_t gain_fallbacks() const { return gain_fallbacks_; }
  std::size_t pending() const { return pending_.size(); }

  // Chooses alpha for the query {x(k), u1(k), y_d(k+r)}.
  double select_gain(const Vector& query) {
    const GainPolicy& g = opt_.gain;
    if (g.mode == GainMode::kFixed) return g.alpha;
    const int u_dim = static_cast<int>(query.size()) - 2;
    const double slope = predictor_.size() > 0 ? predictor_.mean_derivative(query, u_dim) : 0.0;
    if (!(std::abs(slope) >= g.min_slope) || !std::isfinite(slope)) {
      ++gain_fallbacks_;
      return last_alpha_;
    }
    double raw = -1.0 / slope;
    const double mag = std::clamp(std::abs(raw), g.floor, g.cap);
    raw = std::copysign(mag, raw);
    const double a = have_alpha_ ? g.smoothing * last_alpha_ + (1.0 - g.smoothing) * raw : raw;
    last_alpha_ = a;
    have_alpha_ = true;
    return a;
  }

  double control_step(std::size_t k, const Vector& x, double y_d_future, double y_now) {
    double y_d_now = std::numeric_limits<double>::quiet_NaN();
    if (pending_.size() == static_cast<std::size_t>(r_)) {
      Pending p = std::move(pending_.front());
      pending_.pop_front();
      Vector xi(p.x.size() + 2);
      xi << p.x, p.u, p.y_d_future;
      y_d_now = p.y_d_future;
      const double e = p.y_d_future - y_now;
      if (online_) predictor_.observe(xi, e);
      if (keep_pairs_) pairs_.push_back({p.k, k, xi, e});
    }

    StepRecord rec;
    rec.k = k;
    rec.x = x;
    rec.y = y_now;
    rec.y_d_future = y_d_future;
    rec.y_d = y_d_now;
    rec.u1 = inverse_.reference(x, y_d_future);

    double u = rec.u1;
    if (online_ && predictor_.size() >= opt_.warmup) {
      Vector query(x.size() + 2);
      query << x, rec.u1, y_d_future;
      const GpPrediction pred = predictor_.predict(query);
      if (!pred.cold) {
        rec.online_active = true;
        rec.e_p = pred.mean;
        rec.variance = pred.variance;
        rec.alpha = select_gain(query);
        rec.u2 = rec.alpha * rec.e_p;
        u = rec.u1 + rec.u2;
      }
    }
    rec.u = u;
    if (!std::isfinite(u) || std::abs(u) > opt_.u_max) {
      log_.push_back(std::move(rec));
      throw DivergenceError("reference input exceeded the divergence guard", k);
    }
    pending_.push_back({k, x, u, y_d_future});
    log_.push_back(std::move(rec));
    return u;
  }

 private:
  struct Pending {
    std::size_t k;
    Vector x;
    double u;
    double y_d_future;
  };

  Inverse inverse_;
  Predictor predictor_;
  int r_;
  ControllerOptions opt_;
  bool online_;
  std::deque<Pending> pending_;
  std::vector<StepRecord> log_;
  std::vector<ObservedPair> pairs_;
  bool keep_pairs_ = false;
  double last_alpha_ = 0.0;
  bool have_alpha_ = false;
  std::size_t gain_fallbacks_ = 0;
};

// Runs the target in closed loop with the controller for `steps` steps.
// `desired(k)` must cover k up to steps + r. The controller's log gets the
// true y_d(k) written in.
template <DiscreteSystem System, typename Controller, typename Desired>
SimTrace run_closed_loop(const System& target, Controller& ctrl, Desired&& desired, std::size_t steps,
                         const Vector& x0, double dt = 0.0) {
  auto policy = [&](std::size_t k, const Vector& x, double y_d_future) {
    return ctrl.control_step(k, x, y_d_future, target.output(x));
  };
  auto fill = [&] {
    for (auto& rec : ctrl.mutable_log()) rec.y_d = desired(rec.k);
  };
  try {
    SimTrace trace = simulate(target, policy, desired, steps, x0, dt);
    fill();
    return trace;
  } catch (...) {
    fill();
    throw;
  }
}

inline void write_step_log_csv(std::ostream& os, const std::vector<StepRecord>& log, int state_dim) {
  os << "k";
  for (int i = 0; i < state_dim; ++i) os << ",x" << i;
  os << ",y,y_d,u1,e_p,alpha,u2,u,e_ref\n";
  const auto old = os.precision(17);
  for (const auto& r : log) {
    os << r.k;
    for (int i = 0; i < state_dim; ++i) os << ',' << r.x(i);
    os << ',' << r.y << ',' << r.y_d << ',' << r.u1 << ',' << r.e_p << ',' << r.alpha << ',' << r.u2 << ','
       << r.u << ',' << r.e_ref << '\n';
  }
  os.precision(old);
}

}  // namespace impromptu

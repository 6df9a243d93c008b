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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <future>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "impromptu/dynamics.hpp"
#include "impromptu/errors.hpp"
#include "impromptu/gp.hpp"
#include "impromptu/inverse.hpp"
#include "impromptu/stability.hpp"
#include "impromptu/trajectory.hpp"
#include "impromptu/transfer.hpp"

namespace impromptu {

using Json = nlohmann::ordered_json;

// The source / target pair of the reference simulation study.
inline LtiSystem reference_source_system() {
  Matrix A(2, 2);
  A << 0.0, 1.0, -0.15, 0.8;
  Vector B(2);
  B << 0.0, 1.0;
  RowVector C(2);
  C << -0.2, 1.0;
  return {A, B, C};
}

inline LtiSystem reference_target_system() {
  Matrix A(2, 2);
  A << 0.0, 1.0, -0.24, 1.0;
  Vector B(2);
  B << 0.0, 1.0;
  RowVector C(2);
  C << -0.1, 1.0;
  return {A, B, C};
}

// u(k) = y_d(k+r): the bare baseline loop.
struct PassThroughInverse {
  double reference(const Vector& /*x*/, double y_d_future) const { return y_d_future; }
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
  double rms_tracking = 0.0;
  double rms_prediction = std::numeric_limits<double>::quiet_NaN();
  std::size_t tracking_samples = 0;
  std::size_t prediction_samples = 0;
};

// Tracking RMS of y_d(k) - y(k) over logged steps k >= skip; prediction RMS
// of e_p - e_ref over steps where the online module was active.
inline Metrics metrics(const std::vector<StepRecord>& log, std::size_t skip) {
  if (log.empty()) throw InvalidArgument("metrics: empty step log");
  Metrics m;
  double st = 0.0, sp = 0.0;
  for (const auto& r : log) {
    if (r.k < skip) continue;
    if (std::isfinite(r.y_d)) {
      const double e = r.y_d - r.y;
      st += e * e;
      ++m.tracking_samples;
    }
    if (r.online_active && std::isfinite(r.e_ref)) {
      const double e = r.e_p - r.e_ref;
      sp += e * e;
      ++m.prediction_samples;
    }
  }
  if (m.tracking_samples == 0) throw InvalidArgument("metrics: no samples after the startup window");
  m.rms_tracking = std::sqrt(st / static_cast<double>(m.tracking_samples));
  if (m.prediction_samples > 0) m.rms_prediction = std::sqrt(sp / static_cast<double>(m.prediction_samples));
  return m;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class InverseMode { kAnalytic, kMlp };
enum class Strategy { kBaseline, kOffline, kOnline };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kBaseline: return "baseline";
    case Strategy::kOffline: return "offline";
    case Strategy::kOnline: return "online";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "baseline") return Strategy::kBaseline;
  if (s == "offline") return Strategy::kOffline;
  if (s == "online") return Strategy::kOnline;
  throw InvalidArgument("unknown strategy '" + s + "'");
}

struct BenchConfig {
  LtiSystem source = reference_source_system();
  LtiSystem target = reference_target_system();
  TrajectorySpec trajectory = make_test_trajectory();
  Vector x0 = Vector::Zero(2);

  InverseMode inverse_mode = InverseMode::kMlp;
  std::string model_path;  // load instead of training when set
  ExcitationGrid excitation;
  TrainingConfig training;

  GpHyperparams gp_hyper;
  GpOptions gp_options;
  ControllerOptions controller;

  bool exclude_warmup = false;
  std::uint64_t seed = 1;

  Json echo;  // canonical form, filled by config_to_json
};

namespace detail {

inline Matrix matrix_from_json(const Json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw InvalidArgument(std::string("config: ") + what + " must be a non-empty array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != cols) {
      throw InvalidArgument(std::string("config: ") + what + " is not rectangular");
    }
    for (Eigen::Index c = 0; c < cols; ++c) M(i, c) = j[i][c].get<double>();
  }
  return M;
}

inline Vector vector_from_json(const Json& j, const char* what) {
  if (!j.is_array()) throw InvalidArgument(std::string("config: ") + what + " must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

inline LtiSystem system_from_json(const Json& j, const char* what) {
  if (!j.is_object()) throw InvalidArgument(std::string("config: ") + what + " must be an object");
  const Vector c = vector_from_json(j.at("C"), "C");
  return {matrix_from_json(j.at("A"), "A"), vector_from_json(j.at("B"), "B"), RowVector(c.transpose())};
}

inline Json system_to_json(const LtiSystem& s) {
  Json j;
  Json a = Json::array();
  for (Eigen::Index i = 0; i < s.A().rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < s.A().cols(); ++c) row.push_back(s.A()(i, c));
    a.push_back(row);
  }
  j["A"] = a;
  j["B"] = std::vector<double>(s.B().data(), s.B().data() + s.B().size());
  j["C"] = std::vector<double>(s.C().data(), s.C().data() + s.C().size());
  return j;
}

template <typename T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

class Fnv1a {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= c[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void value(double d) { bytes(&d, sizeof d); }
  void value(std::uint64_t v) { bytes(&v, sizeof v); }
  void text(const std::string& s) { bytes(s.data(), s.size()); }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace detail

inline Json config_to_json(const BenchConfig& c) {
  Json j;
  j["version"] = 1;
  j["source"] = detail::system_to_json(c.source);
  j["target"] = detail::system_to_json(c.target);
  Json t;
  if (c.trajectory.is_sampled()) {
    t["kind"] = "samples";
    t["values"] = c.trajectory.sample_values();
  } else {
    t["kind"] = "sinusoids";
    Json comps = Json::array();
    for (const auto& s : c.trajectory.components()) {
      comps.push_back(Json{{"amplitude", s.amplitude}, {"omega", s.omega}, {"phase", s.phase}});
    }
    t["components"] = comps;
    t["offset"] = c.trajectory.offset();
    t["duration"] = c.trajectory.duration();
  }
  t["dt"] = c.trajectory.dt();
  j["trajectory"] = t;
  j["x0"] = std::vector<double>(c.x0.data(), c.x0.data() + c.x0.size());
  j["inverse"] = Json{{"mode", c.inverse_mode == InverseMode::kMlp ? "mlp" : "analytic"},
                      {"model_path", c.model_path},
                      {"excitation",
                       Json{{"amplitudes", c.excitation.amplitudes},
                            {"omegas", c.excitation.omegas},
                            {"duration", c.excitation.duration},
                            {"dt", c.excitation.dt},
                            {"stride", c.excitation.stride}}},
                      {"training",
                       Json{{"hidden", c.training.hidden},
                            {"max_epochs", c.training.max_epochs},
                            {"batch_size", c.training.batch_size},
                            {"learning_rate", c.training.learning_rate},
                            {"validation_fraction", c.training.validation_fraction},
                            {"patience", c.training.patience},
                            {"min_relative_improvement", c.training.min_relative_improvement}}}};
  j["online"] = Json{{"capacity", c.gp_options.capacity},
                     {"length_scales", c.gp_hyper.length_scales},
                     {"signal_variance", c.gp_hyper.signal_variance},
                     {"noise_variance", c.gp_hyper.noise_variance},
                     {"refit_stride", c.gp_options.refit_stride},
                     {"fit_noise", c.gp_options.fit_noise},
                     {"max_evaluations", c.gp_options.max_evaluations},
                     {"warmup", c.controller.warmup}};
  const auto& g = c.controller.gain;
  j["gain"] = Json{{"mode", g.mode == GainMode::kFixed ? "fixed" : "estimated"},
                   {"alpha", g.alpha},
                   {"floor", g.floor},
                   {"cap", g.cap},
                   {"smoothing", g.smoothing}};
  j["u_max"] = c.controller.u_max;
  j["exclude_warmup"] = c.exclude_warmup;
  j["seed"] = c.seed;
  return j;
}

// Unknown keys are rejected; missing keys keep the reference-study defaults.
inline BenchConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw InvalidArgument("config: top level must be an object");
  static const std::vector<std::string> known = {"version", "source",  "target", "trajectory",     "x0",  "inverse",
                                                 "online",  "gain",    "u_max",  "exclude_warmup", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw InvalidArgument("config: unknown key '" + key + "'");
    }
  }
  if (j.contains("version") && j.at("version").get<int>() != 1) throw InvalidArgument("config: unsupported version");
  BenchConfig c;
  try {
    if (j.contains("source")) c.source = detail::system_from_json(j.at("source"), "source");
    if (j.contains("target")) c.target = detail::system_from_json(j.at("target"), "target");
    if (j.contains("trajectory")) {
      const Json& t = j.at("trajectory");
      const std::string kind = t.value("kind", "test");
      const double dt = t.value("dt", kTestTrajectoryDt);
      if (kind == "test") {
        c.trajectory = make_test_trajectory(t.value("duration", kTestTrajectoryDuration), dt);
      } else if (kind == "sinusoids") {
        std::vector<SinusoidComponent> comps;
        for (const auto& s : t.at("components")) {
          comps.push_back({s.at("amplitude").get<double>(), s.at("omega").get<double>(), s.value("phase", 0.0)});
        }
        c.trajectory = TrajectorySpec::sinusoids(comps, t.value("offset", 0.0), dt, t.at("duration").get<double>());
      } else if (kind == "csv") {
        c.trajectory = ingest_csv_trajectory(t.at("path").get<std::string>(), t.value("column", std::string("yd")), dt);
      } else if (kind == "samples") {
        c.trajectory = TrajectorySpec::samples(t.at("values").get<std::vector<double>>(), dt);
      } else {
        throw InvalidArgument("config: unknown trajectory kind '" + kind + "'");
      }
    }
    c.x0 = Vector::Zero(c.target.state_dim());
    if (j.contains("x0")) c.x0 = detail::vector_from_json(j.at("x0"), "x0");
    if (j.contains("inverse")) {
      const Json& inv = j.at("inverse");
      const std::string mode = inv.value("mode", std::string("mlp"));
      if (mode == "mlp") {
        c.inverse_mode = InverseMode::kMlp;
      } else if (mode == "analytic") {
        c.inverse_mode = InverseMode::kAnalytic;
      } else {
        throw InvalidArgument("config: inverse.mode must be 'mlp' or 'analytic'");
      }
      detail::read_opt(inv, "model_path", c.model_path);
      if (inv.contains("excitation")) {
        const Json& e = inv.at("excitation");
        detail::read_opt(e, "amplitudes", c.excitation.amplitudes);
        detail::read_opt(e, "omegas", c.excitation.omegas);
        detail::read_opt(e, "duration", c.excitation.duration);
        detail::read_opt(e, "dt", c.excitation.dt);
        detail::read_opt(e, "stride", c.excitation.stride);
      }
      if (inv.contains("training")) {
        const Json& tr = inv.at("training");
        detail::read_opt(tr, "hidden", c.training.hidden);
        detail::read_opt(tr, "max_epochs", c.training.max_epochs);
        detail::read_opt(tr, "batch_size", c.training.batch_size);
        detail::read_opt(tr, "learning_rate", c.training.learning_rate);
        detail::read_opt(tr, "validation_fraction", c.training.validation_fraction);
        detail::read_opt(tr, "patience", c.training.patience);
        detail::read_opt(tr, "min_relative_improvement", c.training.min_relative_improvement);
      }
    }
    if (j.contains("online")) {
      const Json& o = j.at("online");
      detail::read_opt(o, "capacity", c.gp_options.capacity);
      detail::read_opt(o, "length_scales", c.gp_hyper.length_scales);
      detail::read_opt(o, "signal_variance", c.gp_hyper.signal_variance);
      detail::read_opt(o, "noise_variance", c.gp_hyper.noise_variance);
      detail::read_opt(o, "refit_stride", c.gp_options.refit_stride);
      detail::read_opt(o, "fit_noise", c.gp_options.fit_noise);
      detail::read_opt(o, "max_evaluations", c.gp_options.max_evaluations);
      detail::read_opt(o, "warmup", c.controller.warmup);
    }
    if (j.contains("gain")) {
      const Json& g = j.at("gain");
      const std::string mode = g.value("mode", std::string("estimated"));
      if (mode == "fixed") {
        c.controller.gain.mode = GainMode::kFixed;
      } else if (mode == "estimated") {
        c.controller.gain.mode = GainMode::kEstimated;
      } else {
        throw InvalidArgument("config: gain.mode must be 'fixed' or 'estimated'");
      }
      detail::read_opt(g, "alpha", c.controller.gain.alpha);
      detail::read_opt(g, "floor", c.controller.gain.floor);
      detail::read_opt(g, "cap", c.controller.gain.cap);
      detail::read_opt(g, "smoothing", c.controller.gain.smoothing);
    }
    detail::read_opt(j, "u_max", c.controller.u_max);
    detail::read_opt(j, "exclude_warmup", c.exclude_warmup);
    detail::read_opt(j, "seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  if (c.x0.size() != c.target.state_dim()) throw InvalidArgument("config: x0 does not match the target state");
  if (c.source.state_dim() != c.target.state_dim()) throw InvalidArgument("config: state dimensions differ");
  c.gp_hyper.validate(c.target.state_dim() + 2);
  c.echo = config_to_json(c);
  return c;
}

inline std::string config_digest(const BenchConfig& c) {
  detail::Fnv1a h;
  h.text(config_to_json(c).dump());
  h.value(c.seed);
  return detail::hex64(h.digest());
}

// ---------------------------------------------------------------------------
// Inverse construction
// ---------------------------------------------------------------------------

using InverseVariant = std::variant<AnalyticInverse<LtiSystem>, MlpInverseModel>;

struct PreparedInverse {
  InverseVariant inverse;
  std::optional<TrainingReport> training;
  std::size_t dataset_size = 0;
};

inline InverseDataset source_inverse_dataset(const LtiSystem& source, const ExcitationGrid& grid) {
  const auto traces = excite_source(source, grid);
  return build_inverse_dataset(traces, source.relative_degree(), grid.stride);
}

inline PreparedInverse prepare_inverse(const BenchConfig& c) {
  if (c.inverse_mode == InverseMode::kAnalytic) return {AnalyticInverse<LtiSystem>(c.source), std::nullopt, 0};
  if (!c.model_path.empty()) {
    MlpInverseModel m = load_mlp(c.model_path);
    if (m.input_dim() != c.source.state_dim() + 1) throw InvalidArgument("model input dimension does not match");
    return {std::move(m), std::nullopt, 0};
  }
  const InverseDataset data = source_inverse_dataset(c.source, c.excitation);
  TrainedInverse trained = train_mlp(data, c.training, c.seed);
  return {std::move(trained.model), trained.report, data.size()};
}

// ---------------------------------------------------------------------------
// Strategy runs
// ---------------------------------------------------------------------------

struct StrategyResult {
  Strategy strategy = Strategy::kBaseline;
  bool diverged = false;
  std::size_t diverged_step = 0;
  std::string error;
  Metrics metrics;
  double rms_after_warmup = std::numeric_limits<double>::quiet_NaN();  // k >= max(r, N)
  std::vector<StepRecord> log;
  std::vector<ResidualSample> residuals;  // online runs only
  std::size_t gain_fallbacks = 0;
  std::size_t fit_failures = 0;
  double wall_seconds = 0.0;
};

struct RunOverrides {
  std::optional<GainPolicy> gain;
};

namespace detail {

template <typename Controller>
StrategyResult drive(Strategy which, const BenchConfig& c, Controller& ctrl) {
  StrategyResult res;
  res.strategy = which;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t steps = c.trajectory.steps();
  try {
    run_closed_loop(c.target, ctrl, c.trajectory, steps, c.x0, c.trajectory.dt());
  } catch (const DivergenceError& e) {
    res.diverged = true;
    res.diverged_step = e.step();
    res.error = e.what();
  }
  res.log = ctrl.take_log();
  res.gain_fallbacks = ctrl.gain_fallbacks();
  const LtiSystem& t = c.target;
  for (auto& r : res.log) {
    r.e_ref = r.y_d_future - t.io_drift(r.x) - t.io_gain(r.x) * r.u1;
    if (r.online_active) {
      res.residuals.push_back({std::abs(r.e_ref - r.e_p), std::abs(r.y_d_future), r.x.norm()});
    }
  }
  const auto r = static_cast<std::size_t>(c.target.relative_degree());
  const std::size_t warm = std::max(r, c.gp_options.capacity);
  const std::size_t skip = c.exclude_warmup && which == Strategy::kOnline ? warm : r;
  if (!res.log.empty()) {
    try {
      res.metrics = metrics(res.log, skip);
      res.rms_after_warmup = metrics(res.log, warm).rms_tracking;
    } catch (const InvalidArgument&) {
      res.metrics.rms_tracking = std::numeric_limits<double>::quiet_NaN();
    }
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace detail

inline StrategyResult run_strategy(Strategy which, const BenchConfig& c, const InverseVariant& inverse,
                                   const RunOverrides& over = {}) {
  ControllerOptions opts = c.controller;
  if (over.gain) opts.gain = *over.gain;
  const int r = c.target.relative_degree();
  if (which == Strategy::kBaseline) {
    TransferController<PassThroughInverse> ctrl(PassThroughInverse{}, NoPredictor{}, r, opts);
    return detail::drive(which, c, ctrl);
  }
  return std::visit(
      [&](const auto& inv) {
        using Inv = std::decay_t<decltype(inv)>;
        if (which == Strategy::kOffline) {
          TransferController<Inv> ctrl(inv, NoPredictor{}, r, opts);
          return detail::drive(which, c, ctrl);
        }
        GpWindowModel gp(c.target.state_dim() + 2, c.gp_hyper, c.gp_options);
        TransferController<Inv, GpWindowModel> ctrl(inv, std::move(gp), r, opts);
        StrategyResult res = detail::drive(which, c, ctrl);
        res.fit_failures = ctrl.predictor().fit_failures();
        return res;
      },
      inverse);
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; results keep index order.
template <typename Fn>
auto parallel_map(std::size_t n, Fn fn, unsigned workers = std::thread::hardware_concurrency()) {
  using R = std::invoke_result_t<Fn, std::size_t>;
  std::vector<R> out;
  out.reserve(n);
  workers = std::max(1u, workers);
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(fn(i));
    return out;
  }
  std::vector<std::future<R>> pending;
  for (std::size_t i = 0; i < n; ++i) {
    if (pending.size() == workers) {
      out.push_back(pending.front().get());
      pending.erase(pending.begin());
    }
    pending.push_back(std::async(std::launch::async, fn, i));
  }
  for (auto& f : pending) out.push_back(f.get());
  return out;
}

inline std::string log_digest(const std::vector<StepRecord>& log) {
  detail::Fnv1a h;
  for (const auto& r : log) {
    h.value(static_cast<std::uint64_t>(r.k));
    for (Eigen::Index i = 0; i < r.x.size(); ++i) h.value(r.x(i));
    for (double v : {r.y, r.y_d, r.u1, r.e_p, r.alpha, r.u2, r.u}) h.value(v);
  }
  return detail::hex64(h.digest());
}

struct RunReport {
  std::string config_digest;
  std::uint64_t seed = 0;
  std::vector<StrategyResult> strategies;
  std::optional<TrainingReport> training;
  std::string result_digest;
  double wall_seconds = 0.0;
  Json config;

  const StrategyResult& get(Strategy s) const {
    for (const auto& r : strategies) {
      if (r.strategy == s) return r;
    }
    throw InvalidArgument("RunReport: strategy not present");
  }
};

inline std::string result_digest(const std::vector<StrategyResult>& results) {
  detail::Fnv1a h;
  for (const auto& r : results) h.text(log_digest(r.log));
  return detail::hex64(h.digest());
}

inline RunReport run_strategies(const BenchConfig& c, const std::vector<Strategy>& which) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport rep;
  rep.config_digest = config_digest(c);
  rep.seed = c.seed;
  rep.config = config_to_json(c);
  const bool needs_inverse = std::any_of(which.begin(), which.end(), [](Strategy s) { return s != Strategy::kBaseline; });
  std::optional<PreparedInverse> inv;
  if (needs_inverse) {
    inv = prepare_inverse(c);
    rep.training = inv->training;
  }
  const InverseVariant fallback = AnalyticInverse<LtiSystem>(c.source);
  rep.strategies = parallel_map(which.size(), [&](std::size_t i) {
    return run_strategy(which[i], c, inv ? inv->inverse : fallback);
  });
  rep.result_digest = result_digest(rep.strategies);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// Baseline, offline-only and offline + online on the same trajectory and x0.
inline RunReport run_comparison(const BenchConfig& c) {
  return run_strategies(c, {Strategy::kBaseline, Strategy::kOffline, Strategy::kOnline});
}

inline Json strategy_json(const StrategyResult& r) {
  Json j;
  j["strategy"] = to_string(r.strategy);
  j["diverged"] = r.diverged;
  if (r.diverged) {
    j["diverged_step"] = r.diverged_step;
    j["error"] = r.error;
  }
  j["rms_tracking"] = r.metrics.rms_tracking;
  if (std::isfinite(r.metrics.rms_prediction)) {
    j["rms_prediction"] = r.metrics.rms_prediction;
  } else {
    j["rms_prediction"] = nullptr;
  }
  if (std::isfinite(r.rms_after_warmup)) {
    j["rms_tracking_after_warmup"] = r.rms_after_warmup;
  } else {
    j["rms_tracking_after_warmup"] = nullptr;
  }
  j["tracking_samples"] = r.metrics.tracking_samples;
  j["prediction_samples"] = r.metrics.prediction_samples;
  j["steps"] = r.log.size();
  j["gain_fallbacks"] = r.gain_fallbacks;
  j["fit_failures"] = r.fit_failures;
  j["log_digest"] = log_digest(r.log);
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

inline Json report_json(const RunReport& rep) {
  Json j;
  j["version"] = 1;
  j["config_digest"] = rep.config_digest;
  j["seed"] = rep.seed;
  j["result_digest"] = rep.result_digest;
  Json s = Json::array();
  for (const auto& r : rep.strategies) s.push_back(strategy_json(r));
  j["strategies"] = s;
  if (rep.training) {
    j["training"] = Json{{"epochs_run", rep.training->epochs_run},
                         {"best_epoch", rep.training->best_epoch},
                         {"train_rmse", rep.training->train_rmse},
                         {"validation_rmse", rep.training->validation_rmse},
                         {"early_stopped", rep.training->early_stopped}};
  }
  j["wall_seconds"] = rep.wall_seconds;
  j["config"] = rep.config;
  return j;
}

// ---------------------------------------------------------------------------
// Alpha sweep
// ---------------------------------------------------------------------------

struct SweepPoint {
  double alpha = 0.0;
  bool bounded = true;
  std::size_t diverged_step = 0;
  double rms_tracking = 0.0;
  Lemma1Result lemma;
};

struct SweepReport {
  SimilarityVector similarity;
  IssGains iss;
  PredictionBudget prediction_budget;
  StabilityBudget budget;
  std::vector<SweepPoint> points;
  std::optional<double> instability_onset;  // smallest swept alpha that diverged
};

// Residual log of the estimated-gain online run on this configuration.
inline PredictionBudget fit_budget_from_run(const BenchConfig& c, const InverseVariant& inverse) {
  const StrategyResult res = run_strategy(Strategy::kOnline, c, inverse);
  if (res.residuals.empty()) throw InvalidArgument("fit_budget_from_run: online module never became active");
  return fit_prediction_budget(res.residuals);
}

// Fixed-gain online runs for every alpha, each checked against the stability
// condition built from the target's ISS gains and a fitted prediction budget.
inline SweepReport alpha_sweep(const BenchConfig& c, const std::vector<double>& alphas,
                               std::optional<PredictionBudget> budget = std::nullopt) {
  SweepReport rep;
  rep.similarity = similarity(c.source, c.target);
  rep.iss = iss_gains(c.target);
  const PreparedInverse inv = prepare_inverse(c);
  rep.prediction_budget = budget ? *budget : fit_budget_from_run(c, inv.inverse);
  rep.budget = make_stability_budget(c.source, c.target, rep.iss, rep.prediction_budget);
  rep.points = parallel_map(alphas.size(), [&](std::size_t i) {
    SweepPoint p;
    p.alpha = alphas[i];
    RunOverrides over;
    over.gain = GainPolicy::fixed(alphas[i]);
    const StrategyResult res = run_strategy(Strategy::kOnline, c, inv.inverse, over);
    p.bounded = !res.diverged;
    p.diverged_step = res.diverged_step;
    p.rms_tracking = res.metrics.rms_tracking;
    p.lemma = lemma1_check(c.source, c.target, rep.budget, alphas[i]);
    return p;
  });
  for (const auto& p : rep.points) {
    if (!p.bounded && (!rep.instability_onset || p.alpha < *rep.instability_onset)) rep.instability_onset = p.alpha;
  }
  return rep;
}

inline Json sweep_json(const SweepReport& rep, double report_alpha = 0.0) {
  Json j;
  j["version"] = 1;
  j["stability"] = stability_report_json(rep.similarity, rep.budget,
                                         Lemma1Result{Lemma1Verdict::kVacuous, 0.0, rep.budget.beta4}, report_alpha);
  j["stability"].erase("alpha");
  j["stability"].erase("verdict");
  j["stability"].erase("margin");
  Json pts = Json::array();
  for (const auto& p : rep.points) {
    Json q;
    q["alpha"] = p.alpha;
    q["bounded"] = p.bounded;
    if (!p.bounded) q["diverged_step"] = p.diverged_step;
    q["rms_tracking"] = p.rms_tracking;
    q["lemma1"] = to_string(p.lemma.verdict);
    q["margin"] = p.lemma.margin;
    q["above_alpha_max"] = !rep.budget.alpha_unbounded && std::abs(p.alpha) >= rep.budget.alpha_max;
    pts.push_back(q);
  }
  j["points"] = pts;
  if (rep.instability_onset) {
    j["instability_onset"] = *rep.instability_onset;
  } else {
    j["instability_onset"] = nullptr;
  }
  return j;
}

}  // namespace impromptu

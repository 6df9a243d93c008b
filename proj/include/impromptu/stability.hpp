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
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <json.hpp>

#include "impromptu/dynamics.hpp"
#include "impromptu/errors.hpp"
#include "impromptu/types.hpp"

namespace impromptu {

// S = [S1 S2]: input-gain and state-gain mismatch of the r-step output maps.
struct SimilarityVector {
  double S1 = 0.0;  // 1 - B_t / B_s
  RowVector S2;     // A_t - (B_t / B_s) A_s
  double norm_S2 = 0.0;

  bool is_zero(double tol = 1e-12) const { return std::abs(S1) <= tol && norm_S2 <= tol; }
};

inline SimilarityVector similarity(const LtiSystem& source, const LtiSystem& target) {
  if (source.state_dim() != target.state_dim()) {
    throw AssumptionError("similarity: source and target state dimensions differ");
  }
  if (source.relative_degree() != target.relative_degree()) {
    throw AssumptionError("similarity: source and target relative degrees differ");
  }
  if (!(std::abs(source.lifted_B()) >= kSingularGainTol)) {
    throw SingularGainError("similarity: source input gain vanishes");
  }
  const double ratio = target.lifted_B() / source.lifted_B();
  SimilarityVector s;
  s.S1 = 1.0 - ratio;
  s.S2 = target.lifted_A() - ratio * source.lifted_A();
  s.norm_S2 = s.S2.norm();
  return s;
}

inline double spectral_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues()(0);
}

// Gains of ||x||_inf <= L1 ||u||_inf + L2 ||x0||.
struct IssGains {
  double L1 = 0.0;
  double L2 = 0.0;
  std::size_t terms = 0;       // summed terms before the tail bound
  std::size_t contraction = 0;  // m with ||A^m|| < 1
  double tail = 0.0;
};

// L1 = sum_j ||A^j B||, summed until a term drops below `tol`, plus a tail
// bound from ||A^m|| = q < 1:
//   sum_{j >= J} ||A^j B|| <= (sum_{i < m} ||A^(J+i) B||) / (1 - q).
// L2 = sup_k ||A^k||, which is attained for k <= max(J, m).
inline IssGains iss_gains(const LtiSystem& sys, double tol = 1e-12, std::size_t max_power = 100000) {
  if (!(tol > 0.0)) throw InvalidArgument("iss_gains: tol must be positive");
  if (!sys.is_schur_stable()) throw AssumptionError("iss_gains: A is not Schur stable, system is not ISS");
  const int n = sys.state_dim();
  const Matrix& A = sys.A();

  IssGains g;
  Matrix P = Matrix::Identity(n, n);
  double q = 1.0;
  double l2 = 1.0;
  for (std::size_t m = 1; m <= max_power; ++m) {
    P = P * A;
    const double norm = spectral_norm(P);
    l2 = std::max(l2, norm);
    if (norm < 1.0) {
      g.contraction = m;
      q = norm;
      break;
    }
  }
  if (g.contraction == 0) throw AnalysisError("iss_gains: no contracting power of A found");

  double sum = 0.0;
  Vector v = sys.B();
  Matrix Ak = Matrix::Identity(n, n);
  std::size_t j = 0;
  for (;; ++j) {
    const double term = v.norm();
    if (term < tol && j > 0) break;
    sum += term;
    v = A * v;
    Ak = Ak * A;
    l2 = std::max(l2, spectral_norm(Ak));
    if (j > max_power) throw AnalysisError("iss_gains: series did not reach the truncation tolerance");
  }
  g.terms = j;
  double block = 0.0;
  for (std::size_t i = 0; i < g.contraction; ++i) {
    block += v.norm();
    v = A * v;
  }
  g.tail = block / (1.0 - q);
  g.L1 = sum + g.tail;
  g.L2 = l2;
  return g;
}

struct ResidualSample {
  double lambda;   // |e* - e_p|
  double yd_norm;  // ||y_d(k+r)||
  double x_norm;   // ||x(k)||
};

struct PredictionBudget {
  double beta1 = 0.0;
  double beta2 = 0.0;
  double beta3 = 0.0;
};

// Smallest envelope lambda <= b1 |y_d| + b2 ||x|| + b3 (b >= 0) holding on
// every sample, minimizing the envelope's mean over the log. Solved as the
// dual LP (3 constraints, one column per sample) by the simplex method; the
// simplex multipliers at the optimum are the coefficients.
inline PredictionBudget fit_prediction_budget(std::span<const ResidualSample> log) {
  if (log.empty()) throw InvalidArgument("fit_prediction_budget: residual log is empty");
  const std::size_t N = log.size();
  for (const auto& s : log) {
    if (!std::isfinite(s.lambda) || !std::isfinite(s.yd_norm) || !std::isfinite(s.x_norm) || s.yd_norm < 0.0 ||
        s.x_norm < 0.0) {
      throw InvalidArgument("fit_prediction_budget: non-finite or negative entry");
    }
  }
  auto column = [&](std::size_t i) -> Eigen::Vector3d {
    return {log[i].yd_norm, log[i].x_norm, 1.0};
  };
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  double scale = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    c += column(i);
    scale = std::max(scale, std::abs(log[i].lambda));
  }
  c /= static_cast<double>(N);
  if (scale == 0.0) return {};
  const double tol = 1e-12 * std::max(1.0, scale);

  // Columns 0..N-1 are samples, N..N+2 slacks.
  auto col = [&](std::size_t j) -> Eigen::Vector3d {
    return j < N ? column(j) : Eigen::Vector3d::Unit(static_cast<Eigen::Index>(j - N));
  };
  auto obj = [&](std::size_t j) { return j < N ? log[j].lambda : 0.0; };

  std::array<std::size_t, 3> basis{N, N + 1, N + 2};
  Eigen::Vector3d y = Eigen::Vector3d::Zero();
  bool bland = false;
  for (std::size_t iter = 0; iter < 50 * (N + 3); ++iter) {
    Eigen::Matrix3d Bm;
    Eigen::Vector3d cb;
    for (int r = 0; r < 3; ++r) {
      Bm.col(r) = col(basis[static_cast<std::size_t>(r)]);
      cb(r) = obj(basis[static_cast<std::size_t>(r)]);
    }
    const Eigen::PartialPivLU<Eigen::Matrix3d> lu(Bm);
    y = lu.transpose().solve(cb);  // simplex multipliers, the primal coefficients

    std::size_t enter = N + 3;
    double best = tol;
    for (std::size_t j = 0; j < N + 3; ++j) {
      const double reduced = obj(j) - y.dot(col(j));
      if (reduced > best) {
        enter = j;
        if (bland) break;
        best = reduced;
      }
    }
    if (enter == N + 3) break;

    const Eigen::Vector3d xb = lu.solve(c);
    const Eigen::Vector3d d = lu.solve(col(enter));
    int leave = -1;
    double ratio = std::numeric_limits<double>::infinity();
    for (int r = 0; r < 3; ++r) {
      if (d(r) > 1e-14) {
        const double t = std::max(0.0, xb(r)) / d(r);
        if (t < ratio - 1e-15 || (t <= ratio + 1e-15 && leave >= 0 &&
                                  basis[static_cast<std::size_t>(r)] < basis[static_cast<std::size_t>(leave)])) {
          ratio = t;
          leave = r;
        }
      }
    }
    if (leave < 0) throw AnalysisError("fit_prediction_budget: LP is unbounded");
    if (ratio == 0.0) bland = true;  // degenerate pivot; switch to Bland's rule
    basis[static_cast<std::size_t>(leave)] = enter;
  }

  PredictionBudget b{std::max(0.0, y(0)), std::max(0.0, y(1)), std::max(0.0, y(2))};
  double worst = 0.0;
  for (const auto& s : log) worst = std::max(worst, s.lambda - (b.beta1 * s.yd_norm + b.beta2 * s.x_norm + b.beta3));
  if (worst > 0.0) b.beta3 += worst;
  return b;
}

struct StabilityBudget {
  double L1 = 0.0;
  double L2 = 0.0;
  double beta1 = 0.0, beta2 = 0.0, beta3 = 0.0;
  double beta4 = 0.0;          // 1 - L1 ||A_s / B_s||
  double source_ratio_norm = 0.0;
  double alpha_max = 0.0;
  bool alpha_unbounded = false;
};

inline double source_ratio_norm(const LtiSystem& source) {
  if (!(std::abs(source.lifted_B()) >= kSingularGainTol)) {
    throw SingularGainError("source input gain vanishes");
  }
  return (source.lifted_A() / source.lifted_B()).norm();
}

inline StabilityBudget make_stability_budget(const LtiSystem& source, const LtiSystem& target, const IssGains& iss,
                                             const PredictionBudget& pb) {
  StabilityBudget b;
  b.L1 = iss.L1;
  b.L2 = iss.L2;
  b.beta1 = pb.beta1;
  b.beta2 = pb.beta2;
  b.beta3 = pb.beta3;
  b.source_ratio_norm = source_ratio_norm(source);
  b.beta4 = 1.0 - b.L1 * b.source_ratio_norm;
  const double denom = similarity(source, target).norm_S2 + b.beta2;
  if (b.beta4 <= 0.0) {
    b.alpha_max = 0.0;
  } else if (denom > 0.0) {
    b.alpha_max = b.beta4 / (b.L1 * denom);
  } else {
    b.alpha_max = std::numeric_limits<double>::infinity();
    b.alpha_unbounded = true;
  }
  return b;
}

enum class Lemma1Verdict { kSatisfied, kViolated, kVacuous };

inline const char* to_string(Lemma1Verdict v) {
  switch (v) {
    case Lemma1Verdict::kSatisfied: return "satisfied";
    case Lemma1Verdict::kViolated: return "violated";
    case Lemma1Verdict::kVacuous: return "vacuous";
  }
  return "?";
}

struct Lemma1Result {
  Lemma1Verdict verdict = Lemma1Verdict::kVacuous;
  double margin = 0.0;  // beta4 / L1 - |alpha| (||S2|| + beta2)
  double beta4 = 0.0;
};

// |alpha| (||S2|| + beta2) < beta4 / L1, beta4 recomputed from L1 and the
// source gains. Vacuous when beta4 <= 0.
inline Lemma1Result lemma1_check(const LtiSystem& source, const LtiSystem& target, const StabilityBudget& budget,
                                 double alpha) {
  if (!(budget.L1 > 0.0)) throw InvalidArgument("lemma1_check: L1 must be positive");
  Lemma1Result res;
  res.beta4 = 1.0 - budget.L1 * source_ratio_norm(source);
  const double lhs = std::abs(alpha) * (similarity(source, target).norm_S2 + budget.beta2);
  const double rhs = res.beta4 / budget.L1;
  res.margin = rhs - lhs;
  if (res.beta4 <= 0.0) {
    res.verdict = Lemma1Verdict::kVacuous;
  } else {
    res.verdict = lhs < rhs ? Lemma1Verdict::kSatisfied : Lemma1Verdict::kViolated;
  }
  return res;
}

struct NonlinearSimilarity {
  double theta1;  // G_t / G_s
  double theta2;  // F_t - theta1 F_s
};

// y_t(k+r) = theta1(x) y_s(k+r) + theta2(x) for the same (x, u).
template <InputOutputForm Source, InputOutputForm Target>
NonlinearSimilarity nonlinear_similarity(const Source& source, const Target& target, const Vector& x) {
  const double gs = source.io_gain(x);
  if (!(std::abs(gs) >= kSingularGainTol)) throw SingularGainError("nonlinear_similarity: source gain vanishes at x");
  const double t1 = target.io_gain(x) / gs;
  return {t1, target.io_drift(x) - t1 * source.io_drift(x)};
}

inline nlohmann::ordered_json stability_report_json(const SimilarityVector& s, const StabilityBudget& b,
                                                    const Lemma1Result& verdict, double alpha) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["S1"] = s.S1;
  j["S2"] = std::vector<double>(s.S2.data(), s.S2.data() + s.S2.size());
  j["norm_S2"] = s.norm_S2;
  j["source_ratio_norm"] = b.source_ratio_norm;
  j["L1"] = b.L1;
  j["L2"] = b.L2;
  j["beta1"] = b.beta1;
  j["beta2"] = b.beta2;
  j["beta3"] = b.beta3;
  j["beta4"] = b.beta4;
  if (b.alpha_unbounded) {
    j["alpha_max"] = "inf";
  } else {
    j["alpha_max"] = b.alpha_max;
  }
  j["alpha"] = alpha;
  j["verdict"] = to_string(verdict.verdict);
  j["margin"] = verdict.margin;
  return j;
}

}  // namespace impromptu

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
#include <complex>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "impromptu/errors.hpp"
#include "impromptu/types.hpp"

namespace impromptu {

// Smallest r >= 1 with |C A^(r-1) B| > tol. Throws RelativeDegreeError when no
// such r <= n exists.
inline int relative_degree(const Matrix& A, const Vector& B, const RowVector& C,
                           double tol = kRelativeDegreeTol) {
  const auto n = A.rows();
  Vector v = B;  // A^(j-1) B
  for (Eigen::Index j = 1; j <= n; ++j) {
    if (std::abs(C.dot(v)) > tol) return static_cast<int>(j);
    v = A * v;
  }
  throw RelativeDegreeError("relative degree is not defined: C A^(j-1) B vanishes for all j <= n");
}

struct LiftedGains {
  RowVector state_gain;  // C A^r
  double input_gain;     // C A^(r-1) B
};

// Discrete-time SISO system x(k+1) = A x(k) + B u(k), y(k) = C x(k).
//
// The relative degree and the r-step-ahead gains are derived on construction
// and the matrices are immutable afterwards, so the derived quantities can
// never drift out of sync.
class LtiSystem {
 public:
  LtiSystem(Matrix A, Vector B, RowVector C) : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)) {
    const auto n = A_.rows();
    if (n == 0 || A_.cols() != n || B_.size() != n || C_.size() != n) {
      throw InvalidArgument("LtiSystem: expected A n x n, B n x 1, C 1 x n");
    }
    if (!A_.allFinite() || !B_.allFinite() || !C_.allFinite()) {
      throw InvalidArgument("LtiSystem: non-finite matrix entry");
    }
    r_ = impromptu::relative_degree(A_, B_, C_);
    Matrix Ap = Matrix::Identity(n, n);
    for (int i = 0; i < r_ - 1; ++i) Ap = Ap * A_;
    lifted_B_ = C_.dot(Ap * B_);
    lifted_A_ = C_ * (Ap * A_);
  }

  const Matrix& A() const { return A_; }
  const Vector& B() const { return B_; }
  const RowVector& C() const { return C_; }
  int state_dim() const { return static_cast<int>(A_.rows()); }
  int relative_degree() const { return r_; }
  const RowVector& lifted_A() const { return lifted_A_; }
  double lifted_B() const { return lifted_B_; }

  Vector step(const Vector& x, double u, std::size_t k = 0) const {
    if (!x.allFinite() || !std::isfinite(u)) throw DivergenceError("non-finite state or input", k);
    Vector next = A_ * x + B_ * u;
    if (!next.allFinite()) throw DivergenceError("state left the finite range", k);
    return next;
  }
  double output(const Vector& x) const { return C_.dot(x); }

  // y(k+r) = io_drift(x(k)) + io_gain(x(k)) u(k).
  double io_drift(const Vector& x) const { return lifted_A_.dot(x); }
  double io_gain(const Vector& /*x*/) const { return lifted_B_; }

  double spectral_radius() const {
    return A_.eigenvalues().cwiseAbs().maxCoeff();
  }
  bool is_schur_stable() const { return spectral_radius() < 1.0; }

 private:
  Matrix A_;
  Vector B_;
  RowVector C_;
  int r_ = 1;
  RowVector lifted_A_;
  double lifted_B_ = 0.0;
};

inline LiftedGains lifted_gains(const LtiSystem& sys) { return {sys.lifted_A(), sys.lifted_B()}; }

struct PoleZeroMap {
  std::vector<std::complex<double>> poles;
  std::vector<std::complex<double>> zeros;
  bool minimum_phase = false;
};

// Poles are the eigenvalues of A. Transmission zeros are the finite
// generalized eigenvalues of the pencil ([A B; C 0], [I 0; 0 0]).
inline PoleZeroMap zeros_poles(const LtiSystem& sys) {
  const int n = sys.state_dim();
  PoleZeroMap out;

  Eigen::EigenSolver<Matrix> eig(sys.A(), false);
  if (eig.info() != Eigen::Success) throw AnalysisError("eigenvalue solver failed on A");
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) out.poles.push_back(eig.eigenvalues()(i));

  Matrix M = Matrix::Zero(n + 1, n + 1);
  Matrix E = Matrix::Zero(n + 1, n + 1);
  M.topLeftCorner(n, n) = sys.A();
  M.topRightCorner(n, 1) = sys.B();
  M.bottomLeftCorner(1, n) = sys.C();
  E.topLeftCorner(n, n).setIdentity();
  Eigen::GeneralizedEigenSolver<Matrix> gen(M, E, false);
  if (gen.info() != Eigen::Success) throw AnalysisError("generalized eigenvalue solver failed");
  const double scale = std::max(1.0, M.norm());
  for (Eigen::Index i = 0; i < gen.alphas().size(); ++i) {
    const double beta = gen.betas()(i);
    if (std::abs(beta) > 1e-10 * scale) out.zeros.push_back(gen.alphas()(i) / beta);
  }

  auto by_value = [](const std::complex<double>& a, const std::complex<double>& b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  };
  std::sort(out.poles.begin(), out.poles.end(), by_value);
  std::sort(out.zeros.begin(), out.zeros.end(), by_value);
  out.minimum_phase = std::all_of(out.zeros.begin(), out.zeros.end(),
                                  [](const std::complex<double>& z) { return std::abs(z) < 1.0; });
  return out;
}

// Spot checks of a supplied input-output form against r steps of f, g, h.
struct NonlinearValidation {
  int samples = 32;
  double state_scale = 1.0;
  double input_scale = 1.0;
  double tol = 1e-8;  // relative to 1 + |y|
  std::uint64_t seed = 7;
};

// Nonlinear affine-in-input system x(k+1) = f(x) + g(x) u, y = h(x), with an
// optional caller-supplied r-step input-output form y(k+r) = F(x) + G(x) u.
class NonlinearSystem {
 public:
  using StateMap = std::function<Vector(const Vector&)>;
  using ScalarMap = std::function<double(const Vector&)>;

  using Validation = NonlinearValidation;

  NonlinearSystem(int n, int r, StateMap f, StateMap g, ScalarMap h, ScalarMap F = {}, ScalarMap G = {},
                  Validation validation = {})
      : n_(n), r_(r), f_(std::move(f)), g_(std::move(g)), h_(std::move(h)), F_(std::move(F)), G_(std::move(G)) {
    if (n_ <= 0 || r_ <= 0) throw InvalidArgument("NonlinearSystem: n and r must be positive");
    if (!f_ || !g_ || !h_) throw InvalidArgument("NonlinearSystem: f, g and h are required");
    if (static_cast<bool>(F_) != static_cast<bool>(G_)) {
      throw InvalidArgument("NonlinearSystem: F and G must be supplied together");
    }
    if (F_) validate_io_form(validation);
  }

  int state_dim() const { return n_; }
  int relative_degree() const { return r_; }
  bool has_io_form() const { return static_cast<bool>(F_); }

  Vector step(const Vector& x, double u, std::size_t k = 0) const {
    if (!x.allFinite() || !std::isfinite(u)) throw DivergenceError("non-finite state or input", k);
    Vector next = f_(x) + g_(x) * u;
    if (next.size() != n_) throw InvalidArgument("NonlinearSystem: f/g returned wrong dimension");
    if (!next.allFinite()) throw DivergenceError("state left the finite range", k);
    return next;
  }
  double output(const Vector& x) const { return h_(x); }

  double io_drift(const Vector& x) const {
    if (!F_) throw InvalidArgument("NonlinearSystem: input-output form not supplied");
    return F_(x);
  }
  double io_gain(const Vector& x) const {
    if (!G_) throw InvalidArgument("NonlinearSystem: input-output form not supplied");
    return G_(x);
  }

  // h(f^(r-1)(f(x) + g(x) u)), the output r steps ahead.
  double output_ahead(const Vector& x, double u) const {
    Vector z = f_(x) + g_(x) * u;
    for (int i = 1; i < r_; ++i) z = f_(z);
    return h_(z);
  }

 private:
  void validate_io_form(const Validation& v) const {
    std::mt19937_64 rng(v.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int s = 0; s < v.samples; ++s) {
      Vector x(n_);
      for (int i = 0; i < n_; ++i) x(i) = v.state_scale * unit(rng);
      const double u = v.input_scale * unit(rng);
      const double direct = output_ahead(x, u);
      const double lifted = F_(x) + G_(x) * u;
      if (!(std::abs(direct - lifted) <= v.tol * (1.0 + std::abs(direct)))) {
        throw InvalidArgument("NonlinearSystem: F(x) + G(x) u disagrees with the simulated r-step output");
      }
    }
  }

  int n_;
  int r_;
  StateMap f_, g_;
  ScalarMap h_, F_, G_;
};

template <typename S>
concept DiscreteSystem = requires(const S& s, const Vector& x, double u, std::size_t k) {
  { s.state_dim() } -> std::convertible_to<int>;
  { s.relative_degree() } -> std::convertible_to<int>;
  { s.step(x, u, k) } -> std::convertible_to<Vector>;
  { s.output(x) } -> std::convertible_to<double>;
};

template <typename S>
concept InputOutputForm = DiscreteSystem<S> && requires(const S& s, const Vector& x) {
  { s.io_drift(x) } -> std::convertible_to<double>;
  { s.io_gain(x) } -> std::convertible_to<double>;
};

// Closed-loop record. states has one more entry than inputs; outputs[k] is
// the output at states[k].
struct SimTrace {
  std::vector<Vector> states;
  std::vector<double> inputs;
  std::vector<double> outputs;
  std::vector<double> desired;  // y_d(k) aligned with outputs; empty if unknown
  double dt = 0.0;

  std::size_t steps() const { return inputs.size(); }
};

class SimulationDiverged : public DivergenceError {
 public:
  SimulationDiverged(const std::string& what, std::size_t step, SimTrace partial)
      : DivergenceError(what, step), partial_(std::make_shared<SimTrace>(std::move(partial))) {}
  const SimTrace& partial() const { return *partial_; }

 private:
  std::shared_ptr<const SimTrace> partial_;
};

// Runs `steps` closed-loop steps. `desired(k)` returns y_d(k) and must be
// defined for k up to steps + r; `policy(k, x, y_d(k+r))` returns u(k).
template <DiscreteSystem System, typename Desired, typename Policy>
SimTrace simulate(const System& sys, Policy&& policy, Desired&& desired, std::size_t steps, const Vector& x0,
                  double dt = 0.0) {
  if (x0.size() != sys.state_dim()) throw InvalidArgument("simulate: x0 has wrong dimension");
  const auto r = static_cast<std::size_t>(sys.relative_degree());
  SimTrace trace;
  trace.dt = dt;
  trace.states.reserve(steps + 1);
  trace.inputs.reserve(steps);
  trace.outputs.reserve(steps + 1);
  trace.desired.reserve(steps + 1);

  Vector x = x0;
  for (std::size_t k = 0;; ++k) {
    trace.states.push_back(x);
    trace.outputs.push_back(sys.output(x));
    trace.desired.push_back(desired(k));
    if (k == steps) break;
    try {
      const double u = policy(k, static_cast<const Vector&>(x), desired(k + r));
      if (!std::isfinite(u)) throw DivergenceError("policy returned a non-finite input", k);
      x = sys.step(x, u, k);
      trace.inputs.push_back(u);
    } catch (const DivergenceError& e) {
      throw SimulationDiverged(e.what(), k, std::move(trace));
    }
  }
  return trace;
}

}  // namespace impromptu

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

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "impromptu/gp.hpp"

namespace impromptu {
namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

GpOptions fixed_options(std::size_t capacity = 15) {
  GpOptions o;
  o.capacity = capacity;
  o.refit_stride = 0;
  return o;
}

TEST(KernelTest, Values) {
  GpHyperparams h;
  h.length_scales = {1.0};
  h.signal_variance = 1.0;
  EXPECT_NEAR(kernel(vec({1, 1}), vec({0, 0}), h), std::exp(-1.0), 1e-15);
  h.signal_variance = 2.5;
  EXPECT_EQ(kernel(vec({0.3, -4}), vec({0.3, -4}), h), 2.5);
  h.length_scales = {1.0, 2.0};
  EXPECT_NEAR(kernel(vec({0, 0}), vec({1, 2}), h), 2.5 * std::exp(-1.0), 1e-15);
}

TEST(HyperparamsTest, Validation) {
  GpHyperparams h;
  EXPECT_NO_THROW(h.validate(4));
  h.length_scales = {1.0, 2.0};
  EXPECT_THROW(h.validate(4), InvalidArgument);
  h.length_scales = {-1.0};
  EXPECT_THROW(h.validate(4), InvalidArgument);
  h.length_scales = {1.0};
  h.noise_variance = -1e-3;
  EXPECT_THROW(h.validate(4), InvalidArgument);
}

TEST(GpWindowTest, EvictionOrder) {
  GpWindowModel gp(2, {}, fixed_options(15));
  for (int m = 1; m <= 40; ++m) {
    gp.observe(vec({double(m), 0.5 * m}), double(m));
    ASSERT_EQ(gp.size(), std::min<std::size_t>(m, 15));
    EXPECT_EQ(gp.samples().front().output, double(std::max(1, m - 14)));
    EXPECT_EQ(gp.samples().back().output, double(m));
  }
  for (std::size_t i = 0; i < gp.size(); ++i) EXPECT_EQ(gp.samples()[i].output, double(26 + i));
}

TEST(GpWindowTest, SixteenthObservationEvictsFirst) {
  GpWindowModel gp(1, {}, fixed_options(15));
  for (int m = 1; m <= 16; ++m) gp.observe(vec({0.1 * m}), m);
  EXPECT_EQ(gp.samples().front().output, 2.0);
}

TEST(GpWindowTest, ColdModelFallsBackToZero) {
  const GpWindowModel gp(3);
  const GpPrediction p = gp.predict(vec({1, 2, 3}));
  EXPECT_TRUE(p.cold);
  EXPECT_EQ(p.mean, 0.0);
  EXPECT_EQ(gp.mean_derivative(vec({1, 2, 3}), 0), 0.0);
}

TEST(GpWindowTest, RejectsNonFiniteAndWrongShape) {
  GpWindowModel gp(2);
  EXPECT_THROW(gp.observe(vec({1, NAN}), 0.0), InvalidArgument);
  EXPECT_THROW(gp.observe(vec({1, 2}), INFINITY), InvalidArgument);
  EXPECT_THROW(gp.observe(vec({1}), 0.0), InvalidArgument);
  EXPECT_EQ(gp.size(), 0u);
  EXPECT_THROW(GpWindowModel(0), InvalidArgument);
}

TEST(GpWindowTest, DuplicateInputsFactorize) {
  GpHyperparams h;
  h.noise_variance = 1e-4;
  GpWindowModel gp(2, h, fixed_options());
  for (int i = 0; i < 10; ++i) gp.observe(vec({0.5, 0.5}), 1.0 + 0.01 * i);
  EXPECT_EQ(gp.size(), 10u);
  EXPECT_TRUE(std::isfinite(gp.predict(vec({0.5, 0.5})).mean));
}

TEST(GpWindowTest, DuplicatesWithoutNoiseUseJitter) {
  GpHyperparams h;
  h.noise_variance = 0.0;
  GpWindowModel gp(1, h, fixed_options());
  for (int i = 0; i < 5; ++i) gp.observe(vec({1.0}), 2.0);
  EXPECT_GT(gp.jitter(), 0.0);
  EXPECT_NEAR(gp.predict(vec({1.0})).mean, 2.0, 1e-6);
}

TEST(GpWindowTest, AffineWindowReproduced) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Vector w = vec({0.3, -1.2, 0.7, 2.0});
  auto f = [&](const Vector& x) { return 0.25 + w.dot(x); };
  for (GpBasis basis : {GpBasis::kLinear, GpBasis::kPureQuadratic}) {
    GpHyperparams h;
    h.basis = basis;
    GpWindowModel gp(4, h, fixed_options());
    for (int i = 0; i < 15; ++i) {
      Vector x(4);
      for (int d = 0; d < 4; ++d) x(d) = u(rng);
      gp.observe(x, f(x));
    }
    for (int q = 0; q < 20; ++q) {
      Vector x = Vector::Zero(4);
      for (const auto& s : gp.samples()) x += s.input / 15.0;
      for (int d = 0; d < 4; ++d) x(d) += 0.1 * u(rng);
      EXPECT_NEAR(gp.predict(x).mean, f(x), 1e-6);
    }
  }
}

TEST(GpWindowTest, InterpolatesStoredOutputsWithoutNoise) {
  GpHyperparams h;
  h.noise_variance = 1e-12;
  h.basis = GpBasis::kConstant;
  GpWindowModel gp(2, h, fixed_options());
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 12; ++i) {
    const Vector x = vec({u(rng), u(rng)});
    gp.observe(x, std::sin(x(0)) * x(1));
  }
  for (const auto& s : gp.samples()) {
    const GpPrediction p = gp.predict(s.input);
    EXPECT_NEAR(p.mean, s.output, 1e-5);
    EXPECT_GE(p.variance, 0.0);
    EXPECT_LE(p.variance, h.noise_variance + 1e-9);
  }
}

TEST(GpWindowTest, VarianceNonNegativeAndBoundedBySignal) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  GpWindowModel gp(3);
  for (int i = 0; i < 40; ++i) {
    const Vector x = vec({u(rng), u(rng), u(rng)});
    gp.observe(x, std::cos(x.sum()));
    const GpPrediction p = gp.predict(vec({u(rng), u(rng), u(rng)}));
    EXPECT_GE(p.variance, 0.0);
    EXPECT_LE(p.variance, gp.hyperparams().signal_variance + 1e-12);
  }
}

TEST(GpWindowTest, CholeskyReconstructsCovariance) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    GpHyperparams h;
    h.length_scales = {0.2 + std::abs(u(rng))};
    h.signal_variance = 0.5 + std::abs(u(rng));
    h.noise_variance = trial % 5 == 0 ? 0.0 : 1e-6;
    GpWindowModel gp(4, h, fixed_options());
    for (int i = 0; i < 15; ++i) gp.observe(vec({u(rng), u(rng), u(rng), u(rng)}), u(rng));
    const Matrix& L = gp.cholesky_factor();
    Matrix expected = gp.covariance();
    expected.diagonal().array() += gp.jitter();
    EXPECT_LE((L * L.transpose() - expected).norm() / expected.norm(), 1e-10);
    EXPECT_TRUE(L.isLowerTriangular());
  }
}

// Central differences of the mean with h = 1e-5, over random windows and
// random hyperparameters, on O(1)-scaled inputs.
TEST(GpWindowTest, MeanDerivativeMatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = 1e-5;
  int checked = 0;
  for (int window = 0; window < 120; ++window) {
    GpHyperparams hyper;
    hyper.basis = static_cast<GpBasis>(window % 4);
    hyper.length_scales = {0.5 + std::abs(u(rng))};
    hyper.signal_variance = 0.5 + std::abs(u(rng));
    hyper.noise_variance = 1e-4;
    GpWindowModel gp(4, hyper, fixed_options());
    for (int i = 0; i < 15; ++i) {
      const Vector x = vec({u(rng), u(rng), u(rng), u(rng)});
      gp.observe(x, std::sin(2.0 * x(0)) + x(1) * x(2) - 0.5 * x(3) * x(3));
    }
    const Vector q = vec({u(rng), u(rng), u(rng), u(rng)});
    for (int d = 0; d < 4; ++d) {
      Vector qp = q, qm = q;
      qp(d) += h;
      qm(d) -= h;
      const double fd = (gp.predict(qp).mean - gp.predict(qm).mean) / (2.0 * h);
      const double an = gp.mean_derivative(q, d);
      EXPECT_LE(std::abs(an - fd), 1e-4 * std::max(std::abs(fd), 1e-2)) << "window " << window << " dim " << d;
      ++checked;
    }
  }
  EXPECT_GE(checked, 400);
}

TEST(GpWindowTest, DerivativeOfLinearTargetErrorIsMinusGain) {
  // e = y_d - (A_t x + B_t u) with B_t = 1 on well-excited inputs.
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GpWindowModel gp(4);
  const Vector at = vec({-0.24, 0.9});
  for (int i = 0; i < 15; ++i) {
    const Vector xi = vec({u(rng), u(rng), u(rng), u(rng)});
    gp.observe(xi, xi(3) - at.dot(xi.head(2)) - xi(2));
  }
  const Vector q = vec({0.1, 0.2, -0.1, 0.3});
  EXPECT_NEAR(gp.mean_derivative(q, 2), -1.0, 1e-3);
  EXPECT_NEAR(-1.0 / gp.mean_derivative(q, 2), 1.0, 1e-3);
}

TEST(GpWindowTest, ConstantWindowHasZeroDerivative) {
  GpHyperparams h;
  h.basis = GpBasis::kConstant;
  GpWindowModel gp(2, h, fixed_options());
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 15; ++i) gp.observe(vec({u(rng), u(rng)}), 3.0);
  EXPECT_NEAR(gp.mean_derivative(vec({0.2, 0.1}), 0), 0.0, 1e-8);
  EXPECT_NEAR(gp.predict(vec({0.2, 0.1})).mean, 3.0, 1e-8);
}

TEST(GpFitTest, LikelihoodNeverDegrades) {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    GpWindowModel gp(4, {}, fixed_options());
    for (int i = 0; i < 15; ++i) {
      const Vector x = vec({u(rng), u(rng), u(rng), u(rng)});
      gp.observe(x, std::exp(x(0)) - x(1) + 0.01 * u(rng));
    }
    const double before = gp.log_marginal_likelihood();
    const GpHyperparams initial = gp.hyperparams();
    gp.fit_hyperparams();
    EXPECT_GE(gp.log_marginal_likelihood(), before - 1e-9);
    EXPECT_GE(gp.log_marginal_likelihood(gp.hyperparams()), gp.log_marginal_likelihood(initial) - 1e-9);
  }
}

TEST(GpFitTest, AllZeroOutputsDriveSignalVarianceDown) {
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GpOptions o = fixed_options();
  GpWindowModel gp(2, {}, o);
  for (int i = 0; i < 15; ++i) gp.observe(vec({u(rng), u(rng)}), 0.0);
  gp.fit_hyperparams();
  const double lo = o.signal_variance_min;
  EXPECT_LE(std::log(gp.hyperparams().signal_variance), std::log(lo) + 0.1 * (std::log(o.signal_variance_max) - std::log(lo)));
}

TEST(GpFitTest, RecoversLengthScaleFromSyntheticGp) {
  // Draws from a zero-mean SE process with l = 2 on 15 points; the median
  // fitted length over many windows lands within 50 %.
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  std::normal_distribution<double> g(0.0, 1.0);
  GpHyperparams truth;
  truth.length_scales = {2.0};
  truth.signal_variance = 1.0;
  truth.basis = GpBasis::kNone;
  std::vector<double> fitted;
  for (int w = 0; w < 41; ++w) {
    std::vector<Vector> xs;
    for (int i = 0; i < 15; ++i) xs.push_back(vec({u(rng)}));
    Matrix K(15, 15);
    for (int i = 0; i < 15; ++i)
      for (int j = 0; j < 15; ++j) K(i, j) = kernel(xs[i], xs[j], truth) + (i == j ? 1e-6 : 0.0);
    const Matrix L = K.llt().matrixL();
    Vector z(15);
    for (int i = 0; i < 15; ++i) z(i) = g(rng);
    const Vector y = L * z;

    GpHyperparams start;
    start.basis = GpBasis::kNone;
    start.length_scales = {1.0};
    start.noise_variance = 1e-6;
    GpOptions o = fixed_options();
    o.fit_noise = false;
    GpWindowModel gp(1, start, o);
    for (int i = 0; i < 15; ++i) gp.observe(xs[i], y(i));
    gp.fit_hyperparams();
    fitted.push_back(gp.hyperparams().length_scales[0]);
  }
  std::nth_element(fitted.begin(), fitted.begin() + 20, fitted.end());
  const double median = fitted[20];
  EXPECT_GE(median, 1.0);
  EXPECT_LE(median, 3.0);
}

TEST(GpFitTest, RefitScheduleFollowsStride) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GpOptions o;
  o.refit_stride = 5;
  GpHyperparams h;
  h.basis = GpBasis::kConstant;
  GpWindowModel gp(1, h, o);
  GpHyperparams last = gp.hyperparams();
  int changes = 0;
  for (int i = 1; i <= 30; ++i) {
    gp.observe(vec({u(rng)}), std::sin(3.0 * i));
    if (gp.hyperparams().signal_variance != last.signal_variance) {
      EXPECT_EQ(i % 5, 0) << "refit off schedule at " << i;
      ++changes;
    }
    last = gp.hyperparams();
  }
  EXPECT_GT(changes, 0);
}

TEST(GpWindowTest, CsvDumpRestoreRoundTrip) {
  std::mt19937_64 rng(81);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GpWindowModel gp(3, {}, fixed_options());
  for (int i = 0; i < 15; ++i) gp.observe(vec({u(rng), u(rng), u(rng)}), u(rng));
  std::stringstream ss;
  gp.dump_csv(ss);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "xi0,xi1,xi2,output");
  GpWindowModel back(3, gp.hyperparams(), fixed_options());
  back.restore_csv(ss);
  ASSERT_EQ(back.size(), gp.size());
  for (std::size_t i = 0; i < gp.size(); ++i) {
    EXPECT_EQ(back.samples()[i].input, gp.samples()[i].input);
    EXPECT_EQ(back.samples()[i].output, gp.samples()[i].output);
  }
  const Vector q = vec({0.1, 0.2, 0.3});
  EXPECT_EQ(back.predict(q).mean, gp.predict(q).mean);

  std::stringstream bad("a,b\n1,2\n");
  EXPECT_THROW(back.restore_csv(bad), InvalidArgument);
}

TEST(SimplexTest, FindsBoxedMinimum) {
  auto f = [](const Vector& x) { return std::pow(x(0) - 1.0, 2) + 10.0 * std::pow(x(1) + 0.5, 2); };
  const SimplexResult r = bounded_simplex_minimize(f, vec({3.0, 3.0}), vec({-5, -5}), vec({5, 5}), 500, 1.0, 1e-14);
  EXPECT_NEAR(r.x(0), 1.0, 1e-4);
  EXPECT_NEAR(r.x(1), -0.5, 1e-4);
  const SimplexResult boxed = bounded_simplex_minimize(f, vec({3.0, 3.0}), vec({2, 0}), vec({5, 5}), 500);
  EXPECT_NEAR(boxed.x(0), 2.0, 1e-6);
  EXPECT_NEAR(boxed.x(1), 0.0, 1e-6);
  EXPECT_LE(boxed.evaluations, 500);
}

}  // namespace
}  // namespace impromptu

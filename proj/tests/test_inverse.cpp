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

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "impromptu/bench.hpp"
#include "impromptu/inverse.hpp"

namespace impromptu {
namespace {

SimTrace ramp_trace(std::size_t len) {
  SimTrace t;
  for (std::size_t k = 0; k < len; ++k) {
    Vector x(2);
    x << double(k), -double(k);
    t.states.push_back(x);
    t.outputs.push_back(10.0 * double(k));
    if (k + 1 < len) t.inputs.push_back(100.0 + double(k));
  }
  return t;
}

TEST(InverseDatasetTest, AlignmentCount) {
  const std::vector<SimTrace> traces = {ramp_trace(11)};
  const InverseDataset d = build_inverse_dataset(traces, 1);
  ASSERT_EQ(d.size(), 10u);
  // Sample k pairs x(k) and y(k+1) with u(k).
  EXPECT_EQ(d.samples[3].input(0), 3.0);
  EXPECT_EQ(d.samples[3].input(2), 40.0);
  EXPECT_EQ(d.samples[3].label, 103.0);
  EXPECT_EQ(build_inverse_dataset(traces, 2).size(), 9u);
  EXPECT_EQ(build_inverse_dataset(traces, 1, 3).size(), 4u);
}

TEST(InverseDatasetTest, ShortTracesAreSkipped) {
  const std::vector<SimTrace> traces = {ramp_trace(1), ramp_trace(5)};
  const InverseDataset d = build_inverse_dataset(traces, 1);
  EXPECT_EQ(d.skipped_traces, 1u);
  EXPECT_EQ(d.size(), 4u);
  EXPECT_THROW(build_inverse_dataset(traces, 0), InvalidArgument);
}

TEST(InverseDatasetTest, ZeroTraceGivesZeroLabels) {
  const LtiSystem src = reference_source_system();
  const SimTrace tr = simulate(src, [](std::size_t, const Vector&, double) { return 0.0; },
                               [](std::size_t) { return 0.0; }, 50, Vector::Zero(2));
  const std::vector<SimTrace> traces = {tr};
  for (const auto& s : build_inverse_dataset(traces, 1).samples) EXPECT_EQ(s.label, 0.0);
}

TEST(InverseDatasetTest, ExcitationGridCoversTwentyFiveTraces) {
  ExcitationGrid grid;
  grid.duration = 0.3;
  const auto traces = excite_source(reference_source_system(), grid);
  EXPECT_EQ(traces.size(), 25u);
  EXPECT_EQ(traces[0].steps(), 200u);
}

TEST(NormalizerTest, RoundTrip) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(3.0, 40.0);
  Matrix cols(3, 200);
  for (Eigen::Index i = 0; i < cols.size(); ++i) cols.data()[i] = g(rng);
  cols.row(2).setConstant(5.0);
  const Normalizer nz = Normalizer::fit(cols);
  EXPECT_EQ(nz.scale(2), 1.0);
  for (Eigen::Index c = 0; c < cols.cols(); ++c) {
    const Vector v = cols.col(c);
    EXPECT_LE((nz.denormalize(nz.normalize(v)) - v).cwiseAbs().maxCoeff(), 1e-12);
  }
  const Matrix z = [&] {
    Matrix out(3, cols.cols());
    for (Eigen::Index c = 0; c < cols.cols(); ++c) out.col(c) = nz.normalize(cols.col(c));
    return out;
  }();
  EXPECT_NEAR(z.row(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(std::sqrt(z.row(0).squaredNorm() / 200.0), 1.0, 1e-12);
}

TEST(MlpTest, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<int> sizes = {3, 2 + trial % 4, 3 + trial % 3, 1};
    Mlp net(sizes, 1000 + trial);
    Vector p = net.parameters();
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) += 0.3 * g(rng);
    net.set_parameters(p);
    Matrix X(3, 7), Y(1, 7);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = g(rng);

    std::vector<Matrix> gw;
    std::vector<Vector> gb;
    net.loss_and_gradient(X, Y, gw, gb);
    const Vector grad = net.flatten(gw, gb);

    const double h = 1e-6;
    Vector fd(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      Mlp a = net, b = net;
      Vector pa = p, pb = p;
      pa(i) += h;
      pb(i) -= h;
      a.set_parameters(pa);
      b.set_parameters(pb);
      fd(i) = (a.loss(X, Y) - b.loss(X, Y)) / (2.0 * h);
    }
    EXPECT_LE((grad - fd).norm() / fd.norm(), 1e-5) << "trial " << trial;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      EXPECT_LE(std::abs(grad(i) - fd(i)), 1e-5 * std::max(std::abs(fd(i)), 1e-2 * fd.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(MlpTest, ParameterRoundTrip) {
  Mlp net({3, 4, 1}, 5);
  EXPECT_EQ(net.parameter_count(), 3u * 4 + 4 + 4 + 1);
  const Vector p = net.parameters();
  EXPECT_EQ(p(1), net.weight(0)(0, 1));
  EXPECT_EQ(p(12), net.bias(0)(0));
  Mlp other({3, 4, 1}, 6);
  other.set_parameters(p);
  EXPECT_EQ(other.parameters(), p);
  EXPECT_THROW(other.set_parameters(Vector::Zero(3)), InvalidArgument);
  EXPECT_THROW(Mlp({3}, 1), InvalidArgument);
}

InverseDataset small_source_dataset() {
  ExcitationGrid grid;
  grid.duration = 8.0;
  grid.stride = 5;
  return source_inverse_dataset(reference_source_system(), grid);
}

TEST(TrainingTest, EmptyDatasetIsAnError) {
  EXPECT_THROW(train_mlp(InverseDataset{}, TrainingConfig{}, 1), InvalidArgument);
}

TEST(TrainingTest, SeededRunsAreIdentical) {
  const InverseDataset data = small_source_dataset();
  TrainingConfig cfg;
  cfg.max_epochs = 3;
  const TrainedInverse a = train_mlp(data, cfg, 42);
  const TrainedInverse b = train_mlp(data, cfg, 42);
  const Vector pa = a.model.network().parameters(), pb = b.model.network().parameters();
  ASSERT_EQ(pa.size(), pb.size());
  EXPECT_EQ(0, std::memcmp(pa.data(), pb.data(), sizeof(double) * pa.size()));
  const TrainedInverse c = train_mlp(data, cfg, 43);
  EXPECT_NE(c.model.network().parameters(), pa);
}

TEST(SerializationTest, RoundTripIsBitExact) {
  const InverseDataset data = small_source_dataset();
  TrainingConfig cfg;
  cfg.max_epochs = 2;
  const TrainedInverse t = train_mlp(data, cfg, 8);
  std::stringstream ss;
  save_mlp(ss, t.model);
  const MlpInverseModel back = load_mlp(ss);
  const Vector pa = t.model.network().parameters(), pb = back.network().parameters();
  ASSERT_EQ(pa.size(), pb.size());
  EXPECT_EQ(0, std::memcmp(pa.data(), pb.data(), sizeof(double) * pa.size()));
  EXPECT_EQ(t.model.input_normalizer().mean, back.input_normalizer().mean);
  EXPECT_EQ(t.model.output_normalizer().scale, back.output_normalizer().scale);
  Vector q(3);
  q << 0.1, -0.2, 0.7;
  EXPECT_EQ(t.model.predict(q), back.predict(q));

  std::stringstream again;
  save_mlp(again, back);
  EXPECT_EQ(again.str(), [&] {
    std::stringstream s;
    save_mlp(s, t.model);
    return s.str();
  }());
}

TEST(SerializationTest, RejectsCorruptFiles) {
  std::stringstream wrong_magic("not-a-model 1\n");
  EXPECT_THROW(load_mlp(wrong_magic), IoError);
  std::stringstream truncated("impromptu-mlp 1\nactivation tanh\nlayers 3 3 2 1\ninput_mean 0x0p+0\n");
  EXPECT_THROW(load_mlp(truncated), IoError);
  EXPECT_THROW(load_mlp(std::string("/nonexistent/model.txt")), IoError);
}

TEST(AnalyticInverseTest, Examples) {
  const AnalyticInverse<LtiSystem> inv(reference_source_system());
  EXPECT_DOUBLE_EQ(inv.reference(Vector::Zero(2), 1.0), 1.0);
  Vector x(2);
  x << 0.4, -1.3;
  EXPECT_NEAR(inv.reference(x, reference_source_system().lifted_A().dot(x)), 0.0, 1e-15);
}

TEST(AnalyticInverseTest, ClosedLoopExactOnSource) {
  const LtiSystem src = reference_source_system();
  const AnalyticInverse<LtiSystem> inv(src);
  const TrajectorySpec traj = make_test_trajectory(10.0);
  auto policy = [&](std::size_t, const Vector& x, double yd) { return inv.reference(x, yd); };
  const SimTrace tr = simulate(src, policy, traj, traj.steps(), Vector::Zero(2));
  double worst = 0.0;
  for (std::size_t k = 1; k < tr.outputs.size(); ++k) worst = std::max(worst, std::abs(tr.outputs[k] - traj(k)));
  EXPECT_LE(worst, 1e-10);
}

TEST(AnalyticInverseTest, SingularGainThrows) {
  const NonlinearSystem flat(
      1, 1, [](const Vector& x) { return Vector(0.5 * x); },
      [](const Vector& x) { return Vector::Constant(1, x(0)); }, [](const Vector& x) { return x(0); },
      [](const Vector& x) { return 0.5 * x(0); }, [](const Vector& x) { return x(0); });
  const AnalyticInverse<NonlinearSystem> inv(flat);
  EXPECT_THROW(inv.reference(Vector::Zero(1), 1.0), SingularGainError);
}

// Affine least-squares fit of u on [x, y_d(k+r), 1]: an independent model
// of the same (affine) inverse map.
struct LeastSquaresInverse {
  Vector w;
  explicit LeastSquaresInverse(const InverseDataset& d) {
    const auto n = static_cast<Eigen::Index>(d.size());
    const Eigen::Index p = d.input_dim() + 1;
    Matrix Phi(n, p);
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      Phi.row(i).head(p - 1) = d.samples[i].input.transpose();
      Phi(i, p - 1) = 1.0;
      y(i) = d.samples[i].label;
    }
    w = Phi.colPivHouseholderQr().solve(y);
  }
  double reference(const Vector& x, double yd) const {
    return w.head(x.size()).dot(x) + w(x.size()) * yd + w(x.size() + 1);
  }
};

// One training run backs every closed-loop claim about the learned inverse.
TEST(TrainingTest, LearnedInverseAgainstAffineOracle) {
  BenchConfig c;
  c.excitation.stride = 20;
  c.training.max_epochs = 150;
  const InverseDataset data = source_inverse_dataset(c.source, c.excitation);
  const TrainedInverse trained = train_mlp(data, c.training, 3);
  EXPECT_LE(trained.report.validation_rmse, 5e-3);

  const LeastSquaresInverse ls(data);
  const AnalyticInverse<LtiSystem> exact(c.source);
  Vector x(2);
  x << 0.3, -0.2;
  EXPECT_NEAR(ls.reference(x, 0.5), exact.reference(x, 0.5), 1e-8);

  const TrajectorySpec traj = make_test_trajectory(16.0);
  auto rms_of = [&](const auto& inv) {
    auto policy = [&](std::size_t, const Vector& s, double yd) { return inv.reference(s, yd); };
    const SimTrace tr = simulate(c.target, policy, traj, traj.steps(), Vector::Zero(2));
    double acc = 0.0;
    for (std::size_t k = 1; k < tr.outputs.size(); ++k) acc += std::pow(tr.outputs[k] - traj(k), 2);
    return std::sqrt(acc / double(tr.outputs.size() - 1));
  };
  const double rms_ls = rms_of(ls);
  const double rms_mlp = rms_of(trained.model);
  EXPECT_LE(rms_mlp, 2.0 * rms_ls);
  EXPECT_GE(rms_mlp, 0.5 * rms_ls);
}

}  // namespace
}  // namespace impromptu

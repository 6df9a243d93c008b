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

// A damped pendulum-like source and a heavier, stiffer target. The source
// inverse is analytic; the GP window learns what it gets wrong on the target.

#include <cmath>
#include <cstdio>

#include "impromptu/impromptu.hpp"

using impromptu::NonlinearSystem;
using impromptu::Vector;

namespace {

NonlinearSystem pendulum(double stiffness, double damping, double gain) {
  auto drift = [=](const Vector& x) {
    Vector n(2);
    n << 0.9 * x(0) + 0.1 * x(1), x(1) - 0.2 * stiffness * std::sin(x(0)) - damping * x(1);
    return n;
  };
  auto input = [=](const Vector&) {
    Vector g(2);
    g << 0.0, gain;
    return g;
  };
  auto output = [](const Vector& x) { return x(1); };
  auto F = [=](const Vector& x) { return drift(x)(1); };
  auto G = [=](const Vector&) { return gain; };
  return NonlinearSystem(2, 1, drift, input, output, F, G);
}

}  // namespace

int main() {
  const NonlinearSystem source = pendulum(1.0, 0.3, 1.0);
  const NonlinearSystem target = pendulum(1.6, 0.45, 0.8);
  const auto traj = impromptu::make_test_trajectory(12.0);
  const Vector x0 = Vector::Zero(2);

  impromptu::AnalyticInverse<NonlinearSystem> inverse(source);
  impromptu::GpWindowModel gp(4);
  impromptu::TransferController<impromptu::AnalyticInverse<NonlinearSystem>, impromptu::GpWindowModel> online(
      inverse, std::move(gp), 1);
  impromptu::TransferController<impromptu::AnalyticInverse<NonlinearSystem>> offline(
      inverse, impromptu::NoPredictor{}, 1);

  impromptu::run_closed_loop(target, offline, traj, traj.steps(), x0, traj.dt());
  impromptu::run_closed_loop(target, online, traj, traj.steps(), x0, traj.dt());

  const auto m_off = impromptu::metrics(offline.log(), 1);
  const auto m_on = impromptu::metrics(online.log(), 1);
  const auto theta = impromptu::nonlinear_similarity(source, target, x0);
  std::printf("similarity at rest: theta1 = %.3f, theta2 = %.3f\n", theta.theta1, theta.theta2);
  std::printf("offline rms %.3e\nonline  rms %.3e\n", m_off.rms_tracking, m_on.rms_tracking);
  return 0;
}

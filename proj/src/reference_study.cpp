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

// Runs the three strategies on the reference source/target pair with the
// analytic source inverse and prints the tracking RMS of each.

#include <cstdio>

#include "impromptu/impromptu.hpp"

int main() {
  impromptu::BenchConfig config;
  config.inverse_mode = impromptu::InverseMode::kAnalytic;

  const auto poles = impromptu::zeros_poles(config.target);
  std::printf("target poles:");
  for (const auto& p : poles.poles) std::printf(" %.3f", p.real());
  std::printf("  zeros:");
  for (const auto& z : poles.zeros) std::printf(" %.3f", z.real());
  std::printf("\n");

  const auto s = impromptu::similarity(config.source, config.target);
  std::printf("S1 = %.3f, ||S2|| = %.4f\n", s.S1, s.norm_S2);

  const auto report = impromptu::run_comparison(config);
  for (const auto& r : report.strategies) {
    std::printf("%-9s rms %.3e", impromptu::to_string(r.strategy), r.metrics.rms_tracking);
    if (r.metrics.prediction_samples > 0) std::printf("  prediction rms %.3e", r.metrics.rms_prediction);
    std::printf("\n");
  }
  return 0;
}

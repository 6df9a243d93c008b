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

#include <Eigen/Core>

namespace impromptu {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

// Zero test used when searching for the relative degree.
inline constexpr double kRelativeDegreeTol = 1e-9;

// Singularity threshold for input gains (inverse dynamics, similarity ratios).
inline constexpr double kSingularGainTol = 1e-12;

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace impromptu

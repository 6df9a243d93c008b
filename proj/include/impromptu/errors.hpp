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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace impromptu {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration or violated precondition (dimension mismatch, empty data).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A simulation or training run produced a non-finite or out-of-range value.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Relative degree does not exist within the state dimension.
class RelativeDegreeError : public Error {
 public:
  using Error::Error;
};

// The inverse (or similarity ratio) needs division by a vanishing gain.
class SingularGainError : public Error {
 public:
  using Error::Error;
};

// A standing assumption (stable A, matching relative degree, ...) is violated.
class AssumptionError : public Error {
 public:
  using Error::Error;
};

// Numerical routine failed (eigen solver, factorization).
class AnalysisError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace impromptu

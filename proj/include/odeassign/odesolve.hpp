/*
 * Copyright 2026 The odeassign Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <vector>

#include "odeassign/tensor.hpp"

namespace odeassign {

class SolverError : public Error {
 public:
  using Error::Error;
};

/// Adaptive integrator settings. Defaults follow the dopri5 setup used for
/// the scene classifiers: atol = rtol = 0.01, horizon 1.5.
struct SolverConfig {
  double atol = 0.01;
  double rtol = 0.01;
  double t_end = 1.5;
  /// Initial |step|. Unset: 1e-2 * |t1 - t0|, or the automatic estimate when
  /// `auto_h_init` is on.
  std::optional<double> h_init;
  /// Estimate the first step from the local scale of f (costs one extra f
  /// evaluation per integration).
  bool auto_h_init = false;
  double h_min = 1e-12;
  double h_max = std::numeric_limits<double>::infinity();
  double safety = 0.9;
  std::size_t max_steps = 100000;
  /// false: fixed steps of h_init, every step accepted.
  bool adaptive = true;

  void validate() const;
};

struct SolveStats {
  std::size_t nfe = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  double elapsed = 0.0;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Tensor> states;
};

using VectorField = std::function<Tensor(double t, const Tensor& x)>;

/// Butcher tableau of an explicit 7-stage embedded pair with FSAL.
struct Dopri5Tableau {
  std::array<double, 7> c;
  std::array<std::array<double, 6>, 7> a;  // a[i][j], j < i
  std::array<double, 7> b;                 // 5th order weights
  std::array<double, 7> b_hat;             // embedded 4th order weights
};

/// Standard Dormand–Prince 5(4) coefficients.
const Dopri5Tableau& dormand_prince_tableau();

struct StepResult {
  Tensor x5;
  /// x5 − x4, untracked.
  Tensor err;
  /// f(t + h, x5): first stage of the next step.
  Tensor k_last;
  std::size_t nfe = 0;
};

/// One Dormand–Prince step. `k1` may carry f(t, x) from the previous step.
StepResult dopri5_step(const VectorField& f, double t, const Tensor& x,
                       double h, const Tensor* k1 = nullptr,
                       const Dopri5Tableau& tableau = dormand_prince_tableau());

/// Weighted RMS of `err` with weights 1 / (atol + rtol * max(|x_old|, |x_new|)).
double error_norm(const Tensor& err, const Tensor& x_old, const Tensor& x_new,
                  const SolverConfig& cfg);

struct StepDecision {
  bool accept = false;
  double h_next = 0.0;
};

/// Accept iff err_norm <= 1; next |step| is
/// h * clamp(safety * err_norm^(-1/5), 0.2, 5), then clamped to [h_min, h_max].
StepDecision step_control(double err_norm, double h, const SolverConfig& cfg);

struct Solution {
  Tensor x;
  SolveStats stats;
  std::optional<Trajectory> trajectory;
};

/// Integrates dx/dt = f(t, x) from t0 to t1 (t1 < t0 integrates backwards).
/// Records on the active tape like any other op, so the whole accepted step
/// sequence can be differentiated.
Solution integrate(const VectorField& f, const Tensor& x0, double t0, double t1,
                   const SolverConfig& cfg, bool dense = false,
                   const Dopri5Tableau& tableau = dormand_prince_tableau());

/// States at each of `times` (sorted, starting at or after t0), integrating
/// segment by segment. Stats are summed over segments.
std::vector<Tensor> integrate_to_times(const VectorField& f, const Tensor& x0,
                                       double t0, std::span<const double> times,
                                       const SolverConfig& cfg,
                                       SolveStats* stats = nullptr);

/// CSV with header `t,x_0,...,x_{d-1}`, one row per state, 17 significant
/// digits, '.' decimal separator.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

}  // namespace odeassign

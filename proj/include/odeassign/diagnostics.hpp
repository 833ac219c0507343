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

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "odeassign/ilp.hpp"
#include "odeassign/odesolve.hpp"

namespace odeassign {

class Rng;

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct CheckOptions {
  /// Tableau used by the solver checks; swapped out for fault injection.
  Dopri5Tableau tableau = dormand_prince_tableau();
  /// Solver tolerance of the adjoint agreement check.
  double adjoint_tol = 1e-8;
  std::size_t adjoint_draws = 20;
  std::size_t gradient_probes = 50;
  std::size_t ilp_instances = 200;
  std::uint64_t seed = 1;
};

/// Allowed adjoint/discretize disagreement, as max-norm relative error, at a
/// solver tolerance.
double adjoint_agreement_bound(double tol);

/// Max relative error over coordinates with |reference| above `floor`.
double max_relative_error(const std::vector<double>& value,
                          const std::vector<double>& reference,
                          double floor = 1e-6);

/// max_i |value_i - reference_i| / max_i |reference_i|.
double max_norm_relative_error(const std::vector<double>& value,
                               const std::vector<double>& reference);

CheckResult check_solver_exp(const CheckOptions& opt);
CheckResult check_solver_order(const CheckOptions& opt);
CheckResult check_mlp_gradient(const CheckOptions& opt);
CheckResult check_adjoint_agreement(const CheckOptions& opt);
CheckResult check_ilp_oracle(const CheckOptions& opt);

std::vector<CheckResult> run_checks(const CheckOptions& opt);

/// Dormand-Prince coefficients with one 5th order weight perturbed by
/// `delta`, so the weights no longer sum to one.
Dopri5Tableau corrupted_tableau(double delta = 1e-3);

/// Fixed-step global error of dx/dt = x over [0, 1].
double fixed_step_exp_error(double h, const Dopri5Tableau& tableau);

/// Random problem with up to `max_nodes` nodes and `max_labels` labels.
/// Roughly half the draws use small integer scores so ties occur.
ilp::AssignmentProblem random_assignment_problem(Rng& rng, std::size_t max_nodes,
                                                 std::size_t max_labels);

/// One line per check: "PASS name value <= threshold (detail)".
void print_checks(std::ostream& os, const std::vector<CheckResult>& results);

}  // namespace odeassign

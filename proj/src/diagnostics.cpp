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

#include "odeassign/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "odeassign/nodelayer.hpp"
#include "odeassign/param_set.hpp"
#include "odeassign/rng.hpp"

namespace odeassign {

double adjoint_agreement_bound(double tol) {
  return std::max(1e-4, 100.0 * tol);
}

double max_relative_error(const std::vector<double>& value,
                          const std::vector<double>& reference, double floor) {
  if (value.size() != reference.size()) {
    throw Error("max_relative_error: length mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (std::abs(reference[i]) <= floor) continue;
    worst = std::max(worst,
                     std::abs(value[i] - reference[i]) / std::abs(reference[i]));
  }
  return worst;
}

double max_norm_relative_error(const std::vector<double>& value,
                               const std::vector<double>& reference) {
  if (value.size() != reference.size()) {
    throw Error("max_norm_relative_error: length mismatch");
  }
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) {
    diff = std::max(diff, std::abs(value[i] - reference[i]));
    scale = std::max(scale, std::abs(reference[i]));
  }
  return scale == 0.0 ? diff : diff / scale;
}

double fixed_step_exp_error(double h, const Dopri5Tableau& tableau) {
  SolverConfig cfg;
  cfg.adaptive = false;
  cfg.h_init = h;
  cfg.t_end = 1.0;
  TapeScope untaped(nullptr);
  const VectorField f = [](double, const Tensor& x) { return x; };
  const Solution s =
      integrate(f, Tensor::vector({1.0}), 0.0, 1.0, cfg, false, tableau);
  return std::abs(s.x[0] - std::exp(1.0));
}

CheckResult check_solver_exp(const CheckOptions& opt) {
  SolverConfig cfg;
  cfg.atol = cfg.rtol = 1e-8;
  cfg.t_end = 1.0;
  TapeScope untaped(nullptr);
  const VectorField f = [](double, const Tensor& x) { return x; };
  CheckResult r;
  r.name = "solver_exp";
  r.threshold = 1e-6;
  try {
    const Solution s = integrate(f, Tensor::vector({1.0}), 0.0, 1.0, cfg,
                                 false, opt.tableau);
    r.value = std::abs(s.x[0] - std::exp(1.0));
    r.passed = r.value <= r.threshold;
    r.detail = "nfe=" + std::to_string(s.stats.nfe);
  } catch (const Error& e) {
    r.value = INFINITY;
    r.detail = e.what();
  }
  return r;
}

CheckResult check_solver_order(const CheckOptions& opt) {
  CheckResult r;
  r.name = "solver_order";
  r.threshold = 24.0;
  const double e1 = fixed_step_exp_error(0.1, opt.tableau);
  const double e2 = fixed_step_exp_error(0.05, opt.tableau);
  r.value = e2 > 0.0 ? e1 / e2 : INFINITY;
  r.passed = r.value >= 24.0 && r.value <= 40.0;
  std::ostringstream os;
  os << "error ratio for h=0.1 -> 0.05 must lie in [24, 40]; err(0.1)=" << e1
     << " err(0.05)=" << e2;
  r.detail = os.str();
  return r;
}

namespace {

Tensor mlp_loss(const ParamSet& p, const Tensor& x, const Tensor& c) {
  Tensor h = activation(Activation::kTanh,
                        linear(p.at("l0.weight"), p.at("l0.bias"), x));
  h = activation(Activation::kTanh, linear(p.at("l1.weight"), p.at("l1.bias"), h));
  const Tensor y = linear(p.at("l2.weight"), p.at("l2.bias"), h);
  return add(sum(mul(c, y)), scale(sum(mul(y, y)), 0.5));
}

}  // namespace

CheckResult check_mlp_gradient(const CheckOptions& opt) {
  Rng rng = Rng::derive(opt.seed, "mlp-gradient");
  const std::size_t dims[4] = {6, 8, 8, 3};
  ParamSet p;
  for (std::size_t l = 0; l < 3; ++l) {
    std::vector<double> w(dims[l + 1] * dims[l]);
    for (auto& v : w) v = rng.normal() / std::sqrt(static_cast<double>(dims[l]));
    std::vector<double> b(dims[l + 1]);
    for (auto& v : b) v = 0.1 * rng.normal();
    const std::string name = "l" + std::to_string(l);
    p.add(name + ".weight", Tensor::matrix(dims[l + 1], dims[l], std::move(w)));
    p.add(name + ".bias", Tensor::vector(std::move(b)));
  }
  std::vector<double> xv(dims[0]);
  for (auto& v : xv) v = rng.normal();
  std::vector<double> cv(dims[3]);
  for (auto& v : cv) v = rng.normal();
  const Tensor x = Tensor::vector(xv);
  const Tensor c = Tensor::vector(cv);

  Tape tape;
  Tensor loss;
  {
    TapeScope scope(&tape);
    loss = mlp_loss(p.watch(tape), x, c);
  }
  const Gradients g = backward(tape, loss);
  ParamSet grads = p.zeros_like();
  for (const auto& [name, _] : p) grads.assign(name, g[name]);
  const std::vector<double> analytic = grads.flatten();

  const std::vector<double> base = p.flatten();
  std::vector<double> got;
  std::vector<double> want;
  const double h = 1e-5;
  TapeScope untaped(nullptr);
  for (std::size_t i = 0; i < opt.gradient_probes; ++i) {
    const std::size_t k = rng.index(base.size());
    std::vector<double> q = base;
    q[k] = base[k] + h;
    p.unflatten(q);
    const double up = mlp_loss(p, x, c).item();
    q[k] = base[k] - h;
    p.unflatten(q);
    const double down = mlp_loss(p, x, c).item();
    got.push_back(analytic[k]);
    want.push_back((up - down) / (2.0 * h));
  }
  CheckResult r;
  r.name = "mlp_gradient";
  r.threshold = 1e-6;
  r.value = max_relative_error(got, want, 1e-8);
  r.passed = r.value <= r.threshold;
  r.detail = std::to_string(opt.gradient_probes) +
             " central-difference probes, step 1e-5";
  return r;
}

CheckResult check_adjoint_agreement(const CheckOptions& opt) {
  CheckResult r;
  r.name = "adjoint_agreement";
  r.threshold = adjoint_agreement_bound(opt.adjoint_tol);
  SolverConfig cfg;
  cfg.atol = cfg.rtol = opt.adjoint_tol;
  cfg.t_end = 1.0;
  const OdeFunc func("f", OdeFuncSpec{8, 16, 2, false});
  double worst = 0.0;
  for (std::size_t d = 0; d < opt.adjoint_draws; ++d) {
    const std::uint64_t seed = mix_seed(opt.seed, d);
    ParamSet params;
    func.init_params(params, seed);
    Rng rng = Rng::derive(seed, "state");
    std::vector<double> x0(8);
    std::vector<double> w(8);
    for (auto& v : x0) v = rng.normal();
    for (auto& v : w) v = rng.normal();
    const Tensor x = Tensor::vector(x0);
    const Tensor seed_t = Tensor::vector(w);
    const NodeResult fwd = node_forward(func, params, x, cfg);
    const NodeGradients adj =
        node_backward_adjoint(func, params, fwd.xT, seed_t, cfg);
    const NodeGradients dis =
        node_backward_discretize(func, params, x, seed_t, cfg);
    auto flat = [](const NodeGradients& g) {
      std::vector<double> v(g.dx0.values().begin(), g.dx0.values().end());
      const auto p = g.dparams.flatten();
      v.insert(v.end(), p.begin(), p.end());
      return v;
    };
    worst = std::max(worst, max_norm_relative_error(flat(adj), flat(dis)));
  }
  r.value = worst;
  r.passed = worst <= r.threshold;
  std::ostringstream os;
  os << opt.adjoint_draws << " draws at atol=rtol=" << opt.adjoint_tol
     << ", max-norm relative";
  r.detail = os.str();
  return r;
}

ilp::AssignmentProblem random_assignment_problem(Rng& rng,
                                                 std::size_t max_nodes,
                                                 std::size_t max_labels) {
  ilp::AssignmentProblem p;
  p.n_nodes = 1 + rng.index(max_nodes);
  p.n_labels = 1 + rng.index(max_labels);
  const bool integral = rng.uniform() < 0.5;
  auto draw = [&]() {
    return integral ? static_cast<double>(rng.index(5)) - 2.0
                    : rng.uniform(-2.0, 2.0);
  };
  p.alpha.resize(p.n_nodes * p.n_labels);
  for (auto& a : p.alpha) a = draw();
  if (p.n_nodes > 1) {
    const std::size_t n_beta = rng.index(3 * p.n_nodes * p.n_labels + 1);
    for (std::size_t i = 0; i < n_beta; ++i) {
      ilp::PairTerm t;
      t.node_a = rng.index(p.n_nodes);
      do {
        t.node_b = rng.index(p.n_nodes);
      } while (t.node_b == t.node_a);
      t.label_a = rng.index(p.n_labels);
      t.label_b = rng.index(p.n_labels);
      t.score = draw();
      p.beta.push_back(t);
    }
  }
  p.w = integral ? static_cast<double>(rng.index(3)) : rng.uniform(0.0, 2.0);
  p.per_node_cap = 1 + rng.index(2);
  p.allow_empty = rng.uniform() < 0.3;
  if (rng.uniform() < 0.3) {
    const std::size_t lo = p.allow_empty ? 0 : p.n_nodes;
    p.global_cap = lo + rng.index(p.n_nodes + 1);
  }
  return p;
}

CheckResult check_ilp_oracle(const CheckOptions& opt) {
  Rng rng = Rng::derive(opt.seed, "ilp-oracle");
  std::size_t mismatches = 0;
  std::size_t greedy_above = 0;
  std::string first;
  for (std::size_t i = 0; i < opt.ilp_instances; ++i) {
    const auto p = random_assignment_problem(rng, 5, 4);
    const auto exact = ilp::solve_exact(p);
    const auto brute = ilp::solve_enumerate(p);
    if (exact.objective != brute.objective || exact.chosen != brute.chosen) {
      ++mismatches;
      if (first.empty()) first = "first mismatch at instance " + std::to_string(i);
    }
    try {
      if (ilp::solve_greedy(p).objective > exact.objective) ++greedy_above;
    } catch (const ilp::InfeasibleError&) {
    }
  }
  CheckResult r;
  r.name = "ilp_oracle";
  r.threshold = 0.0;
  r.value = static_cast<double>(mismatches + greedy_above);
  r.passed = mismatches == 0 && greedy_above == 0;
  r.detail = std::to_string(opt.ilp_instances) + " instances, " +
             std::to_string(mismatches) + " exact/enumeration mismatches, " +
             std::to_string(greedy_above) + " greedy above exact" +
             (first.empty() ? "" : "; " + first);
  return r;
}

std::vector<CheckResult> run_checks(const CheckOptions& opt) {
  return {check_solver_exp(opt), check_solver_order(opt),
          check_mlp_gradient(opt), check_adjoint_agreement(opt),
          check_ilp_oracle(opt)};
}

void print_checks(std::ostream& os, const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << r.name << " value=" << r.value
       << " threshold=" << r.threshold << " (" << r.detail << ")\n";
  }
}

Dopri5Tableau corrupted_tableau(double delta) {
  Dopri5Tableau t = dormand_prince_tableau();
  t.b[0] += delta;
  return t;
}

}  // namespace odeassign

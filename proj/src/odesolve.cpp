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

#include "odeassign/odesolve.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ostream>
#include <string>

namespace odeassign {

void SolverConfig::validate() const {
  if (!(atol > 0.0)) throw SolverError("solver: atol must be > 0");
  if (!(rtol >= 0.0)) throw SolverError("solver: rtol must be >= 0");
  if (t_end == 0.0) throw SolverError("solver: t_end must differ from 0");
  if (!(h_min > 0.0) || !(h_min <= h_max)) {
    throw SolverError("solver: need 0 < h_min <= h_max");
  }
  if (!(safety > 0.0 && safety < 1.0)) {
    throw SolverError("solver: safety must lie in (0, 1)");
  }
  if (h_init && !(*h_init > 0.0)) {
    throw SolverError("solver: h_init must be > 0");
  }
  if (!adaptive && !h_init) {
    throw SolverError("solver: fixed-step mode needs h_init");
  }
  if (max_steps == 0) throw SolverError("solver: max_steps must be >= 1");
}

const Dopri5Tableau& dormand_prince_tableau() {
  static const Dopri5Tableau tableau{
      {0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0},
      {{{},
        {1.0 / 5.0},
        {3.0 / 40.0, 9.0 / 40.0},
        {44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0},
        {19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0,
         -212.0 / 729.0},
        {9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
         -5103.0 / 18656.0},
        {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
         11.0 / 84.0}}},
      {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
       11.0 / 84.0, 0.0},
      {5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0,
       -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0}};
  return tableau;
}

namespace {

Tensor eval_stage(const VectorField& f, double t, const Tensor& x) {
  Tensor k = f(t, x);
  if (k.shape() != x.shape()) {
    throw ShapeError("vector field returned shape " + shape_string(k.shape()) +
                     " for state " + shape_string(x.shape()));
  }
  if (!k.all_finite()) {
    throw SolverError("vector field produced a non-finite value at t = " +
                      std::to_string(t));
  }
  return k;
}

double rms(std::span<const double> v, std::span<const double> scale) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = v[i] / scale[i];
    s += r * r;
  }
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Hairer & Wanner's starting step heuristic. Returns |h|.
double initial_step(const VectorField& f, double t0, const Tensor& x0,
                    const Tensor& f0, double direction,
                    const SolverConfig& cfg) {
  TapeScope untaped(nullptr);
  const auto x = x0.values();
  const auto d = f0.values();
  std::vector<double> sc(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    sc[i] = cfg.atol + cfg.rtol * std::abs(x[i]);
  }
  const double d0 = rms(x, sc);
  const double d1 = rms(d, sc);
  const double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  std::vector<double> probe(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + direction * h0 * d[i];
  }
  const Tensor f1 = eval_stage(f, t0 + direction * h0,
                               Tensor(x0.shape(), std::move(probe)));
  std::vector<double> diff(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) diff[i] = f1[i] - d[i];
  const double d2 = rms(diff, sc) / h0;
  const double dmax = std::max(d1, d2);
  const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                  : std::pow(0.01 / dmax, 1.0 / 5.0);
  return std::min(100.0 * h0, h1);
}

}  // namespace

StepResult dopri5_step(const VectorField& f, double t, const Tensor& x,
                       double h, const Tensor* k1,
                       const Dopri5Tableau& tab) {
  if (h == 0.0) throw SolverError("dopri5_step: zero step");
  StepResult out;
  std::array<Tensor, 7> k;
  if (k1 != nullptr) {
    k[0] = *k1;
  } else {
    k[0] = eval_stage(f, t, x);
    ++out.nfe;
  }
  std::array<double, 6> coeff{};
  for (std::size_t i = 1; i < 6; ++i) {
    for (std::size_t j = 0; j < i; ++j) coeff[j] = h * tab.a[i][j];
    const Tensor y = add_scaled(x, std::span(coeff.data(), i),
                                std::span<const Tensor>(k.data(), i));
    k[i] = eval_stage(f, t + tab.c[i] * h, y);
    ++out.nfe;
  }
  for (std::size_t j = 0; j < 6; ++j) coeff[j] = h * tab.b[j];
  out.x5 = add_scaled(x, coeff, std::span<const Tensor>(k.data(), 6));
  k[6] = eval_stage(f, t + tab.c[6] * h, out.x5);
  ++out.nfe;

  std::vector<double> err(x.size(), 0.0);
  for (std::size_t j = 0; j < 7; ++j) {
    const double w = h * (tab.b[j] - tab.b_hat[j]);
    if (w == 0.0) continue;
    const auto kv = k[j].values();
    for (std::size_t i = 0; i < err.size(); ++i) err[i] += w * kv[i];
  }
  out.err = Tensor(x.shape(), std::move(err));
  out.k_last = std::move(k[6]);
  return out;
}

double error_norm(const Tensor& err, const Tensor& x_old, const Tensor& x_new,
                  const SolverConfig& cfg) {
  const auto e = err.values();
  if (e.empty()) return 0.0;
  const auto a = x_old.values();
  const auto b = x_new.values();
  double s = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double sc =
        cfg.atol + cfg.rtol * std::max(std::abs(a[i]), std::abs(b[i]));
    const double r = e[i] / sc;
    s += r * r;
  }
  return std::sqrt(s / static_cast<double>(e.size()));
}

StepDecision step_control(double err_norm, double h, const SolverConfig& cfg) {
  StepDecision d;
  d.accept = err_norm <= 1.0;
  double factor = 5.0;
  if (err_norm > 0.0) {
    factor = std::clamp(cfg.safety * std::pow(err_norm, -1.0 / 5.0), 0.2, 5.0);
  }
  d.h_next = std::clamp(h * factor, cfg.h_min, cfg.h_max);
  return d;
}

Solution integrate(const VectorField& f, const Tensor& x0, double t0, double t1,
                   const SolverConfig& cfg, bool dense,
                   const Dopri5Tableau& tableau) {
  cfg.validate();
  if (t1 == t0) throw SolverError("integrate: t1 equals t0");
  if (!x0.all_finite()) throw SolverError("integrate: non-finite initial state");
  const auto start = std::chrono::steady_clock::now();
  const double direction = t1 > t0 ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);

  Solution sol;
  if (dense) {
    sol.trajectory.emplace();
    sol.trajectory->times.push_back(t0);
    sol.trajectory->states.push_back(x0.detached());
  }

  double t = t0;
  Tensor x = x0;
  Tensor k1 = eval_stage(f, t, x);
  sol.stats.nfe = 1;
  double h = 0.0;
  if (cfg.h_init) {
    h = *cfg.h_init;
  } else if (cfg.auto_h_init) {
    h = initial_step(f, t0, x0, k1, direction, cfg);
    sol.stats.nfe += 1;
  } else {
    h = 1e-2 * span;
  }
  if (cfg.adaptive) h = std::clamp(h, cfg.h_min, cfg.h_max);

  while (true) {
    const double remaining = std::abs(t1 - t);
    if (remaining <= 1e-14 * std::max(1.0, std::abs(t1))) break;
    const bool last = h >= remaining;
    const double h_eff = last ? remaining : h;
    StepResult step = dopri5_step(f, t, x, direction * h_eff, &k1, tableau);
    sol.stats.nfe += step.nfe;
    StepDecision decision{true, h};
    if (cfg.adaptive) {
      const double en = error_norm(step.err, x, step.x5, cfg);
      decision = step_control(en, h_eff, cfg);
    }
    if (decision.accept) {
      t = last ? t1 : t + direction * h_eff;
      x = std::move(step.x5);
      if (!x.all_finite()) throw SolverError("integrate: non-finite state");
      k1 = std::move(step.k_last);
      ++sol.stats.accepted;
      if (dense) {
        sol.trajectory->times.push_back(t);
        sol.trajectory->states.push_back(x.detached());
      }
      if (cfg.adaptive) h = decision.h_next;
    } else {
      ++sol.stats.rejected;
      if (h_eff <= cfg.h_min) {
        throw SolverError("integrate: step size underflow at t = " +
                          std::to_string(t));
      }
      h = std::min(decision.h_next, h_eff);
    }
    if (sol.stats.accepted + sol.stats.rejected >= cfg.max_steps &&
        std::abs(t1 - t) > 1e-14 * std::max(1.0, std::abs(t1))) {
      throw SolverError("integrate: exceeded max_steps = " +
                        std::to_string(cfg.max_steps));
    }
  }
  sol.x = std::move(x);
  sol.stats.elapsed = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start)
                          .count();
  return sol;
}

std::vector<Tensor> integrate_to_times(const VectorField& f, const Tensor& x0,
                                       double t0, std::span<const double> times,
                                       const SolverConfig& cfg,
                                       SolveStats* stats) {
  std::vector<Tensor> out;
  out.reserve(times.size());
  Tensor x = x0;
  double t = t0;
  SolveStats total;
  for (double target : times) {
    if (target < t) {
      throw SolverError("integrate_to_times: times must be sorted and >= t0");
    }
    if (target > t) {
      Solution s = integrate(f, x, t, target, cfg);
      x = std::move(s.x);
      total.nfe += s.stats.nfe;
      total.accepted += s.stats.accepted;
      total.rejected += s.stats.rejected;
      total.elapsed += s.stats.elapsed;
      t = target;
    }
    out.push_back(x);
  }
  if (stats != nullptr) *stats = total;
  return out;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const std::size_t dim = traj.states.empty() ? 0 : traj.states.front().size();
  os << 't';
  for (std::size_t i = 0; i < dim; ++i) os << ",x_" << i;
  os << '\n';
  char buf[64];
  auto put = [&](double v) {
    auto res = std::to_chars(buf, buf + sizeof(buf), v,
                             std::chars_format::general, 17);
    os.write(buf, res.ptr - buf);
  };
  for (std::size_t r = 0; r < traj.times.size(); ++r) {
    put(traj.times[r]);
    for (double v : traj.states[r].values()) {
      os << ',';
      put(v);
    }
    os << '\n';
  }
}

}  // namespace odeassign

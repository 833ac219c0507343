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

#include <cmath>

#include "doctest.h"
#include "odeassign/diagnostics.hpp"
#include "odeassign/nodelayer.hpp"
#include "odeassign/rng.hpp"
#include "support.hpp"

using namespace odeassign;
using testing::to_vec;

namespace {

SolverConfig tight(double tol, double t_end = 1.0) {
  SolverConfig cfg;
  cfg.atol = cfg.rtol = tol;
  cfg.t_end = t_end;
  return cfg;
}

std::vector<double> flat(const NodeGradients& g) {
  auto out = to_vec(g.dx0);
  const auto p = g.dparams.flatten();
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

/// Linear field f = w·x (+ t column zero) with no hidden layers.
OdeFunc linear_field(std::size_t dim) {
  return OdeFunc("lin", {.state_dim = dim, .hidden = 1, .hidden_layers = 0});
}

/// L = c·xT for a fixed vector c, so dL/dxT = c.
double loss_through_solve(const OdeFunc& func, const ParamSet& params,
                          const Tensor& x0, const Tensor& c,
                          const SolverConfig& cfg) {
  const Tensor xT = node_forward(func, params, x0, cfg).xT;
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * xT[i];
  return s;
}

/// Central differences of the loss over x0 and every field parameter.
std::vector<double> fd_gradient(const OdeFunc& func, const ParamSet& params,
                                const Tensor& x0, const Tensor& c,
                                const SolverConfig& cfg) {
  auto g = testing::central_diff(
      [&](const std::vector<double>& v) {
        return loss_through_solve(func, params, Tensor(x0.shape(), v), c, cfg);
      },
      to_vec(x0));
  const auto pg = testing::central_diff(
      [&](const std::vector<double>& v) {
        ParamSet p = params;
        p.unflatten(v);
        return loss_through_solve(func, p, x0, c, cfg);
      },
      params.flatten());
  g.insert(g.end(), pg.begin(), pg.end());
  return g;
}

}  // namespace

TEST_CASE("OdeFunc: zero parameters give a zero field") {
  const OdeFunc f("f", {.state_dim = 3, .hidden = 5, .hidden_layers = 2});
  ParamSet p;
  f.add_zero_params(p);
  CHECK(p.count() == 6);
  const Tensor y = f.eval(p, Tensor::vector({1, -2, 3}), 0.7);
  for (double v : y.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(f.eval(p, Tensor::vector({1, 2}), 0.0), ShapeError);
}

TEST_CASE("OdeFunc: linear configuration reduces to W_x·x") {
  const OdeFunc f = linear_field(2);
  ParamSet p;
  f.add_zero_params(p);
  p.assign("lin.fc0.weight", Tensor::matrix(2, 3, {1, 2, 0, -1, 0.5, 0}));
  const Tensor y = f.eval(p, Tensor::vector({3, 4}), 9.0);
  CHECK(to_vec(y) == std::vector<double>{11, -1});
}

TEST_CASE("OdeFunc: matches a plain-loop MLP") {
  const OdeFunc f("f", {.state_dim = 4, .hidden = 6, .hidden_layers = 2});
  ParamSet p;
  f.init_params(p, 3);
  Rng rng(3);
  for (const auto& name : f.param_names()) {
    p.assign(name, testing::random_tensor(rng, p.at(name).shape(), 0.5));
  }
  const Tensor x = testing::random_tensor(rng, {4});
  const double t = 0.3;
  std::vector<double> h(x.values().begin(), x.values().end());
  h.push_back(t);
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor& W = p.at(f.weight_name(l));
    const Tensor& b = p.at(f.bias_name(l));
    std::vector<double> next(W.rows());
    for (std::size_t i = 0; i < W.rows(); ++i) {
      double s = b[i];
      for (std::size_t j = 0; j < W.cols(); ++j) s += W[i * W.cols() + j] * h[j];
      next[i] = l < 2 ? std::tanh(s) : s;
    }
    h = next;
  }
  const Tensor y = f.eval(p, x, t);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(y[i] == doctest::Approx(h[i]).epsilon(1e-13));
  }
}

TEST_CASE("OdeFunc: row states and the context input") {
  const OdeFunc f("f", {.state_dim = 3, .hidden = 4, .hidden_layers = 1,
                        .context = true});
  CHECK(f.input_dim() == 7);
  ParamSet p;
  f.init_params(p, 1);
  Rng rng(2);
  const Tensor X = testing::random_tensor(rng, {4, 3});
  const Tensor Y = f.eval(p, X, 0.2);
  CHECK(Y.shape() == Shape{4, 3});
  // Changing one row moves the others through the set mean.
  Tensor X2 = X.detached();
  X2.mutable_values()[0] += 1.0;
  const Tensor Y2 = f.eval(p, X2, 0.2);
  CHECK(Y2[3 * 3] != Y[3 * 3]);
}

TEST_CASE("node_forward examples") {
  const OdeFunc f("f", {.state_dim = 3, .hidden = 8, .hidden_layers = 2});
  ParamSet zero;
  f.add_zero_params(zero);
  const Tensor x0 = Tensor::vector({0.5, -1, 2});
  for (double t_end : {0.1, 1.5, 4.0}) {
    CHECK(to_vec(node_forward(f, zero, x0, tight(1e-3, t_end)).xT) == to_vec(x0));
  }
  const OdeFunc lin = linear_field(1);
  ParamSet p;
  lin.add_zero_params(p);
  p.assign("lin.fc0.weight", Tensor::matrix(1, 2, {-1.0, 0.0}));
  const double tol = 1e-6;
  const auto r = node_forward(lin, p, Tensor::vector({1.0}), tight(tol));
  CHECK(std::abs(r.xT[0] - std::exp(-1.0)) <= 10 * tol);
}

TEST_CASE("zero field: both paths return dL/dxT unchanged") {
  const OdeFunc f("f", {.state_dim = 3, .hidden = 8, .hidden_layers = 2});
  ParamSet zero;
  f.add_zero_params(zero);
  const Tensor x0 = Tensor::vector({0.5, -1, 2});
  const Tensor seed = Tensor::vector({1, 2, -3});
  const auto adj = node_backward_adjoint(f, zero, x0, seed, tight(1e-8));
  const auto dis = node_backward_discretize(f, zero, x0, seed, tight(1e-8));
  CHECK(testing::worst_relative(to_vec(adj.dx0), to_vec(seed), 1e-12) <= 1e-12);
  CHECK(to_vec(dis.dx0) == to_vec(seed));
}

TEST_CASE("zero field with L = ½‖xT‖²") {
  // f = b (last bias) at b = 0: xT = x0 + b·T, so dL/db = T·x0 and dL/dx0 = x0.
  const OdeFunc f("f", {.state_dim = 3, .hidden = 4, .hidden_layers = 1});
  ParamSet zero;
  f.add_zero_params(zero);
  const Tensor x0 = Tensor::vector({0.5, -1, 2});
  const SolverConfig cfg = tight(1e-9, 1.5);
  const auto xT = node_forward(f, zero, x0, cfg).xT;
  for (const auto& g : {node_backward_adjoint(f, zero, xT, xT, cfg),
                        node_backward_discretize(f, zero, x0, xT, cfg)}) {
    CHECK(testing::worst_relative(to_vec(g.dx0), to_vec(x0), 1e-12) <= 1e-8);
    const auto db = to_vec(g.dparams.at("f.fc1.bias"));
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(db[i] == doctest::Approx(1.5 * x0[i]).epsilon(1e-8));
    }
  }
  const auto fd = testing::central_diff(
      [&](const std::vector<double>& b) {
        ParamSet p = zero;
        p.assign("f.fc1.bias", Tensor::vector(b));
        const auto y = node_forward(f, p, x0, cfg).xT;
        double s = 0.0;
        for (double v : y.values()) s += 0.5 * v * v;
        return s;
      },
      {0.0, 0.0, 0.0});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(fd[i] == doctest::Approx(1.5 * x0[i]).epsilon(1e-8));
  }
}

TEST_CASE("zero seed gives exactly zero gradients") {
  const OdeFunc f("f", {.state_dim = 4, .hidden = 8, .hidden_layers = 2});
  ParamSet p;
  f.init_params(p, 4);
  const Tensor x0 = Tensor::vector({1, 2, 3, 4});
  const Tensor zero(Shape{4}, 0.0);
  const auto xT = node_forward(f, p, x0, tight(1e-6)).xT;
  for (const auto& g : {node_backward_adjoint(f, p, xT, zero, tight(1e-6)),
                        node_backward_discretize(f, p, x0, zero, tight(1e-6))}) {
    for (double v : flat(g)) CHECK(v == 0.0);
  }
}

TEST_CASE("scalar linear field: discretize matches the closed form") {
  // x' = θx, xT = x0·e^{θT}, dxT/dθ = x0·T·e^{θT}, dxT/dx0 = e^{θT}.
  const OdeFunc lin = linear_field(1);
  ParamSet p;
  lin.add_zero_params(p);
  const double theta = 0.7, x0 = 1.3, T = 1.2;
  p.assign("lin.fc0.weight", Tensor::matrix(1, 2, {theta, 0.0}));
  const auto g = node_backward_discretize(lin, p, Tensor::vector({x0}),
                                          Tensor::vector({1.0}), tight(1e-10, T));
  const double e = std::exp(theta * T);
  CHECK(std::abs(g.dparams.at("lin.fc0.weight")[0] - x0 * T * e) <=
        1e-5 * x0 * T * e);
  CHECK(std::abs(g.dx0[0] - e) <= 1e-5 * e);
}

TEST_CASE("discretize is the exact gradient of the discrete solve") {
  // Fixed steps keep the step sequence independent of the parameters, so
  // central differences of the solver output see the same computation.
  const OdeFunc f("f", {.state_dim = 4, .hidden = 8, .hidden_layers = 2});
  ParamSet p;
  f.init_params(p, 7);
  Rng rng(7);
  const Tensor x0 = testing::random_tensor(rng, {4});
  const Tensor c = testing::random_tensor(rng, {4});
  SolverConfig cfg = tight(1e-6);
  cfg.adaptive = false;
  cfg.h_init = 0.05;
  const auto g = node_backward_discretize(f, p, x0, c, cfg);
  const auto fd = fd_gradient(f, p, x0, c, cfg);
  CHECK(testing::worst_relative(flat(g), fd, 1e-6, 1e-6) <= 1e-5);
}

TEST_CASE("adjoint and discretize agree with finite differences") {
  const SolverConfig cfg = tight(1e-8);
  SolverConfig reference = tight(1e-12);
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    const OdeFunc f("f", {.state_dim = 4, .hidden = 8, .hidden_layers = 2});
    ParamSet p;
    f.init_params(p, 100 + draw);
    Rng rng(200 + draw);
    const Tensor x0 = testing::random_tensor(rng, {4});
    const Tensor c = testing::random_tensor(rng, {4});
    const auto xT = node_forward(f, p, x0, cfg).xT;
    const auto adj = flat(node_backward_adjoint(f, p, xT, c, cfg));
    const auto dis = flat(node_backward_discretize(f, p, x0, c, cfg));
    const auto fd = fd_gradient(f, p, x0, c, reference);
    CHECK(max_norm_relative_error(adj, fd) <= 1e-4);
    CHECK(max_norm_relative_error(dis, fd) <= 1e-4);
  }
}

TEST_CASE("adjoint agrees with discretize on random 8-d fields") {
  const SolverConfig cfg = tight(1e-8);
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    const OdeFunc f("f", {.state_dim = 8, .hidden = 16, .hidden_layers = 2});
    ParamSet p;
    f.init_params(p, 300 + draw);
    Rng rng(400 + draw);
    const Tensor x0 = testing::random_tensor(rng, {8});
    const Tensor c = testing::random_tensor(rng, {8});
    const auto xT = node_forward(f, p, x0, cfg).xT;
    const auto adj = flat(node_backward_adjoint(f, p, xT, c, cfg));
    const auto dis = flat(node_backward_discretize(f, p, x0, c, cfg));
    worst = std::max(worst, max_norm_relative_error(adj, dis));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("gradients are linear in the seed") {
  const OdeFunc f("f", {.state_dim = 3, .hidden = 8, .hidden_layers = 2});
  ParamSet p;
  f.init_params(p, 12);
  const Tensor x0 = Tensor::vector({0.1, 0.2, -0.4});
  const Tensor c = Tensor::vector({1.0, -0.5, 2.0});
  const SolverConfig cfg = tight(1e-7);
  const auto xT = node_forward(f, p, x0, cfg).xT;
  const auto a1 = flat(node_backward_adjoint(f, p, xT, c, cfg));
  const auto a2 = flat(node_backward_adjoint(f, p, xT, scale(c, 2.0), cfg));
  const auto d1 = flat(node_backward_discretize(f, p, x0, c, cfg));
  const auto d2 = flat(node_backward_discretize(f, p, x0, scale(c, 2.0), cfg));
  std::vector<double> a1x2, d1x2;
  for (double v : a1) a1x2.push_back(2 * v);
  for (double v : d1) d1x2.push_back(2 * v);
  CHECK(max_norm_relative_error(a2, a1x2) <= 1e-6);
  CHECK(max_norm_relative_error(d2, d1x2) <= 1e-12);
}

TEST_CASE("ode_layer matches the standalone gradient paths") {
  const OdeFunc f("f", {.state_dim = 3, .hidden = 8, .hidden_layers = 2});
  ParamSet p;
  f.init_params(p, 21);
  const Tensor x0v = Tensor::vector({0.3, -0.2, 0.9});
  const Tensor c = Tensor::vector({1.0, 2.0, -1.0});
  const SolverConfig cfg = tight(1e-8);
  for (GradPath path : {GradPath::kAdjoint, GradPath::kDiscretize}) {
    Tape tape;
    Gradients g;
    Tensor x0;
    SolveStats stats;
    {
      TapeScope scope(&tape);
      const ParamSet w = p.watch(tape);
      x0 = tape.watch(x0v);
      const Tensor xT = ode_layer(f, w, x0, cfg, path, &stats);
      g = backward(tape, sum(mul(xT, c)));
    }
    CHECK(stats.nfe > 0);
    const auto xT = node_forward(f, p, x0v, cfg).xT;
    const NodeGradients ref =
        path == GradPath::kAdjoint
            ? node_backward_adjoint(f, p, xT, c, cfg)
            : node_backward_discretize(f, p, x0v, c, cfg);
    CHECK(max_norm_relative_error(to_vec(g.wrt(x0)), to_vec(ref.dx0)) <= 1e-12);
    for (const auto& name : f.param_names()) {
      CHECK(max_norm_relative_error(to_vec(g[name]),
                                    to_vec(ref.dparams.at(name))) <= 1e-12);
    }
  }
  CHECK(parse_grad_path("adjoint") == GradPath::kAdjoint);
  CHECK(to_string(GradPath::kDiscretize) == "discretize");
  CHECK_THROWS_AS(parse_grad_path("bogus"), Error);
}

TEST_CASE("discretize respects the tape memory cap") {
  const OdeFunc f("f", {.state_dim = 3, .hidden = 8, .hidden_layers = 2});
  ParamSet p;
  f.init_params(p, 1);
  CHECK_THROWS_AS(node_backward_discretize(f, p, Tensor::vector({1, 2, 3}),
                                           Tensor::vector({1, 1, 1}),
                                           tight(1e-8), 1024),
                  TapeError);
}

TEST_CASE("discretize path respects the tape memory cap") {
  const OdeFunc func = linear_field(3);
  ParamSet params;
  func.init_params(params, 4);
  const Tensor x0 = Tensor::vector({0.1, -0.2, 0.3});
  const Tensor seed = Tensor::vector({1.0, 1.0, 1.0});
  CHECK_THROWS_AS(node_backward_discretize(func, params, x0, seed, tight(1e-8), 256),
                  TapeError);
  CHECK_NOTHROW(node_backward_discretize(func, params, x0, seed, tight(1e-8)));
}

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

#include "odeassign/nodelayer.hpp"

#include <cmath>

#include "odeassign/rng.hpp"

namespace odeassign {

OdeFunc::OdeFunc(std::string prefix, OdeFuncSpec spec)
    : prefix_(std::move(prefix)), spec_(spec) {
  if (spec_.state_dim == 0) throw ShapeError("OdeFunc: state_dim must be > 0");
  if (spec_.hidden_layers > 0 && spec_.hidden == 0) {
    throw ShapeError("OdeFunc: hidden width must be > 0");
  }
}

std::size_t OdeFunc::input_dim() const noexcept {
  return spec_.state_dim * (spec_.context ? 2 : 1) + 1;
}

std::string OdeFunc::weight_name(std::size_t layer) const {
  return prefix_ + ".fc" + std::to_string(layer) + ".weight";
}

std::string OdeFunc::bias_name(std::size_t layer) const {
  return prefix_ + ".fc" + std::to_string(layer) + ".bias";
}

std::vector<std::string> OdeFunc::param_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < layer_count(); ++i) {
    names.push_back(weight_name(i));
    names.push_back(bias_name(i));
  }
  return names;
}

namespace {

std::pair<std::size_t, std::size_t> layer_shape(const OdeFuncSpec& spec,
                                                std::size_t in_dim,
                                                std::size_t layer) {
  const std::size_t fan_in = layer == 0 ? in_dim : spec.hidden;
  const std::size_t fan_out =
      layer == spec.hidden_layers ? spec.state_dim : spec.hidden;
  return {fan_out, fan_in};
}

}  // namespace

void OdeFunc::init_params(ParamSet& params, std::uint64_t seed,
                          double out_scale) const {
  for (std::size_t i = 0; i < layer_count(); ++i) {
    const auto [rows, cols] = layer_shape(spec_, input_dim(), i);
    Rng rng = Rng::derive(seed, weight_name(i));
    const double sd = (i == spec_.hidden_layers ? out_scale : 1.0) /
                      std::sqrt(static_cast<double>(cols));
    std::vector<double> w(rows * cols);
    for (auto& v : w) v = sd * rng.normal();
    params.add(weight_name(i), Tensor::matrix(rows, cols, std::move(w)));
    params.add(bias_name(i), Tensor(Shape{rows}, 0.0));
  }
}

void OdeFunc::add_zero_params(ParamSet& params) const {
  for (std::size_t i = 0; i < layer_count(); ++i) {
    const auto [rows, cols] = layer_shape(spec_, input_dim(), i);
    params.add(weight_name(i), Tensor(Shape{rows, cols}, 0.0));
    params.add(bias_name(i), Tensor(Shape{rows}, 0.0));
  }
}

Tensor OdeFunc::eval(const ParamSet& params, const Tensor& x, double t) const {
  const bool vector_state = x.rank() == 1;
  if ((x.rank() != 1 && x.rank() != 2) || x.cols() != spec_.state_dim) {
    throw ShapeError("OdeFunc " + prefix_ + ": state of shape " +
                     shape_string(x.shape()) + ", expected last dim " +
                     std::to_string(spec_.state_dim));
  }
  const Tensor X = vector_state ? reshape(x, Shape{1, spec_.state_dim}) : x;
  const std::size_t n = X.rows();
  std::vector<Tensor> parts{X};
  if (spec_.context) parts.push_back(row_mean_broadcast(X));
  parts.push_back(Tensor(Shape{n, 1}, t));
  Tensor h = hconcat(parts);
  for (std::size_t i = 0; i < spec_.hidden_layers; ++i) {
    h = activation(Activation::kTanh,
                   linear(params.at(weight_name(i)), params.at(bias_name(i)), h));
  }
  const std::size_t last = spec_.hidden_layers;
  Tensor out =
      linear(params.at(weight_name(last)), params.at(bias_name(last)), h);
  return vector_state ? reshape(out, Shape{spec_.state_dim}) : out;
}

VectorField OdeFunc::bind(const ParamSet& params) const {
  return [this, &params](double t, const Tensor& x) {
    return eval(params, x, t);
  };
}

namespace {

ParamSet field_params(const OdeFunc& func, const ParamSet& params) {
  ParamSet out;
  for (const auto& name : func.param_names()) out.add(name, params.at(name));
  return out;
}

}  // namespace

NodeResult node_forward(const OdeFunc& func, const ParamSet& params,
                        const Tensor& x0, const SolverConfig& cfg) {
  Solution s = integrate(func.bind(params), x0, 0.0, cfg.t_end, cfg);
  return {std::move(s.x), s.stats};
}

NodeGradients node_backward_adjoint(const OdeFunc& func, const ParamSet& params,
                                    const Tensor& xT, const Tensor& dL_dxT,
                                    const SolverConfig& cfg) {
  if (xT.shape() != dL_dxT.shape()) {
    throw ShapeError("node_backward_adjoint: state " +
                     shape_string(xT.shape()) + " vs gradient " +
                     shape_string(dL_dxT.shape()));
  }
  const ParamSet theta = field_params(func, params).detached();
  const std::size_t n = xT.size();
  const std::size_t p = theta.total_size();
  const Shape state_shape = xT.shape();

  std::vector<double> s0(2 * n + p, 0.0);
  std::copy(xT.values().begin(), xT.values().end(), s0.begin());
  std::copy(dL_dxT.values().begin(), dL_dxT.values().end(),
            s0.begin() + static_cast<std::ptrdiff_t>(n));

  const VectorField augmented = [&](double t, const Tensor& s) {
    const auto sv = s.values();
    Tensor x(state_shape, std::vector<double>(sv.begin(), sv.begin() +
                                                  static_cast<std::ptrdiff_t>(n)));
    Tensor a(state_shape,
             std::vector<double>(sv.begin() + static_cast<std::ptrdiff_t>(n),
                                 sv.begin() + static_cast<std::ptrdiff_t>(2 * n)));
    Tape tape;
    Tensor fx;
    Tensor xw;
    ParamSet tw;
    {
      TapeScope scope(&tape);
      xw = tape.watch(x);
      tw = theta.watch(tape);
      fx = func.eval(tw, xw, t);
    }
    std::vector<double> out(2 * n + p);
    std::copy(fx.values().begin(), fx.values().end(), out.begin());
    if (!tape.tracks(fx)) return Tensor(s.shape(), std::move(out));
    const Gradients g = vjp(tape, fx, a);
    const Tensor gx = g.wrt(xw);
    for (std::size_t i = 0; i < n; ++i) out[n + i] = -gx[i];
    std::size_t offset = 2 * n;
    for (const auto& [name, _] : theta) {
      const auto gv = g[name].values();
      for (std::size_t i = 0; i < gv.size(); ++i) out[offset + i] = -gv[i];
      offset += gv.size();
    }
    return Tensor(s.shape(), std::move(out));
  };

  TapeScope untaped(nullptr);
  Solution sol = integrate(augmented, Tensor::vector(std::move(s0)),
                           cfg.t_end, 0.0, cfg);
  const auto sv = sol.x.values();
  NodeGradients out;
  out.dx0 = Tensor(state_shape,
                   std::vector<double>(sv.begin() + static_cast<std::ptrdiff_t>(n),
                                       sv.begin() + static_cast<std::ptrdiff_t>(2 * n)));
  out.dparams = theta.zeros_like();
  out.dparams.unflatten(sv.subspan(2 * n, p));
  out.stats = sol.stats;
  return out;
}

NodeGradients node_backward_discretize(const OdeFunc& func,
                                       const ParamSet& params, const Tensor& x0,
                                       const Tensor& dL_dxT,
                                       const SolverConfig& cfg,
                                       std::size_t tape_cap_bytes) {
  if (x0.shape() != dL_dxT.shape()) {
    throw ShapeError("node_backward_discretize: state " +
                     shape_string(x0.shape()) + " vs gradient " +
                     shape_string(dL_dxT.shape()));
  }
  const ParamSet theta = field_params(func, params).detached();
  Tape tape;
  tape.set_memory_cap(tape_cap_bytes);
  Tensor xw;
  ParamSet tw;
  Solution sol;
  {
    TapeScope scope(&tape);
    xw = tape.watch(x0);
    tw = theta.watch(tape);
    sol = integrate(func.bind(tw), xw, 0.0, cfg.t_end, cfg);
  }
  const Gradients g = vjp(tape, sol.x, dL_dxT);
  NodeGradients out;
  out.dx0 = g.wrt(xw);
  out.dparams = theta.zeros_like();
  for (const auto& [name, _] : theta) out.dparams.assign(name, g[name]);
  out.stats = sol.stats;
  return out;
}

GradPath parse_grad_path(const std::string& name) {
  if (name == "adjoint") return GradPath::kAdjoint;
  if (name == "discretize") return GradPath::kDiscretize;
  throw Error("unknown gradient path '" + name +
              "' (expected adjoint or discretize)");
}

std::string to_string(GradPath path) {
  return path == GradPath::kAdjoint ? "adjoint" : "discretize";
}

Tensor ode_layer(const OdeFunc& func, const ParamSet& params, const Tensor& x0,
                 const SolverConfig& cfg, GradPath path, SolveStats* stats) {
  if (path == GradPath::kDiscretize) {
    Solution s = integrate(func.bind(params), x0, 0.0, cfg.t_end, cfg);
    if (stats != nullptr) *stats = s.stats;
    return std::move(s.x);
  }
  const ParamSet theta = field_params(func, params).detached();
  Solution s;
  {
    TapeScope untaped(nullptr);
    s = integrate(func.bind(theta), x0.detached(), 0.0, cfg.t_end, cfg);
  }
  if (stats != nullptr) *stats = s.stats;
  Tape* tape = Tape::active();
  if (tape == nullptr) return std::move(s.x);

  const ParamSet watched = field_params(func, params);
  std::vector<const Tensor*> inputs{&x0};
  for (const auto& [_, t] : watched) inputs.push_back(&t);
  const Tensor xT = s.x.detached();
  return tape->record(
      std::move(s.x), inputs,
      [func, theta, watched, x0, xT, cfg](std::span<const double> g, Tape& t) {
        const NodeGradients ng = node_backward_adjoint(
            func, theta, xT,
            Tensor(xT.shape(), std::vector<double>(g.begin(), g.end())), cfg);
        t.accumulate(x0, ng.dx0.values());
        for (const auto& [name, w] : watched) {
          t.accumulate(w, ng.dparams.at(name).values());
        }
      });
}

}  // namespace odeassign

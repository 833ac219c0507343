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
#include <string>
#include <vector>

#include "odeassign/odesolve.hpp"
#include "odeassign/param_set.hpp"
#include "odeassign/tensor.hpp"

namespace odeassign {

class Rng;

struct OdeFuncSpec {
  std::size_t state_dim = 0;
  std::size_t hidden = 64;
  /// 0 gives a single linear map from concat(x, t) to dx/dt.
  std::size_t hidden_layers = 2;
  /// Feed the mean over the rows of the state alongside each row, so every
  /// row's derivative can depend on the whole set.
  bool context = false;
};

/// MLP vector field f_θ(x, t) with tanh hidden activations.
///
/// The state is either a vector [state_dim] or a set of rows
/// [n, state_dim]; rows share the field. Parameters live in a caller-owned
/// ParamSet under `<prefix>.fc<i>.weight` / `.bias`.
class OdeFunc {
 public:
  OdeFunc(std::string prefix, OdeFuncSpec spec);

  const std::string& prefix() const noexcept { return prefix_; }
  const OdeFuncSpec& spec() const noexcept { return spec_; }
  std::size_t input_dim() const noexcept;
  std::size_t layer_count() const noexcept { return spec_.hidden_layers + 1; }
  std::string weight_name(std::size_t layer) const;
  std::string bias_name(std::size_t layer) const;
  std::vector<std::string> param_names() const;

  /// Adds this field's parameters to `params`: weights N(0, 1/fan_in),
  /// zero biases, output layer scaled by `out_scale`.
  void init_params(ParamSet& params, std::uint64_t seed,
                   double out_scale = 1.0) const;
  /// Zero-valued parameters of the right shapes.
  void add_zero_params(ParamSet& params) const;

  /// dx/dt at (x, t). Records on the active tape.
  Tensor eval(const ParamSet& params, const Tensor& x, double t) const;

  VectorField bind(const ParamSet& params) const;

 private:
  std::string prefix_;
  OdeFuncSpec spec_;
};

struct NodeResult {
  Tensor xT;
  SolveStats stats;
};

/// x(T) = x0 + ∫_0^T f_θ(x, t) dt with T = cfg.t_end.
NodeResult node_forward(const OdeFunc& func, const ParamSet& params,
                        const Tensor& x0, const SolverConfig& cfg);

struct NodeGradients {
  Tensor dx0;
  /// Gradients for the field's parameters only, keyed like `params`.
  ParamSet dparams;
  SolveStats stats;
};

/// Adjoint gradients: integrates (x, a, g) backwards from T to 0 with
/// dx/dt = f, da/dt = −aᵀ ∂f/∂x, dg/dt = −aᵀ ∂f/∂θ, a(T) = dL/dx(T), g(T) = 0.
/// Returns a(0) = dL/dx0 and g(0) = dL/dθ.
NodeGradients node_backward_adjoint(const OdeFunc& func, const ParamSet& params,
                                    const Tensor& xT, const Tensor& dL_dxT,
                                    const SolverConfig& cfg);

/// Exact gradient of the discrete solver output: reruns the forward solve on
/// a tape and back-propagates through every accepted step.
NodeGradients node_backward_discretize(
    const OdeFunc& func, const ParamSet& params, const Tensor& x0,
    const Tensor& dL_dxT, const SolverConfig& cfg,
    std::size_t tape_cap_bytes = std::size_t{1} << 31);

enum class GradPath { kAdjoint, kDiscretize };

GradPath parse_grad_path(const std::string& name);
std::string to_string(GradPath path);

/// ODE layer as a tape op. With kDiscretize every solver step is recorded on
/// the active tape. With kAdjoint the forward solve is untaped and one node
/// is recorded whose backward runs `node_backward_adjoint`. `params` may be
/// watched leaves of the active tape.
Tensor ode_layer(const OdeFunc& func, const ParamSet& params, const Tensor& x0,
                 const SolverConfig& cfg, GradPath path,
                 SolveStats* stats = nullptr);

}  // namespace odeassign

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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "odeassign/rng.hpp"
#include "odeassign/tensor.hpp"

namespace testing {

/// Central differences of `f` at `x`.
inline std::vector<double> central_diff(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + step;
    const double fp = f(x);
    x[i] = x0 - step;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// Largest |a - b| / max(|b|, floor) over coordinates where |b| > skip.
inline double worst_relative(const std::vector<double>& a,
                             const std::vector<double>& b, double floor,
                             double skip = 0.0) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(b[i]) <= skip) continue;
    worst = std::max(worst,
                     std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
  }
  return worst;
}

inline std::vector<double> to_vec(const odeassign::Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

inline odeassign::Tensor random_tensor(odeassign::Rng& rng,
                                       odeassign::Shape shape,
                                       double scale = 1.0) {
  odeassign::Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = scale * rng.normal();
  return t;
}

}  // namespace testing

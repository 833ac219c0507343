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
#include <limits>
#include <sstream>

#include "doctest.h"
#include "odeassign/param_set.hpp"
#include "odeassign/rng.hpp"
#include "odeassign/tensor.hpp"
#include "support.hpp"

using namespace odeassign;
using testing::central_diff;
using testing::to_vec;
using testing::worst_relative;

namespace {

/// d(Σ c·op(inputs))/d(inputs) by tape and by central differences.
void check_op_gradient(
    const std::function<Tensor(std::span<const Tensor>)>& op,
    std::vector<Tensor> inputs, std::uint64_t seed) {
  Rng rng(seed);
  Tensor probe_out;
  {
    TapeScope none(nullptr);
    probe_out = op(inputs);
  }
  Tensor c = testing::random_tensor(rng, probe_out.shape());
  auto loss_at = [&](const std::vector<Tensor>& xs) {
    const Tensor y = op(xs);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
    return s;
  };
  Tape tape;
  std::vector<Tensor> watched;
  Gradients g;
  {
    TapeScope scope(&tape);
    for (const auto& x : inputs) watched.push_back(tape.watch(x));
    g = backward(tape, sum(mul(op(watched), c)));
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const std::vector<double>& v) {
      std::vector<Tensor> xs = inputs;
      xs[k] = Tensor(inputs[k].shape(), v);
      return loss_at(xs);
    };
    const auto fd = central_diff(f, to_vec(inputs[k]));
    const auto tg = to_vec(g.wrt(watched[k]));
    CHECK(worst_relative(tg, fd, 1e-8, 1e-8) <= 1e-6);
  }
}

}  // namespace

TEST_CASE("linear: identity and hand arithmetic") {
  const Tensor I = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor y = linear(I, Tensor::vector({0, 0}), Tensor::vector({3, 4}));
  CHECK(to_vec(y) == std::vector<double>{3, 4});
  const Tensor W = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor z = linear(W, Tensor::vector({1, 1}), Tensor::vector({1, 1}));
  CHECK(to_vec(z) == std::vector<double>{4, 8});
}

TEST_CASE("linear: shape mismatch raises") {
  const Tensor W(Shape{2, 3});
  CHECK_THROWS_AS(linear(W, Tensor::vector({0, 0}), Tensor::vector({1, 1})),
                  ShapeError);
  CHECK_THROWS_AS(linear(W, Tensor::vector({0}), Tensor::vector({1, 1, 1})),
                  ShapeError);
}

TEST_CASE("linear and matmul match a triple-loop oracle") {
  Rng rng(11);
  const Tensor W = testing::random_tensor(rng, {8, 8});
  const Tensor b = testing::random_tensor(rng, {8});
  const Tensor x = testing::random_tensor(rng, {8});
  const Tensor y = linear(W, b, x);
  for (std::size_t i = 0; i < 8; ++i) {
    double s = b[i];
    for (std::size_t j = 0; j < 8; ++j) s += W[i * 8 + j] * x[j];
    CHECK(y[i] == doctest::Approx(s).epsilon(1e-14));
  }
  const Tensor A = testing::random_tensor(rng, {5, 7});
  const Tensor B = testing::random_tensor(rng, {7, 3});
  const Tensor C = matmul(A, B);
  REQUIRE(C.shape() == Shape{5, 3});
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += A[i * 7 + k] * B[k * 3 + j];
      CHECK(C[i * 3 + j] == doctest::Approx(s).epsilon(1e-14));
    }
  }
  // Row-wise form: X·Wᵀ + b.
  const Tensor X = testing::random_tensor(rng, {4, 8});
  const Tensor Y = linear(W, b, X);
  REQUIRE(Y.shape() == Shape{4, 8});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t i = 0; i < 8; ++i) {
      double s = b[i];
      for (std::size_t j = 0; j < 8; ++j) s += W[i * 8 + j] * X[r * 8 + j];
      CHECK(Y[r * 8 + i] == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("activation values") {
  CHECK(activation(Activation::kTanh, Tensor::scalar(0)).item() == 0.0);
  CHECK(activation(Activation::kRelu, Tensor::scalar(-2)).item() == 0.0);
  CHECK(activation(Activation::kRelu, Tensor::scalar(1.5)).item() == 1.5);
  const Tensor t = activation(Activation::kTanh, Tensor::vector({-30, 30}));
  CHECK(t[0] >= -1.0);
  CHECK(t[1] <= 1.0);
}

TEST_CASE("tanh derivative at 0.5 matches central differences") {
  Tape tape;
  Gradients g;
  Tensor x;
  {
    TapeScope scope(&tape);
    x = tape.watch(Tensor::scalar(0.5));
    g = backward(tape, activation(Activation::kTanh, x));
  }
  const double fd = (std::tanh(0.5 + 1e-5) - std::tanh(0.5 - 1e-5)) / 2e-5;
  CHECK(std::abs(g.wrt(x).item() - fd) <= 1e-8);
}

TEST_CASE("concat") {
  CHECK(to_vec(concat({Tensor::vector({1, 2}), Tensor::vector({3})})) ==
        std::vector<double>{1, 2, 3});
  CHECK(to_vec(concat({Tensor::vector(std::vector<double>{}),
                       Tensor::vector({5})})) == std::vector<double>{5});
  CHECK_THROWS_AS(concat(std::span<const Tensor>{}), ShapeError);
  CHECK_THROWS_AS(concat({Tensor(Shape{2, 2}), Tensor::vector({1})}),
                  ShapeError);

  Tape tape;
  Tensor a, b;
  Gradients g;
  {
    TapeScope scope(&tape);
    a = tape.watch(Tensor::vector({1, 2}));
    b = tape.watch(Tensor::vector({3}));
    g = backward(tape, sum(concat({a, b})));
  }
  CHECK(to_vec(g.wrt(a)) == std::vector<double>{1, 1});
  CHECK(to_vec(g.wrt(b)) == std::vector<double>{1});
}

TEST_CASE("softmax cross entropy") {
  const double uniform =
      softmax_cross_entropy(Tensor::vector({0.3, 0.3, 0.3, 0.3}), 2).item();
  CHECK(uniform == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  const double stable =
      softmax_cross_entropy(Tensor::vector({1000, 0}), 0).item();
  CHECK(std::isfinite(stable));
  CHECK(stable == doctest::Approx(0.0));
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor::vector({1, 2}), 2), Error);

  const std::vector<double> logits{0.5, -1.0, 2.0};
  Tape tape;
  Tensor x;
  Gradients g;
  {
    TapeScope scope(&tape);
    x = tape.watch(Tensor::vector(logits));
    g = backward(tape, softmax_cross_entropy(x, 1));
  }
  const Tensor p = softmax_rows(Tensor::vector(logits));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(g.wrt(x)[i] ==
          doctest::Approx(p[i] - (i == 1 ? 1.0 : 0.0)).epsilon(1e-12));
  }
  const auto fd = central_diff(
      [](const std::vector<double>& v) {
        return softmax_cross_entropy(Tensor::vector(v), 1).item();
      },
      logits);
  CHECK(worst_relative(to_vec(g.wrt(x)), fd, 1e-8) <= 1e-6);
}

TEST_CASE("backward basics") {
  {
    Tape tape;
    Tensor x;
    Gradients g;
    {
      TapeScope scope(&tape);
      x = tape.watch(Tensor::scalar(3.0), "x");
      g = backward(tape, mul(x, x));
    }
    CHECK(g.wrt(x).item() == 6.0);
    CHECK(g["x"].item() == 6.0);
  }
  {
    // Output depends on x only through a zero factor.
    Tape tape;
    Gradients g;
    {
      TapeScope scope(&tape);
      const Tensor x = tape.watch(Tensor::vector({1, 2}), "x");
      const Tensor w = tape.watch(Tensor::vector({4}), "unused");
      g = backward(tape, add(sum(scale(x, 0.0)), Tensor::scalar(5.0)));
      (void)w;
    }
    CHECK(to_vec(g["x"]) == std::vector<double>{0, 0});
    CHECK(to_vec(g["unused"]) == std::vector<double>{0});
  }
  {
    Tape tape;
    TapeScope scope(&tape);
    const Tensor x = tape.watch(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(backward(tape, x, 1.0), ShapeError);
    CHECK_THROWS_AS(backward(tape, Tensor::scalar(1.0)), TapeError);
  }
}

TEST_CASE("backward is linear in the seed") {
  Rng rng(5);
  const Tensor W = testing::random_tensor(rng, {4, 3});
  const Tensor b = testing::random_tensor(rng, {4});
  const Tensor x0 = testing::random_tensor(rng, {3});
  auto run = [&](double seed) {
    Tape tape;
    TapeScope scope(&tape);
    const Tensor x = tape.watch(x0, "x");
    const Tensor y = sum(activation(Activation::kTanh, linear(W, b, x)));
    return to_vec(backward(tape, y, seed)["x"]);
  };
  const auto g1 = run(1.0);
  const auto g2 = run(2.0);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == 2.0 * g1[i]);
}

TEST_CASE("ops record nothing without an active tape") {
  Tape tape;
  Tensor x;
  {
    TapeScope scope(&tape);
    x = tape.watch(Tensor::vector({1, 2}));
  }
  const std::size_t before = tape.size();
  const Tensor y = scale(x, 2.0);
  CHECK(tape.size() == before);
  CHECK_FALSE(tape.tracks(y));
  {
    TapeScope scope(&tape);
    {
      TapeScope pause(nullptr);
      CHECK_FALSE(tape.tracks(scale(x, 2.0)));
    }
    CHECK(tape.tracks(scale(x, 2.0)));
  }
}

TEST_CASE("tape memory cap") {
  Tape tape;
  tape.set_memory_cap(64);
  TapeScope scope(&tape);
  const Tensor x = tape.watch(Tensor(Shape{16}, 1.0));
  CHECK_THROWS_AS(scale(x, 2.0), TapeError);
}

TEST_CASE("non-finite results raise") {
  CHECK_THROWS_AS(scale(Tensor::vector({1e308}), 10.0), NonFiniteError);
  CHECK_THROWS_AS(
      mul(Tensor::vector({std::numeric_limits<double>::infinity()}),
          Tensor::vector({0.0})),
      NonFiniteError);
}

TEST_CASE("finite-difference agreement of every differentiable op") {
  Rng rng(2024);
  auto R = [&](Shape s) { return testing::random_tensor(rng, std::move(s)); };
  using V = std::span<const Tensor>;
  check_op_gradient([](V v) { return linear(v[0], v[1], v[2]); },
                    {R({3, 4}), R({3}), R({4})}, 1);
  check_op_gradient([](V v) { return linear(v[0], v[1], v[2]); },
                    {R({3, 4}), R({3}), R({5, 4})}, 2);
  check_op_gradient([](V v) { return matmul(v[0], v[1]); },
                    {R({3, 4}), R({4, 2})}, 3);
  check_op_gradient([](V v) { return activation(Activation::kTanh, v[0]); },
                    {R({6})}, 4);
  // Keep relu inputs away from the kink.
  check_op_gradient([](V v) { return activation(Activation::kRelu, v[0]); },
                    {Tensor::vector({-1.0, 0.5, 2.0, -0.3})}, 5);
  check_op_gradient([](V v) { return concat(v); }, {R({2}), R({3})}, 6);
  check_op_gradient([](V v) { return hconcat(v); }, {R({3, 2}), R({3, 1})}, 7);
  check_op_gradient([](V v) { return row_mean_broadcast(v[0]); }, {R({4, 3})},
                    8);
  check_op_gradient(
      [](V v) {
        const std::size_t idx[] = {2, 0, 2};
        return gather_rows(v[0], idx);
      },
      {R({3, 2})}, 9);
  check_op_gradient([](V v) { return add(v[0], v[1]); }, {R({2, 3}), R({2, 3})},
                    10);
  check_op_gradient([](V v) { return sub(v[0], v[1]); }, {R({4}), R({4})}, 11);
  check_op_gradient([](V v) { return mul(v[0], v[1]); }, {R({4}), R({4})}, 12);
  check_op_gradient([](V v) { return scale(v[0], -1.7); }, {R({4})}, 13);
  check_op_gradient(
      [](V v) {
        const double c[] = {0.5, -2.0};
        return add_scaled(v[0], c, v.subspan(1));
      },
      {R({3}), R({3}), R({3})}, 14);
  check_op_gradient([](V v) { return sum(v[0]); }, {R({2, 2})}, 15);
  check_op_gradient([](V v) { return reshape(v[0], {6}); }, {R({2, 3})}, 16);
  check_op_gradient([](V v) { return softmax_cross_entropy(v[0], 2); },
                    {R({4})}, 17);
  check_op_gradient(
      [](V v) {
        const std::size_t t[] = {0, 3, 1};
        return softmax_cross_entropy_rows(v[0], t);
      },
      {R({3, 4})}, 18);
}

TEST_CASE("tape-free forward replays bit-identically") {
  Rng rng(3);
  const Tensor W = testing::random_tensor(rng, {16, 16});
  const Tensor b = testing::random_tensor(rng, {16});
  const Tensor X = testing::random_tensor(rng, {5, 16});
  const auto a = to_vec(activation(Activation::kTanh, linear(W, b, X)));
  const auto c = to_vec(activation(Activation::kTanh, linear(W, b, X)));
  CHECK(a == c);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(8);
  const Tensor p = softmax_rows(testing::random_tensor(rng, {6, 5}, 10.0));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(p[r * 5 + c] >= 0.0);
      s += p[r * 5 + c];
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("ParamSet: lexicographic order and bit-exact round trip") {
  Rng rng(4);
  ParamSet ps;
  ps.add("zeta", testing::random_tensor(rng, {3}));
  ps.add("alpha.weight", testing::random_tensor(rng, {2, 3}));
  ps.add("alpha.bias", Tensor::vector({1e-300, -0.0, 3.141592653589793}));
  CHECK(ps.names() ==
        std::vector<std::string>{"alpha.bias", "alpha.weight", "zeta"});
  CHECK(ps.total_size() == 12);
  CHECK_THROWS_AS(ps.add("zeta", Tensor::vector({1})), Error);
  CHECK_THROWS_AS(ps.assign("zeta", Tensor::vector({1})), ShapeError);

  std::stringstream ss;
  ps.write(ss);
  const ParamSet back = ParamSet::read(ss);
  CHECK(back.bitwise_equal(ps));
  CHECK(std::signbit(back.at("alpha.bias")[1]));

  auto flat = ps.flatten();
  ParamSet copy = ps.zeros_like();
  copy.unflatten(flat);
  CHECK(copy.bitwise_equal(ps));
  CHECK(ps.subset("alpha.").count() == 2);
}

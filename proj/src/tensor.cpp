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

#include "odeassign/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace odeassign {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

thread_local Tape* g_active_tape = nullptr;

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw NonFiniteError(std::string(op) + ": produced a non-finite value");
  }
}

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.values().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

// Records on the active tape, if any.
Tensor record(Tensor out, std::initializer_list<const Tensor*> inputs,
              Tape::Backward fn) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  return tape->record(std::move(out), inputs, std::move(fn));
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : shape_{0}, data_(std::make_shared<std::vector<double>>()) {}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(element_count(shape_),
                                                  fill)) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(values))) {
  if (element_count(shape_) != data_->size()) {
    throw ShapeError("tensor: shape " + shape_string(shape_) + " holds " +
                     std::to_string(element_count(shape_)) +
                     " elements, got " + std::to_string(data_->size()));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector{v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const noexcept {
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.back();
}

std::span<double> Tensor::mutable_values() {
  if (data_.use_count() > 1) {
    data_ = std::make_shared<std::vector<double>>(*data_);
  }
  tape_ = nullptr;
  return *data_;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item: tensor of shape " + shape_string(shape_) +
                     " is not a scalar");
  }
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  return t;
}

Tensor Tensor::with_shape(Shape shape) const {
  if (element_count(shape) != size()) {
    throw ShapeError("with_shape: cannot view " + shape_string(shape_) +
                     " as " + shape_string(shape));
  }
  Tensor t = detached();
  t.shape_ = std::move(shape);
  return t;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_->begin(), data_->end(),
                     [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Tape

Tape* Tape::active() noexcept { return g_active_tape; }

TapeScope::TapeScope(Tape* tape) noexcept : previous_(g_active_tape) {
  g_active_tape = tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

bool Tape::tracks(const Tensor& t) const noexcept {
  return t.tape_ == this && t.generation_ == generation_ &&
         t.node_ < nodes_.size();
}

Tensor Tape::watch(const Tensor& value, std::string name) {
  Tensor out = value.detached();
  Node node;
  node.size = out.size();
  node.shape = out.shape();
  node.name = std::move(name);
  node.leaf = true;
  bytes_ += node.size * sizeof(double);
  nodes_.push_back(std::move(node));
  out.tape_ = this;
  out.generation_ = generation_;
  out.node_ = static_cast<std::uint32_t>(nodes_.size() - 1);
  return out;
}

Tensor Tape::record(Tensor output, std::initializer_list<const Tensor*> inputs,
                    Backward backward) {
  return record(std::move(output),
                std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Tensor Tape::record(Tensor output, std::span<const Tensor* const> inputs,
                    Backward backward) {
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [this](const Tensor* t) { return tracks(*t); });
  if (!any) return output.detached();
  const std::size_t bytes = output.size() * sizeof(double);
  if (memory_cap_ != 0 && bytes_ + bytes > memory_cap_) {
    throw TapeError("tape memory cap of " + std::to_string(memory_cap_) +
                    " bytes exceeded");
  }
  bytes_ += bytes;
  Node node;
  node.backward = std::move(backward);
  node.size = output.size();
  node.shape = output.shape();
  nodes_.push_back(std::move(node));
  output.tape_ = this;
  output.generation_ = generation_;
  output.node_ = static_cast<std::uint32_t>(nodes_.size() - 1);
  return output;
}

void Tape::accumulate(const Tensor& target, std::span<const double> grad) {
  if (!tracks(target)) return;
  auto& buf = grads_[target.node_];
  if (buf.empty()) {
    buf.assign(grad.begin(), grad.end());
    return;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) buf[i] += grad[i];
}

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
  bytes_ = 0;
  ++generation_;
}

Gradients run_backward(Tape& tape, const Tensor& output, const Tensor& seed) {
  if (!tape.tracks(output)) {
    throw TapeError("backward: output is not connected to this tape");
  }
  if (seed.size() != output.size()) {
    throw ShapeError("backward: seed of shape " + shape_string(seed.shape()) +
                     " does not match output " + shape_string(output.shape()));
  }
  tape.grads_.assign(tape.nodes_.size(), {});
  tape.grads_[output.node_].assign(seed.values().begin(), seed.values().end());
  for (std::size_t i = output.node_ + 1; i-- > 0;) {
    auto& node = tape.nodes_[i];
    if (tape.grads_[i].empty() || node.leaf || !node.backward) continue;
    // Move out so buffers released as we go.
    std::vector<double> g = std::move(tape.grads_[i]);
    node.backward(g, tape);
    node.backward = nullptr;
  }
  Gradients out;
  for (std::size_t i = 0; i < tape.nodes_.size(); ++i) {
    const auto& node = tape.nodes_[i];
    if (!node.leaf) continue;
    Tensor g(node.shape, 0.0);
    if (!tape.grads_[i].empty()) {
      std::copy(tape.grads_[i].begin(), tape.grads_[i].end(),
                g.mutable_values().begin());
    }
    if (!node.name.empty()) {
      auto [it, inserted] = out.named_.emplace(node.name, g);
      if (!inserted) {
        auto dst = it->second.mutable_values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
      }
    }
    out.leaves_.emplace(static_cast<std::uint32_t>(i), std::move(g));
  }
  out.tape_ = &tape;
  out.generation_ = tape.generation_;
  tape.reset();
  return out;
}

Tensor Gradients::wrt(const Tensor& leaf) const {
  if (leaf.tape_ == tape_ && leaf.generation_ == generation_) {
    auto it = leaves_.find(leaf.node_);
    if (it != leaves_.end()) return it->second;
  }
  throw TapeError("gradients: tensor is not a watched leaf of this pass");
}

const Tensor& Gradients::operator[](const std::string& name) const {
  auto it = named_.find(name);
  if (it == named_.end()) {
    throw TapeError("gradients: no leaf named '" + name + "'");
  }
  return it->second;
}

Gradients backward(Tape& tape, const Tensor& output, double seed) {
  return backward(tape, output, Tensor::scalar(seed));
}

Gradients backward(Tape& tape, const Tensor& output, const Tensor& seed) {
  if (seed.size() != 1) throw ShapeError("backward: seed must be a scalar");
  if (output.size() != 1) {
    throw ShapeError("backward: output of shape " +
                     shape_string(output.shape()) + " is not a scalar");
  }
  return run_backward(tape, output, seed);
}

Gradients vjp(Tape& tape, const Tensor& output, const Tensor& seed) {
  return run_backward(tape, output, seed);
}

// ---------------------------------------------------------------------------
// Ops

Tensor linear(const Tensor& W, const Tensor& b, const Tensor& x) {
  if (W.rank() != 2 || b.rank() != 1 || b.size() != W.rows() ||
      (x.rank() != 1 && x.rank() != 2) || x.cols() != W.cols()) {
    throw ShapeError("linear: W " + shape_string(W.shape()) + ", b " +
                     shape_string(b.shape()) + ", x " +
                     shape_string(x.shape()) + " do not conform");
  }
  const std::size_t r = x.rows();
  const std::size_t m = W.rows();
  Tensor out(x.rank() == 1 ? Shape{m} : Shape{r, m});
  {
    MatMap Y(out.mutable_values().data(), static_cast<Eigen::Index>(r),
             static_cast<Eigen::Index>(m));
    Y.noalias() = as_matrix(x) * as_matrix(W).transpose();
    Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(
        b.values().data(), static_cast<Eigen::Index>(m));
  }
  check_finite(out, "linear");
  return record(std::move(out), {&W, &b, &x},
                [W, b, x, r, m](std::span<const double> g, Tape& tape) {
                  ConstMatMap G(g.data(), static_cast<Eigen::Index>(r),
                                static_cast<Eigen::Index>(m));
                  if (tape.tracks(x)) {
                    RowMatrix dx = G * as_matrix(W);
                    tape.accumulate(x, {dx.data(), x.size()});
                  }
                  if (tape.tracks(W)) {
                    RowMatrix dW = G.transpose() * as_matrix(x);
                    tape.accumulate(W, {dW.data(), W.size()});
                  }
                  if (tape.tracks(b)) {
                    Eigen::RowVectorXd db = G.colwise().sum();
                    tape.accumulate(b, {db.data(), b.size()});
                  }
                });
}

Tensor matmul(const Tensor& A, const Tensor& B) {
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
    throw ShapeError("matmul: " + shape_string(A.shape()) + " x " +
                     shape_string(B.shape()));
  }
  Tensor out(Shape{A.rows(), B.cols()});
  MatMap(out.mutable_values().data(), static_cast<Eigen::Index>(A.rows()),
         static_cast<Eigen::Index>(B.cols()))
      .noalias() = as_matrix(A) * as_matrix(B);
  check_finite(out, "matmul");
  return record(std::move(out), {&A, &B},
                [A, B](std::span<const double> g, Tape& tape) {
                  ConstMatMap G(g.data(), static_cast<Eigen::Index>(A.rows()),
                                static_cast<Eigen::Index>(B.cols()));
                  if (tape.tracks(A)) {
                    RowMatrix dA = G * as_matrix(B).transpose();
                    tape.accumulate(A, {dA.data(), A.size()});
                  }
                  if (tape.tracks(B)) {
                    RowMatrix dB = as_matrix(A).transpose() * G;
                    tape.accumulate(B, {dB.data(), B.size()});
                  }
                });
}

Tensor activation(Activation kind, const Tensor& x) {
  Tensor out(x.shape());
  auto y = out.mutable_values();
  const auto v = x.values();
  if (kind == Activation::kTanh) {
    for (std::size_t i = 0; i < v.size(); ++i) y[i] = std::tanh(v[i]);
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) y[i] = v[i] > 0.0 ? v[i] : 0.0;
  }
  check_finite(out, "activation");
  return record(out, {&x},
                [kind, x, out](std::span<const double> g, Tape& tape) {
                  std::vector<double> dx(g.size());
                  const auto xv = x.values();
                  const auto yv = out.values();
                  if (kind == Activation::kTanh) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      dx[i] = g[i] * (1.0 - yv[i] * yv[i]);
                    }
                  } else {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      dx[i] = xv[i] > 0.0 ? g[i] : 0.0;
                    }
                  }
                  tape.accumulate(x, dx);
                });
}

Tensor concat(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("concat: empty input list");
  std::vector<double> values;
  for (const auto& x : xs) {
    if (x.rank() != 1) {
      throw ShapeError("concat: input of shape " + shape_string(x.shape()) +
                       " is not 1-d");
    }
    values.insert(values.end(), x.values().begin(), x.values().end());
  }
  Tensor out = Tensor::vector(std::move(values));
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  std::vector<const Tensor*> inputs;
  for (const auto& x : xs) inputs.push_back(&x);
  std::vector<Tensor> parts(xs.begin(), xs.end());
  return tape->record(std::move(out), inputs,
                      [parts](std::span<const double> g, Tape& t) {
                        std::size_t offset = 0;
                        for (const auto& p : parts) {
                          t.accumulate(p, g.subspan(offset, p.size()));
                          offset += p.size();
                        }
                      });
}

Tensor concat(std::initializer_list<Tensor> xs) {
  return concat(std::span<const Tensor>(xs.begin(), xs.size()));
}

Tensor hconcat(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("hconcat: empty input list");
  const std::size_t r = xs.front().rows();
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.rank() != 2 || x.rows() != r) {
      throw ShapeError("hconcat: input of shape " + shape_string(x.shape()) +
                       " does not have " + std::to_string(r) + " rows");
    }
    total += x.cols();
  }
  Tensor out(Shape{r, total});
  auto y = out.mutable_values();
  std::size_t col = 0;
  for (const auto& x : xs) {
    const std::size_t c = x.cols();
    const auto v = x.values();
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * c), c,
                  y.begin() + static_cast<std::ptrdiff_t>(i * total + col));
    }
    col += c;
  }
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  std::vector<const Tensor*> inputs;
  for (const auto& x : xs) inputs.push_back(&x);
  std::vector<Tensor> parts(xs.begin(), xs.end());
  return tape->record(
      std::move(out), inputs,
      [parts, r, total](std::span<const double> g, Tape& t) {
        std::size_t col0 = 0;
        for (const auto& p : parts) {
          const std::size_t c = p.cols();
          if (t.tracks(p)) {
            std::vector<double> dp(r * c);
            for (std::size_t i = 0; i < r; ++i) {
              std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(i * total +
                                                                   col0),
                          c, dp.begin() + static_cast<std::ptrdiff_t>(i * c));
            }
            t.accumulate(p, dp);
          }
          col0 += c;
        }
      });
}

Tensor hconcat(std::initializer_list<Tensor> xs) {
  return hconcat(std::span<const Tensor>(xs.begin(), xs.size()));
}

Tensor row_mean_broadcast(const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError("row_mean_broadcast: expected a matrix, got " +
                     shape_string(x.shape()));
  }
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  std::vector<double> mean(c, 0.0);
  const auto v = x.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) mean[j] += v[i * c + j];
  }
  for (auto& m : mean) m /= static_cast<double>(r);
  Tensor out(x.shape());
  auto y = out.mutable_values();
  for (std::size_t i = 0; i < r; ++i) {
    std::copy(mean.begin(), mean.end(),
              y.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return record(std::move(out), {&x},
                [x, r, c](std::span<const double> g, Tape& tape) {
                  std::vector<double> colsum(c, 0.0);
                  for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                      colsum[j] += g[i * c + j];
                    }
                  }
                  std::vector<double> dx(r * c);
                  for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                      dx[i * c + j] = colsum[j] / static_cast<double>(r);
                    }
                  }
                  tape.accumulate(x, dx);
                });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index) {
  if (table.rank() != 2) {
    throw ShapeError("gather_rows: table must be a matrix");
  }
  const std::size_t c = table.cols();
  Tensor out(Shape{index.size(), c});
  auto y = out.mutable_values();
  const auto v = table.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= table.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(index[i]) +
                       " out of range");
    }
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(index[i] * c), c,
                y.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return record(std::move(out), {&table},
                [table, idx, c](std::span<const double> g, Tape& tape) {
                  std::vector<double> dt(table.size(), 0.0);
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                      dt[idx[i] * c + j] += g[i * c + j];
                    }
                  }
                  tape.accumulate(table, dt);
                });
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()) + " differ");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto y = out.mutable_values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  check_finite(out, "add");
  return record(std::move(out), {&a, &b},
                [a, b](std::span<const double> g, Tape& tape) {
                  tape.accumulate(a, g);
                  tape.accumulate(b, g);
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto y = out.mutable_values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  check_finite(out, "sub");
  return record(std::move(out), {&a, &b},
                [a, b](std::span<const double> g, Tape& tape) {
                  tape.accumulate(a, g);
                  if (tape.tracks(b)) {
                    std::vector<double> nb(g.begin(), g.end());
                    for (auto& v : nb) v = -v;
                    tape.accumulate(b, nb);
                  }
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto y = out.mutable_values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  check_finite(out, "mul");
  return record(std::move(out), {&a, &b},
                [a, b](std::span<const double> g, Tape& tape) {
                  std::vector<double> d(g.size());
                  if (tape.tracks(a)) {
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * b[i];
                    tape.accumulate(a, d);
                  }
                  if (tape.tracks(b)) {
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * a[i];
                    tape.accumulate(b, d);
                  }
                });
}

Tensor scale(const Tensor& x, double c) {
  Tensor out(x.shape());
  auto y = out.mutable_values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = c * x[i];
  check_finite(out, "scale");
  return record(std::move(out), {&x},
                [x, c](std::span<const double> g, Tape& tape) {
                  std::vector<double> d(g.begin(), g.end());
                  for (auto& v : d) v *= c;
                  tape.accumulate(x, d);
                });
}

Tensor add_scaled(const Tensor& base, std::span<const double> coeffs,
                  std::span<const Tensor> terms) {
  if (coeffs.size() != terms.size()) {
    throw ShapeError("add_scaled: coefficient and term counts differ");
  }
  Tensor out = base.detached();
  auto y = out.mutable_values();
  for (std::size_t k = 0; k < terms.size(); ++k) {
    require_same_shape(base, terms[k], "add_scaled");
    if (coeffs[k] == 0.0) continue;
    const auto v = terms[k].values();
    const double c = coeffs[k];
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c * v[i];
  }
  check_finite(out, "add_scaled");
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  std::vector<const Tensor*> inputs{&base};
  for (const auto& t : terms) inputs.push_back(&t);
  std::vector<Tensor> saved(terms.begin(), terms.end());
  std::vector<double> cs(coeffs.begin(), coeffs.end());
  return tape->record(std::move(out), inputs,
                      [base, saved, cs](std::span<const double> g, Tape& t) {
                        t.accumulate(base, g);
                        std::vector<double> d(g.size());
                        for (std::size_t k = 0; k < saved.size(); ++k) {
                          if (cs[k] == 0.0 || !t.tracks(saved[k])) continue;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            d[i] = cs[k] * g[i];
                          }
                          t.accumulate(saved[k], d);
                        }
                      });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  return record(std::move(out), {&x},
                [x](std::span<const double> g, Tape& tape) {
                  std::vector<double> d(x.size(), g[0]);
                  tape.accumulate(x, d);
                });
}

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor out = x.with_shape(std::move(shape));
  return record(std::move(out), {&x},
                [x](std::span<const double> g, Tape& tape) {
                  tape.accumulate(x, g);
                });
}

namespace {

// Writes softmax of `z` into `p`; returns log-sum-exp.
double softmax_into(std::span<const double> z, std::span<double> p) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - mx);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return mx + std::log(s);
}

}  // namespace

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target) {
  if (logits.rank() != 1 || logits.size() == 0) {
    throw ShapeError("softmax_cross_entropy: logits must be a non-empty vector");
  }
  if (target >= logits.size()) {
    throw ShapeError("softmax_cross_entropy: target " + std::to_string(target) +
                     " out of range for " + std::to_string(logits.size()) +
                     " classes");
  }
  std::vector<double> p(logits.size());
  const double lse = softmax_into(logits.values(), p);
  Tensor out = Tensor::scalar(lse - logits[target]);
  check_finite(out, "softmax_cross_entropy");
  return record(std::move(out), {&logits},
                [logits, p, target](std::span<const double> g, Tape& tape) {
                  std::vector<double> d(p);
                  d[target] -= 1.0;
                  for (auto& v : d) v *= g[0];
                  tape.accumulate(logits, d);
                });
}

Tensor softmax_cross_entropy_rows(const Tensor& logits,
                                  std::span<const std::size_t> targets) {
  if (logits.rank() != 2 || logits.rows() != targets.size() ||
      logits.rows() == 0) {
    throw ShapeError("softmax_cross_entropy_rows: logits " +
                     shape_string(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t r = logits.rows();
  const std::size_t c = logits.cols();
  std::vector<double> p(r * c);
  double loss = 0.0;
  const auto z = logits.values();
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] >= c) {
      throw ShapeError("softmax_cross_entropy_rows: target out of range");
    }
    const double lse =
        softmax_into(z.subspan(i * c, c), std::span(p).subspan(i * c, c));
    loss += lse - z[i * c + targets[i]];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(r));
  check_finite(out, "softmax_cross_entropy_rows");
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return record(std::move(out), {&logits},
                [logits, p, tg, r, c](std::span<const double> g, Tape& tape) {
                  std::vector<double> d(p);
                  for (std::size_t i = 0; i < r; ++i) d[i * c + tg[i]] -= 1.0;
                  const double s = g[0] / static_cast<double>(r);
                  for (auto& v : d) v *= s;
                  tape.accumulate(logits, d);
                });
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out(logits.shape());
  const std::size_t c = logits.cols();
  auto y = out.mutable_values();
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    softmax_into(logits.values().subspan(i * c, c), y.subspan(i * c, c));
  }
  return out;
}

}  // namespace odeassign

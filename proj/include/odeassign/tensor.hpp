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
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace odeassign {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class TapeError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class Tape;
class Gradients;

/// Dense row-major array of doubles.
///
/// Storage is shared between copies and treated as immutable once a tensor
/// has been handed to an op; `mutable_values()` copies on write. A tensor
/// produced while a tape is active carries a handle to its tape node.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_->size(); }
  /// Leading dimension of a matrix; 1 for vectors and scalars.
  std::size_t rows() const noexcept;
  /// Trailing dimension; 1 for scalars.
  std::size_t cols() const noexcept;

  std::span<const double> values() const noexcept { return *data_; }
  /// Writable view. Detaches the tensor from its tape node.
  std::span<double> mutable_values();
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  /// Same values, no tape node.
  Tensor detached() const;
  /// Same storage, new shape (element count must match). Untracked.
  Tensor with_shape(Shape shape) const;

  bool all_finite() const noexcept;

 private:
  friend class Tape;
  friend class Gradients;
  friend Gradients run_backward(Tape&, const Tensor&, const Tensor&);
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  const Tape* tape_ = nullptr;
  std::uint64_t generation_ = 0;
  std::uint32_t node_ = 0;
};

/// Append-only record of primitive operations for reverse-mode
/// differentiation. Nodes are appended in execution order, so parents always
/// precede children.
class Tape {
 public:
  /// Receives dL/d(output) of a node and pushes contributions to its
  /// parents through `Tape::accumulate`.
  using Backward = std::function<void(std::span<const double>, Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiable leaf. Named leaves are reported
  /// by name in `Gradients`.
  Tensor watch(const Tensor& value, std::string name = {});

  /// Records `output` as produced from `inputs`. Returns the output
  /// unchanged when none of the inputs is tracked by this tape.
  Tensor record(Tensor output, std::initializer_list<const Tensor*> inputs,
                Backward backward);
  Tensor record(Tensor output, std::span<const Tensor* const> inputs,
                Backward backward);

  /// Adds `grad` into the gradient buffer of `target`. No-op for tensors
  /// this tape does not track.
  void accumulate(const Tensor& target, std::span<const double> grad);

  bool tracks(const Tensor& t) const noexcept;
  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t recorded_bytes() const noexcept { return bytes_; }

  /// Recording past this many bytes of node outputs raises TapeError.
  void set_memory_cap(std::size_t bytes) noexcept { memory_cap_ = bytes; }

  /// Innermost tape installed on this thread by a TapeScope, or nullptr.
  static Tape* active() noexcept;

 private:
  friend class Gradients;
  friend Gradients run_backward(Tape&, const Tensor&, const Tensor&);

  struct Node {
    Backward backward;
    std::size_t size = 0;
    Shape shape;
    std::string name;
    bool leaf = false;
  };

  void reset();

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::uint64_t generation_ = 1;
  std::size_t bytes_ = 0;
  std::size_t memory_cap_ = 0;
};

/// Installs a tape (or nullptr, to suspend recording) for the lifetime of the
/// scope on the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape* tape) noexcept;
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Leaf gradients produced by a backward pass.
class Gradients {
 public:
  /// Gradient of a watched leaf; zeros if the output did not depend on it.
  Tensor wrt(const Tensor& leaf) const;
  /// Gradient of a named leaf.
  const Tensor& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return named_.contains(name); }
  const std::map<std::string, Tensor>& named() const noexcept { return named_; }

 private:
  friend Gradients run_backward(Tape&, const Tensor&, const Tensor&);
  std::map<std::string, Tensor> named_;
  std::map<std::uint32_t, Tensor> leaves_;
  const Tape* tape_ = nullptr;
  std::uint64_t generation_ = 0;
};

/// Reverse pass from a scalar output. Consumes the tape.
Gradients backward(Tape& tape, const Tensor& output, double seed = 1.0);
Gradients backward(Tape& tape, const Tensor& output, const Tensor& seed);
/// Vector-Jacobian product: `seed` has the output's shape. Consumes the tape.
Gradients vjp(Tape& tape, const Tensor& output, const Tensor& seed);

// ---------------------------------------------------------------------------
// Differentiable primitives. Each records itself on the active tape when one
// of its inputs is tracked there, and throws NonFiniteError if it produces a
// NaN or infinity.

enum class Activation { kTanh, kRelu };

/// W·x + b for x of shape [n]; row-wise X·Wᵀ + b for X of shape [r, n].
Tensor linear(const Tensor& W, const Tensor& b, const Tensor& x);
/// A·B for matrices.
Tensor matmul(const Tensor& A, const Tensor& B);
Tensor activation(Activation kind, const Tensor& x);
/// Concatenates 1-d tensors.
Tensor concat(std::span<const Tensor> xs);
Tensor concat(std::initializer_list<Tensor> xs);
/// Concatenates matrices with equal row counts along columns.
Tensor hconcat(std::span<const Tensor> xs);
Tensor hconcat(std::initializer_list<Tensor> xs);
/// [r, c] -> [r, c] where every row is the column mean of the input.
Tensor row_mean_broadcast(const Tensor& x);
/// Rows of `table` selected by `index`, as [index.size(), cols].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
/// base + Σ coeff_i · terms_i in one node.
Tensor add_scaled(const Tensor& base, std::span<const double> coeffs,
                  std::span<const Tensor> terms);
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// −log softmax(logits)[target] for 1-d logits.
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target);
/// Mean over rows of the per-row cross entropy for [r, c] logits.
Tensor softmax_cross_entropy_rows(const Tensor& logits,
                                  std::span<const std::size_t> targets);

/// Row-wise softmax of values (no tape).
Tensor softmax_rows(const Tensor& logits);

}  // namespace odeassign

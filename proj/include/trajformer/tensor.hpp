#pragma once

// Dense row-major float64 tensors and a tape for reverse-mode autodiff.
//
// Values live in `Tensor`. Differentiable computations are recorded on a
// `Tape` and referred to through `Var` handles; each op appends one node whose
// backward rule accumulates into its inputs' gradient buffers. A tape is used
// for exactly one forward/backward pass and is not thread-safe.

#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trajformer/error.hpp"

namespace trajformer {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor randn(Shape shape, double stddev, std::mt19937_64& rng);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D accessors; no bounds checks beyond the debug assert in vector.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

  double item() const;
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  /// Called with the gradient of the node's output; accumulates into inputs.
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameters, or inputs under gradient check).
  Var leaf(Tensor value);
  /// Input that never receives a gradient.
  Var constant(Tensor value);

  /// Appends an op node. `requires_grad` is inherited from the inputs.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient buffer for `v`, allocated on first use; nullptr when `v` does
  /// not require a gradient.
  double* grad_buffer(Var v);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once, in
  /// reverse recording order. Clears gradients from any earlier call.
  void backward(Var loss);

  /// Gradient of the last backward() w.r.t. `v` (zeros when unreached).
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---- differentiable ops -------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// x[..., d] + bias[d]; the only broadcast supported.
Var add_bias(Var x, Var bias);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
/// Rows `indices` of a 2-D table.
Var gather_rows(Var table, std::span<const std::size_t> indices);

Var sum(Var a);
Var mean(Var a);

/// Row-wise softmax. When `allowed` is given (row-major, same extent as x),
/// disallowed entries act as -inf scores and get exactly zero probability.
/// Every row must keep at least one allowed entry.
Var softmax_rows(Var x, const std::vector<bool>* allowed = nullptr);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var gelu(Var x);
Var sine(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }

// ---- plain helpers ------------------------------------------------------

double gelu_value(double x);
/// C = A·B for 2-D tensors, skipping zero entries of A.
Tensor matmul_values(const Tensor& a, const Tensor& b);

}  // namespace trajformer

#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices of doubles.
//
// A Tape records every forward operation together with a backward closure.
// Parameters (long-lived weights) enter a tape as leaves through
// Tape::param(); after Tape::backward() their gradients are accumulated into
// Param::grad. Tapes are rebuilt per sequence, so graph shape can follow the
// varying sequence length.
//
// All kernels are explicit loops with a fixed summation order. Appending
// exact zeros to a reduction therefore never changes its result, which the
// attention layer relies on for bit-exact prefix (online) behaviour.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace evod::grad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  static Mat identity(std::size_t n);
  static Mat row(std::span<const double> values);
  static Mat column(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  void fill(double v);
  bool all_finite() const noexcept;
  bool same_shape(const Mat& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  std::string shape_str() const;

  Mat transposed() const;
  Mat& operator+=(const Mat& o);

  bool operator==(const Mat& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// out = a * b, accumulated over the shared dimension in ascending order.
Mat matmul(const Mat& a, const Mat& b);
double frobenius_norm(const Mat& m);

/// A trainable array that outlives individual tapes.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad = Mat(value.rows(), value.cols()); }
};

using ParamList = std::vector<Param*>;

void zero_grads(const ParamList& params);
/// Rescales gradients so their global L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until the tape is reset.
class Var {
 public:
  Var() = default;

  const Mat& value() const;
  /// Gradient after backward(); a zero matrix if nothing flowed here.
  Mat grad() const;
  double item() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  Var constant(double value);
  /// Leaf whose gradient is readable through Var::grad() after backward.
  Var variable(Mat value);
  /// Leaf bound to a Param; each Param is registered at most once per tape.
  Var param(Param& p);

  void backward(const Var& loss);
  void reset();

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Used by op implementations.
  Var record(Mat value, std::string_view op, std::span<const Var> parents, Backward fn);
  Var record(Mat value, std::string_view op, std::initializer_list<Var> parents, Backward fn) {
    return record(std::move(value), op, std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
  }
  const Mat& value_of(std::size_t id) const { return nodes_[id].value; }
  const Mat& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient accumulator of a node, allocated on first use.
  Mat& grad_acc(std::size_t id);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
    Param* param = nullptr;
  };

  Var push(Node n);

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> param_nodes_;
  bool grad_enabled_ = true;
  bool consumed_ = false;
};

// Elementwise binary ops accept equal shapes, or a right/left operand that is
// a 1xC row, an Rx1 column, or a 1x1 scalar broadcast against the other.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard product
Var div(Var a, Var b);
Var minimum(Var a, Var b);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

Var sigmoid(Var a);
Var tanh(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// Row-wise standardization (x - mean) / sqrt(var + eps), no affine part.
Var layer_norm_rows(Var a, double eps);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var slice_rows(Var a, std::size_t start, std::size_t count);

Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);
Var row_mean(Var a);

/// Replaces entries where mask is nonzero by value; no gradient flows there.
Var masked_fill(Var a, const Mat& mask, double value);

}  // namespace evod::grad

#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass (define-by-run). Leaves
// created with Tape::variable() receive gradients when Tape::backward() is
// called on a scalar root. Tapes are single-owner and are discarded after use.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace consurv::ad {

/// Smallest argument accepted by log(); smaller non-negative inputs are lifted.
inline constexpr double kLogFloor = 1e-12;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix scalar(double v) { return Matrix(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return values_; }
  std::span<const double> data() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  void fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// Plain (untaped) dense product.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double item() const;
  bool requires_grad() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that accumulates gradients.
  Var variable(Matrix value);
  /// Leaf excluded from differentiation.
  Var constant(Matrix value);

  /// Propagates d(root)/d(node) to every node that requires a gradient.
  /// `seed` scales the root gradient (1 by default). Gradients accumulate
  /// across calls; call zero_grad() to reset.
  void backward(Var root, double seed = 1.0);
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }

  // Operation plumbing, used by the op implementations.
  Var record(Matrix value, std::vector<std::size_t> inputs, Backprop backprop);
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient buffer for accumulation, or nullptr when the node needs none.
  Matrix* grad_target(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  Var handle(std::size_t id) { return Var(this, id); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backprop backprop;
  };
  std::vector<Node> nodes_;
};

/// Reduction axis. `rows` collapses the row dimension (result 1 x cols),
/// `cols` collapses the column dimension (result rows x 1).
enum class Axis { all, rows, cols };

Var matmul(Var a, Var b);
Var transpose(Var a);

// Elementwise binary ops: operands of equal shape, or either one 1x1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a (r x c) plus a 1 x c row vector broadcast across rows.
Var add_row(Var a, Var row);
/// a (r x c) plus an r x 1 column vector broadcast across columns.
Var add_col(Var a, Var col);

Var scale(Var a, double factor);
Var add_scalar(Var a, double shift);
Var exp(Var a);
/// Natural log with the argument lifted to kLogFloor. Negative or NaN input
/// throws NumericError.
Var log(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var tanh(Var a);
/// Values clamped to [lo, hi]; gradient is zero where clamping is active.
Var clamp(Var a, double lo, double hi);

Var sum(Var a, Axis axis = Axis::all);
Var mean(Var a, Axis axis = Axis::all);
/// Max-shifted log-sum-exp.
Var logsumexp(Var a, Axis axis = Axis::all);
/// out_i = log sum_j w_ij exp(a_ij) over entries with w_ij > 0. Rows with no
/// positive weight yield 0 and receive no gradient. Weights are constants.
Var weighted_logsumexp_rows(Var a, const Matrix& weights);
/// Each row divided by its L2 norm (norm floored at 1e-12).
Var normalize_rows(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }

/// Scalar objective of a set of parameter tensors, built on the given tape.
using MultiObjective = std::function<Var(Tape&, std::span<const Var>)>;
using Objective = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |autodiff - central difference| / max(1, |central
/// difference|). Returns +infinity if either side produced NaN.
double grad_check(const Objective& f, const Matrix& theta, double h = 1e-5);
double grad_check(const MultiObjective& f, const std::vector<Matrix>& params, double h = 1e-5);

}  // namespace consurv::ad

#include "consurv/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "consurv/error.hpp"

namespace consurv::ad {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw Error(std::string(op) + ": operands live on different tapes");
  }
}

bool is_scalar(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

// Shape of an elementwise binary result, or DimensionError.
std::pair<std::size_t, std::size_t> broadcast_shape(const Matrix& a, const Matrix& b,
                                                    const char* op) {
  if (a.same_shape(b)) return {a.rows(), a.cols()};
  if (is_scalar(a)) return {b.rows(), b.cols()};
  if (is_scalar(b)) return {a.rows(), a.cols()};
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

// Index into an operand that may be a broadcast scalar.
inline double at(const Matrix& m, std::size_t i) { return m.size() == 1 ? m[0] : m[i]; }

// Accumulates `g` (result-shaped) into an operand gradient, summing over
// broadcast positions when the operand is a scalar.
void accumulate(Matrix* target, const Matrix& g, const std::function<double(std::size_t)>& factor) {
  if (target == nullptr) return;
  if (target->size() == 1 && g.size() != 1) {
    double total = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) total += g[i] * factor(i);
    (*target)[0] += total;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) (*target)[i] += g[i] * factor(i);
  }
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tape& tape = *a.tape();
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return tape.record(std::move(out), {a.id()},
                     [deriv](Tape& t, std::size_t self) {
                       const std::size_t in = t.inputs(self)[0];
                       Matrix* target = t.grad_target(in);
                       if (target == nullptr) return;
                       const Matrix& g = t.grad(self);
                       const Matrix& x = t.value(in);
                       const Matrix& y = t.value(self);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         (*target)[i] += g[i] * deriv(x[i], y[i]);
                       }
                     });
}

}  // namespace

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw DimensionError("Matrix: " + std::to_string(values_.size()) + " values for shape " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Matrix::from_rows: ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(values));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a) + " . " + shape_str(b));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw DimensionError("item: node is " + shape_str(v) + ", not 1x1");
  return v[0];
}

Var Tape::variable(Matrix value) {
  Node node;
  node.grad = Matrix(value.rows(), value.cols());
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::vector<std::size_t> inputs, Backprop backprop) {
  Node node;
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [&](std::size_t id) { return nodes_[id].requires_grad; });
  if (node.requires_grad) {
    node.grad = Matrix(value.rows(), value.cols());
    node.backprop = std::move(backprop);
  }
  node.value = std::move(value);
  node.inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Matrix* Tape::grad_target(std::size_t id) {
  Node& node = nodes_[id];
  return node.requires_grad ? &node.grad : nullptr;
}

void Tape::zero_grad() {
  for (Node& node : nodes_) {
    if (node.requires_grad) node.grad.fill(0.0);
  }
}

void Tape::backward(Var root, double seed) {
  if (root.tape() != this) throw Error("backward: root belongs to another tape");
  const Matrix& v = nodes_[root.id()].value;
  if (v.size() != 1) throw DimensionError("backward: root must be 1x1, got " + shape_str(v));
  // Interior gradients are per-pass; only leaves accumulate across passes.
  for (Node& node : nodes_) {
    if (node.requires_grad && node.backprop) node.grad.fill(0.0);
  }
  if (!nodes_[root.id()].requires_grad) return;
  nodes_[root.id()].grad[0] += seed;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.requires_grad && node.backprop) node.backprop(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Operations

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  Matrix out = matmul(a.value(), b.value());
  return a.tape()->record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Matrix& g = t.grad(self);
    if (Matrix* ga = t.grad_target(in[0])) {
      const Matrix d = matmul(g, transpose(t.value(in[1])));
      for (std::size_t i = 0; i < d.size(); ++i) (*ga)[i] += d[i];
    }
    if (Matrix* gb = t.grad_target(in[1])) {
      const Matrix d = matmul(transpose(t.value(in[0])), g);
      for (std::size_t i = 0; i < d.size(); ++i) (*gb)[i] += d[i];
    }
  });
}

Var transpose(Var a) {
  return a.tape()->record(transpose(a.value()), {a.id()}, [](Tape& t, std::size_t self) {
    Matrix* ga = t.grad_target(t.inputs(self)[0]);
    if (ga == nullptr) return;
    const Matrix d = transpose(t.grad(self));
    for (std::size_t i = 0; i < d.size(); ++i) (*ga)[i] += d[i];
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  const auto [r, c] = broadcast_shape(a.value(), b.value(), "add");
  Matrix out(r, c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(a.value(), i) + at(b.value(), i);
  return a.tape()->record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Matrix& g = t.grad(self);
    accumulate(t.grad_target(in[0]), g, [](std::size_t) { return 1.0; });
    accumulate(t.grad_target(in[1]), g, [](std::size_t) { return 1.0; });
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  const auto [r, c] = broadcast_shape(a.value(), b.value(), "sub");
  Matrix out(r, c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(a.value(), i) - at(b.value(), i);
  return a.tape()->record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Matrix& g = t.grad(self);
    accumulate(t.grad_target(in[0]), g, [](std::size_t) { return 1.0; });
    accumulate(t.grad_target(in[1]), g, [](std::size_t) { return -1.0; });
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  const auto [r, c] = broadcast_shape(a.value(), b.value(), "mul");
  Matrix out(r, c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(a.value(), i) * at(b.value(), i);
  return a.tape()->record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(in[0]);
    const Matrix& bv = t.value(in[1]);
    accumulate(t.grad_target(in[0]), g, [&](std::size_t i) { return at(bv, i); });
    accumulate(t.grad_target(in[1]), g, [&](std::size_t i) { return at(av, i); });
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row, "add_row");
  const Matrix& x = a.value();
  const Matrix& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw DimensionError("add_row: " + shape_str(x) + " + row " + shape_str(r));
  }
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += r[j];
  }
  return a.tape()->record(std::move(out), {a.id(), row.id()}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Matrix& g = t.grad(self);
    if (Matrix* ga = t.grad_target(in[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Matrix* gr = t.grad_target(in[1])) {
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) (*gr)[j] += g(i, j);
      }
    }
  });
}

Var add_col(Var a, Var col) {
  require_same_tape(a, col, "add_col");
  const Matrix& x = a.value();
  const Matrix& c = col.value();
  if (c.cols() != 1 || c.rows() != x.rows()) {
    throw DimensionError("add_col: " + shape_str(x) + " + col " + shape_str(c));
  }
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += c[i];
  }
  return a.tape()->record(std::move(out), {a.id(), col.id()}, [](Tape& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Matrix& g = t.grad(self);
    if (Matrix* ga = t.grad_target(in[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Matrix* gc = t.grad_target(in[1])) {
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) (*gc)[i] += g(i, j);
      }
    }
  });
}

Var scale(Var a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double shift) {
  return unary(
      a, [shift](double x) { return x + shift; }, [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double x : a.value().data()) {
    if (std::isnan(x) || x < 0.0) {
      throw NumericError("log: argument " + std::to_string(x) + " is outside the domain");
    }
  }
  return unary(
      a, [](double x) { return std::log(std::max(x, kLogFloor)); },
      [](double x, double) { return x < kLogFloor ? 0.0 : 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 || std::isnan(x) ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Var sum(Var a, Axis axis) {
  const Matrix& x = a.value();
  if (x.size() == 0) throw DimensionError("sum: empty reduction");
  Matrix out;
  switch (axis) {
    case Axis::all: {
      double s = 0.0;
      for (double v : x.data()) s += v;
      out = Matrix::scalar(s);
      break;
    }
    case Axis::rows:
      out = Matrix(1, x.cols());
      for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x(i, j);
      }
      break;
    case Axis::cols:
      out = Matrix(x.rows(), 1);
      for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) out[i] += x(i, j);
      }
      break;
  }
  return a.tape()->record(std::move(out), {a.id()}, [axis](Tape& t, std::size_t self) {
    const std::size_t in = t.inputs(self)[0];
    Matrix* ga = t.grad_target(in);
    if (ga == nullptr) return;
    const Matrix& g = t.grad(self);
    for (std::size_t i = 0; i < ga->rows(); ++i) {
      for (std::size_t j = 0; j < ga->cols(); ++j) {
        const double gi = axis == Axis::all ? g[0] : axis == Axis::rows ? g[j] : g[i];
        (*ga)(i, j) += gi;
      }
    }
  });
}

Var mean(Var a, Axis axis) {
  const Matrix& x = a.value();
  if (x.size() == 0) throw DimensionError("mean: empty reduction");
  const std::size_t n = axis == Axis::all ? x.size() : axis == Axis::rows ? x.rows() : x.cols();
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Var logsumexp(Var a, Axis axis) {
  const Matrix& x = a.value();
  if (x.size() == 0) throw DimensionError("logsumexp: empty reduction");
  // Group index of each element under the requested reduction.
  auto group = [axis, &x](std::size_t i, std::size_t j) -> std::size_t {
    return axis == Axis::all ? 0 : axis == Axis::rows ? j : i;
  };
  const std::size_t groups = axis == Axis::all ? 1 : axis == Axis::rows ? x.cols() : x.rows();
  std::vector<double> peak(groups, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      peak[group(i, j)] = std::max(peak[group(i, j)], x(i, j));
    }
  }
  std::vector<double> acc(groups, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      acc[group(i, j)] += std::exp(x(i, j) - peak[group(i, j)]);
    }
  }
  Matrix out = axis == Axis::all    ? Matrix(1, 1)
               : axis == Axis::rows ? Matrix(1, x.cols())
                                    : Matrix(x.rows(), 1);
  for (std::size_t k = 0; k < groups; ++k) out[k] = peak[k] + std::log(acc[k]);
  return a.tape()->record(std::move(out), {a.id()}, [axis](Tape& t, std::size_t self) {
    const std::size_t in = t.inputs(self)[0];
    Matrix* ga = t.grad_target(in);
    if (ga == nullptr) return;
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(in);
    const Matrix& y = t.value(self);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) {
        const std::size_t k = axis == Axis::all ? 0 : axis == Axis::rows ? j : i;
        (*ga)(i, j) += g[k] * std::exp(x(i, j) - y[k]);
      }
    }
  });
}

Var weighted_logsumexp_rows(Var a, const Matrix& weights) {
  const Matrix& x = a.value();
  if (!x.same_shape(weights)) {
    throw DimensionError("weighted_logsumexp_rows: values " + shape_str(x) + " vs weights " +
                         shape_str(weights));
  }
  Matrix out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (weights(i, j) > 0.0) peak = std::max(peak, x(i, j));
    }
    if (std::isinf(peak)) continue;
    double acc = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (weights(i, j) > 0.0) acc += weights(i, j) * std::exp(x(i, j) - peak);
    }
    out[i] = peak + std::log(acc);
  }
  return a.tape()->record(std::move(out), {a.id()}, [weights](Tape& t, std::size_t self) {
    const std::size_t in = t.inputs(self)[0];
    Matrix* ga = t.grad_target(in);
    if (ga == nullptr) return;
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(in);
    const Matrix& y = t.value(self);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) {
        if (weights(i, j) > 0.0) (*ga)(i, j) += g[i] * weights(i, j) * std::exp(x(i, j) - y[i]);
      }
    }
  });
}

Var normalize_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double sq = 0.0;
    for (double v : x.row(i)) sq += v * v;
    norms[i] = std::max(std::sqrt(sq), 1e-12);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / norms[i];
  }
  return a.tape()->record(std::move(out), {a.id()}, [norms](Tape& t, std::size_t self) {
    const std::size_t in = t.inputs(self)[0];
    Matrix* ga = t.grad_target(in);
    if (ga == nullptr) return;
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    // d(x/|x|) = (I - y y^T) / |x|
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) {
        (*ga)(i, j) += (g(i, j) - dot * y(i, j)) / norms[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Gradient checking

double grad_check(const MultiObjective& f, const std::vector<Matrix>& params, double h) {
  if (!(h > 0.0)) throw Error("grad_check: step must be positive");
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Matrix& p : params) leaves.push_back(tape.variable(p));
  Var root = f(tape, leaves);
  tape.backward(root);

  auto evaluate = [&f](const std::vector<Matrix>& values) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (const Matrix& v : values) vars.push_back(t.constant(v));
    return f(t, vars).item();
  };

  double worst = 0.0;
  std::vector<Matrix> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double base = params[p][i];
      probe[p][i] = base + h;
      const double up = evaluate(probe);
      probe[p][i] = base - h;
      const double down = evaluate(probe);
      probe[p][i] = base;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = leaves[p].grad()[i];
      if (std::isnan(numeric) || std::isnan(analytic)) {
        return std::numeric_limits<double>::infinity();
      }
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

double grad_check(const Objective& f, const Matrix& theta, double h) {
  return grad_check(
      MultiObjective([&f](Tape& t, std::span<const Var> vars) { return f(t, vars[0]); }),
      std::vector<Matrix>{theta}, h);
}

}  // namespace consurv::ad

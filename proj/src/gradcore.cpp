#include "evod/gradcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace evod::grad {

// ---------------------------------------------------------------------------
// Mat

Mat::Mat(std::size_t rows, std::size_t cols, std::initializer_list<double> values)
    : rows_(rows), cols_(cols), data_(values) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Mat initializer has " + std::to_string(data_.size()) +
                     " values for shape " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::row(std::span<const double> values) {
  Mat m(1, values.size());
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

Mat Mat::column(std::span<const double> values) {
  Mat m(values.size(), 1);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

void Mat::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Mat::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Mat::shape_str() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

Mat Mat::transposed() const {
  Mat t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Mat& Mat::operator+=(const Mat& o) {
  if (!same_shape(o)) throw ShapeError("Mat += shape mismatch " + shape_str() + " vs " + o.shape_str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch " + a.shape_str() + " * " + b.shape_str());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Mat out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = a(i, kk);
      if (aik == 0.0) continue;
      const double* brow = b.data() + kk * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

double frobenius_norm(const Mat& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

void zero_grads(const ParamList& params) {
  for (Param* p : params) p->zero_grad();
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const Param* p : params)
    for (double g : p->grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Param* p : params)
      for (double& g : p->grad.values()) g *= f;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Var / Tape

const Mat& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value_of(id_);
}

Mat Var::grad() const {
  const Mat& g = tape_->grad_of(id_);
  if (g.empty() && !value().empty()) return Mat(rows(), cols());
  return g;
}

double Var::item() const {
  const Mat& v = value();
  if (v.size() != 1) throw ShapeError("item() on non-scalar " + v.shape_str());
  return v[0];
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(double value) { return constant(Mat(1, 1, value)); }

Var Tape::variable(Mat value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Tape::param(Param& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = grad_enabled_;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Mat value, std::string_view op, std::span<const Var> parents, Backward fn) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by " + std::string(op));
  }
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& p : parents) {
      if (p.tape_ != this) throw std::logic_error(std::string(op) + ": operand from another tape");
      if (nodes_[p.id_].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Mat& Tape::grad_acc(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Mat(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw std::logic_error("backward: loss belongs to another tape");
  if (consumed_) throw std::logic_error("backward called twice on the same tape without reset");
  if (loss.value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + loss.value().shape_str());
  }
  consumed_ = true;
  if (!nodes_[loss.id_].requires_grad) return;
  grad_acc(loss.id_)[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      Param& p = *n.param;
      if (p.grad.empty()) p.grad = Mat(p.value.rows(), p.value.cols());
      p.grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  param_nodes_.clear();
  consumed_ = false;
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

namespace {

struct Broadcast {
  std::size_t rows, cols;
  std::size_t ar, ac, br, bc;
  std::size_t ia(std::size_t r, std::size_t c) const { return (ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c); }
  std::size_t ib(std::size_t r, std::size_t c) const { return (br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c); }
};

bool broadcastable(const Mat& small, const Mat& big) {
  return (small.rows() == 1 || small.rows() == big.rows()) &&
         (small.cols() == 1 || small.cols() == big.cols());
}

Broadcast broadcast_shape(const Mat& a, const Mat& b, std::string_view op) {
  Broadcast s{0, 0, a.rows(), a.cols(), b.rows(), b.cols()};
  if (a.same_shape(b) || broadcastable(b, a)) {
    s.rows = a.rows();
    s.cols = a.cols();
  } else if (broadcastable(a, b)) {
    s.rows = b.rows();
    s.cols = b.cols();
  } else {
    throw ShapeError(std::string(op) + " shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  return s;
}

template <class F, class DA, class DB>
Var binary(Var a, Var b, std::string_view op, F f, DA da, DB db) {
  Tape& t = a.tape();
  const Mat& av = a.value();
  const Mat& bv = b.value();
  const Broadcast s = broadcast_shape(av, bv, op);
  Mat out(s.rows, s.cols);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) out(r, c) = f(av[s.ia(r, c)], bv[s.ib(r, c)]);
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(std::move(out), op, {a, b}, [ai, bi, s, da, db](Tape& tp, std::size_t self) {
    const Mat& g = tp.grad_of(self);
    const Mat& av = tp.value_of(ai);
    const Mat& bv = tp.value_of(bi);
    if (tp.needs_grad(ai)) {
      Mat& ga = tp.grad_acc(ai);
      for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) {
          const std::size_t ia = s.ia(r, c), ib = s.ib(r, c);
          ga[ia] += g(r, c) * da(av[ia], bv[ib]);
        }
    }
    if (tp.needs_grad(bi)) {
      Mat& gb = tp.grad_acc(bi);
      for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) {
          const std::size_t ia = s.ia(r, c), ib = s.ib(r, c);
          gb[ib] += g(r, c) * db(av[ia], bv[ib]);
        }
    }
  });
}

// Elementwise op whose derivative is expressed through input x and output y.
template <class F, class D>
Var unary(Var a, std::string_view op, F f, D d) {
  Tape& t = a.tape();
  const Mat& av = a.value();
  Mat out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ai = a.id();
  const std::size_t oi = t.size();
  return t.record(std::move(out), op, {a}, [ai, oi, d](Tape& tp, std::size_t self) {
    if (!tp.needs_grad(ai)) return;
    const Mat& g = tp.grad_of(self);
    const Mat& x = tp.value_of(ai);
    const Mat& y = tp.value_of(oi);
    Mat& ga = tp.grad_acc(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise binary

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var minimum(Var a, Var b) {
  return binary(
      a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  Mat out = matmul(a.value(), b.value());
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(std::move(out), "matmul", {a, b}, [ai, bi](Tape& tp, std::size_t self) {
    const Mat& g = tp.grad_of(self);
    const Mat& av = tp.value_of(ai);
    const Mat& bv = tp.value_of(bi);
    const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
    if (tp.needs_grad(ai)) {
      Mat& ga = tp.grad_acc(ai);  // g * b^T
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g.data() + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double* brow = bv.data() + kk * m;
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
          ga(i, kk) += acc;
        }
      }
    }
    if (tp.needs_grad(bi)) {
      Mat& gb = tp.grad_acc(bi);  // a^T * g
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g.data() + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double aik = av(i, kk);
          if (aik == 0.0) continue;
          double* gbrow = gb.data() + kk * m;
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += aik * grow[j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  Tape& t = a.tape();
  const std::size_t ai = a.id();
  return t.record(a.value().transposed(), "transpose", {a}, [ai](Tape& tp, std::size_t self) {
    tp.grad_acc(ai) += tp.grad_of(self).transposed();
  });
}

Var scale(Var a, double s) {
  return unary(
      a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Elementwise unary

Var sigmoid(Var a) {
  return unary(a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Var a) {
  return unary(a, "softplus", stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, "clamp", [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

Var softmax_rows(Var a) {
  Tape& t = a.tape();
  const Mat& x = a.value();
  Mat y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double m = x(r, 0);
    for (std::size_t c = 1; c < x.cols(); ++c) m = std::max(m, x(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      y(r, c) = std::exp(x(r, c) - m);
      s += y(r, c);
    }
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) /= s;
  }
  const std::size_t ai = a.id(), oi = t.size();
  return t.record(std::move(y), "softmax_rows", {a}, [ai, oi](Tape& tp, std::size_t self) {
    const Mat& g = tp.grad_of(self);
    const Mat& y = tp.value_of(oi);
    Mat& ga = tp.grad_acc(ai);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = a.tape();
  const Mat& x = a.value();
  Mat y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double m = x(r, 0);
    for (std::size_t c = 1; c < x.cols(); ++c) m = std::max(m, x(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += std::exp(x(r, c) - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = x(r, c) - lse;
  }
  const std::size_t ai = a.id(), oi = t.size();
  return t.record(std::move(y), "log_softmax_rows", {a}, [ai, oi](Tape& tp, std::size_t self) {
    const Mat& g = tp.grad_of(self);
    const Mat& y = tp.value_of(oi);
    Mat& ga = tp.grad_acc(ai);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) gs += g(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
    }
  });
}

Var layer_norm_rows(Var a, double eps) {
  Tape& t = a.tape();
  const Mat& x = a.value();
  const std::size_t n = x.rows(), h = x.cols();
  Mat y(n, h);
  Mat inv_std(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < h; ++c) mu += x(r, c);
    mu /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t c = 0; c < h; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(h);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < h; ++c) y(r, c) = (x(r, c) - mu) * inv;
  }
  const std::size_t ai = a.id(), oi = t.size();
  return t.record(std::move(y), "layer_norm_rows", {a},
                  [ai, oi, inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
                    const Mat& g = tp.grad_of(self);
                    const Mat& y = tp.value_of(oi);
                    Mat& ga = tp.grad_acc(ai);
                    const double hn = static_cast<double>(y.cols());
                    for (std::size_t r = 0; r < y.rows(); ++r) {
                      double gm = 0.0, gy = 0.0;
                      for (std::size_t c = 0; c < y.cols(); ++c) {
                        gm += g(r, c);
                        gy += g(r, c) * y(r, c);
                      }
                      gm /= hn;
                      gy /= hn;
                      for (std::size_t c = 0; c < y.cols(); ++c)
                        ga(r, c) += inv_std[r] * (g(r, c) - gm - y(r, c) * gy);
                    }
                  });
}

// ---------------------------------------------------------------------------
// Structural

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of zero parts");
  Tape& t = parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols shape mismatch " + parts.front().value().shape_str() + " vs " +
                       p.value().shape_str());
    }
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Mat& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.cols();
  }
  Var res = t.record(std::move(out), "concat_cols", parts, [ids, offsets](Tape& tp, std::size_t self) {
    const Mat& g = tp.grad_of(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.needs_grad(ids[k])) continue;
      Mat& gp = tp.grad_acc(ids[k]);
      for (std::size_t r = 0; r < gp.rows(); ++r)
        for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, offsets[k] + c);
    }
  });
  return res;
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of zero parts");
  Tape& t = parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows shape mismatch " + parts.front().value().shape_str() + " vs " +
                       p.value().shape_str());
    }
    rows += p.rows();
  }
  Mat out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Mat& v = p.value();
    std::copy(v.data(), v.data() + v.size(), out.data() + off * cols);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.rows();
  }
  return t.record(std::move(out), "concat_rows", parts, [ids, offsets, cols](Tape& tp, std::size_t self) {
    const Mat& g = tp.grad_of(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.needs_grad(ids[k])) continue;
      Mat& gp = tp.grad_acc(ids[k]);
      const double* src = g.data() + offsets[k] * cols;
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Tape& t = a.tape();
  const Mat& v = a.value();
  if (start + count > v.cols()) {
    throw ShapeError("slice_cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + v.shape_str());
  }
  Mat out(v.rows(), count);
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = v(r, start + c);
  const std::size_t ai = a.id();
  return t.record(std::move(out), "slice_cols", {a}, [ai, start](Tape& tp, std::size_t self) {
    const Mat& g = tp.grad_of(self);
    Mat& ga = tp.grad_acc(ai);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, start + c) += g(r, c);
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  Tape& t = a.tape();
  const Mat& v = a.value();
  if (start + count > v.rows()) {
    throw ShapeError("slice_rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + v.shape_str());
  }
  Mat out(count, v.cols());
  std::copy(v.data() + start * v.cols(), v.data() + (start + count) * v.cols(), out.data());
  const std::size_t ai = a.id();
  return t.record(std::move(out), "slice_rows", {a}, [ai, start](Tape& tp, std::size_t self) {
    const Mat& g = tp.grad_of(self);
    Mat& ga = tp.grad_acc(ai);
    double* dst = ga.data() + start * ga.cols();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var a) {
  Tape& t = a.tape();
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ai = a.id();
  return t.record(Mat(1, 1, s), "sum", {a}, [ai](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0];
    Mat& ga = tp.grad_acc(ai);
    for (double& v : ga.values()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var row_sum(Var a) {
  Tape& t = a.tape();
  const Mat& v = a.value();
  Mat out(v.rows(), 1);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < v.cols(); ++c) s += v(r, c);
    out[r] = s;
  }
  const std::size_t ai = a.id();
  return t.record(std::move(out), "row_sum", {a}, [ai](Tape& tp, std::size_t self) {
    const Mat& g = tp.grad_of(self);
    Mat& ga = tp.grad_acc(ai);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g[r];
  });
}

Var row_mean(Var a) {
  const std::size_t c = a.value().cols();
  if (c == 0) throw ShapeError("row_mean of zero-column tensor");
  return scale(row_sum(a), 1.0 / static_cast<double>(c));
}

Var masked_fill(Var a, const Mat& mask, double value) {
  Tape& t = a.tape();
  const Mat& v = a.value();
  if (!mask.same_shape(v)) {
    throw ShapeError("masked_fill shape mismatch " + v.shape_str() + " vs mask " + mask.shape_str());
  }
  Mat out = v;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i] != 0.0) out[i] = value;
  const std::size_t ai = a.id();
  return t.record(std::move(out), "masked_fill", {a}, [ai, mask](Tape& tp, std::size_t self) {
    const Mat& g = tp.grad_of(self);
    Mat& ga = tp.grad_acc(ai);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (mask[i] == 0.0) ga[i] += g[i];
  });
}

}  // namespace evod::grad

#include "mmt/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mmt/error.hpp"

namespace mmt {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return matrix(r, c, std::move(values));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(data_.size(), 0.0);
  } else {
    grad_.clear();
    grad_.shrink_to_fit();
  }
}

std::span<double> Tensor::grad() {
  if (!requires_grad_) throw std::logic_error("tensor does not track gradients");
  return grad_;
}

std::span<const double> Tensor::grad() const {
  if (!requires_grad_) throw std::logic_error("tensor does not track gradients");
  return grad_;
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

// ---- Tape ------------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{value.detached(), {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor& p) {
  nodes_.push_back(Node{p.detached(), {}, {}, &p, p.requires_grad()});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Rule rule) {
  bool needs = false;
  for (const Var& in : inputs) {
    check_owner(in);
    needs = needs || nodes_[in.id()].needs_grad;
  }
  Node node{std::move(value), {}, {}, nullptr, needs};
  if (needs) node.rule = std::move(rule);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(const Var& v) const {
  if (&v.tape() != this) throw std::logic_error("Var belongs to a different tape");
}

std::span<double> Tape::input_grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return {};
  return n.grad;
}

void Tape::backward(const Var& loss) {
  check_owner(loss);
  if (loss.value().numel() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " +
                         shape_string(loss.shape()));
  }
  const std::size_t last = loss.id();
  for (std::size_t i = 0; i <= last; ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) {
      n.grad.assign(n.value.numel(), 0.0);
    } else {
      n.grad.clear();
    }
  }
  if (!nodes_[last].needs_grad) return;
  nodes_[last].grad[0] = 1.0;
  for (std::size_t i = last + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.rule) n.rule(*this, i);
    if (n.bound != nullptr && n.bound->requires_grad()) {
      auto g = n.bound->grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
  }
}

// ---- operations ------------------------------------------------------------

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank2(const char* op, const Var& a) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_string(a.shape()));
  }
}

// Elementwise unary op given f(x) and df/dx expressed through (x, y).
template <class F, class D>
Var unary(const Var& a, F f, D df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, df](Tape& t, std::size_t self) {
    auto ga = t.input_grad(ia);
    const auto g = t.grad(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(A.shape()) +
                         " x " + shape_string(B.shape()));
  }
  Tensor C(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(C), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    const Tensor& Av = t.value(ia);
    const Tensor& Bv = t.value(ib);
    if (auto ga = t.input_grad(ia); !ga.empty()) {
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * Bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (auto gb = t.input_grad(ib); !gb.empty()) {
      // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = Av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    if (auto ga = t.input_grad(ia); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = t.input_grad(ib); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] - b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    if (auto ga = t.input_grad(ia); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = t.input_grad(ib); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (auto ga = t.input_grad(ia); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    if (auto gb = t.input_grad(ib); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_bias(const Var& a, const Var& bias) {
  require_rank2("add_bias", a);
  const Tensor& A = a.value();
  const Tensor& b = bias.value();
  const std::size_t m = A.rows(), n = A.cols();
  if (b.numel() != n || b.rank() > 1) {
    throw DimensionError("add_bias: bias " + shape_string(b.shape()) + " does not fit " +
                         shape_string(A.shape()));
  }
  Tensor y(A.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = A[i * n + j] + b[j];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape().record(std::move(y), {a, bias}, [ia, ib, m, n](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    if (auto ga = t.input_grad(ia); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (auto gb = t.input_grad(ib); !gb.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
  });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sqrt(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v >= 0.0)) throw NumericError("sqrt of negative or NaN value");
  }
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var log_clamped(const Var& a, double lo, double hi) {
  for (double v : a.value().data()) {
    if (std::isnan(v)) throw NumericError("log of NaN value");
  }
  return unary(a, [lo, hi](double x) { return std::log(std::clamp(x, lo, hi)); },
               [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0 / x; });
}

Var row_softmax(const Var& x) {
  const Tensor& X = x.value();
  if (X.rank() > 2 || X.rank() == 0) {
    throw DimensionError("row_softmax: expected a vector or matrix, got " +
                         shape_string(X.shape()));
  }
  const std::size_t m = X.rows(), n = X.cols();
  Tensor y(X.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = X.data().data() + i * n;
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(row[j])) throw NumericError("row_softmax: non-finite input");
      hi = std::max(hi, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[i * n + j] = std::exp(row[j] - hi);
      z += y[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] /= z;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(y), {x}, [ix, m, n](Tape& t, std::size_t self) {
    auto gx = t.input_grad(ix);
    const auto g = t.grad(self);
    const Tensor& Y = t.value(self);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * Y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += Y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    auto ga = t.input_grad(ia);
    const double g = t.grad(self)[0];
    for (double& v : ga) v += g;
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var row_sum(const Var& a) {
  require_rank2("row_sum", a);
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor y(Shape{m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i] += A[i * n + j];
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, m, n](Tape& t, std::size_t self) {
    auto ga = t.input_grad(ia);
    const auto g = t.grad(self);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
  });
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
  require_rank2("gather_rows", a);
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor y(Shape{idx.size(), n});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(A.data().begin() + idx[r] * n, n, y.data().begin() + r * n);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, n, idx = std::move(idx)](Tape& t,
                                                                         std::size_t self) {
    auto ga = t.input_grad(ia);
    const auto g = t.grad(self);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) ga[idx[r] * n + j] += g[r * n + j];
  });
}

Var pick(const Var& a, std::span<const std::size_t> cols) {
  require_rank2("pick", a);
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  if (cols.size() != m) throw DimensionError("pick: one column index per row required");
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  Tensor y(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] >= n) throw DimensionError("pick: column index out of range");
    y[i] = A[i * n + idx[i]];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, n, idx = std::move(idx)](Tape& t,
                                                                         std::size_t self) {
    auto ga = t.input_grad(ia);
    const auto g = t.grad(self);
    for (std::size_t i = 0; i < idx.size(); ++i) ga[i * n + idx[i]] += g[i];
  });
}

namespace {

Var distance_rows(const Var& a, const Var& b, Shape out_shape) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor y(std::move(out_shape));
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = A[i * n + j] - B[i * n + j];
      s += d * d;
    }
    y[i] = std::sqrt(s + kDistanceEps);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(y), {a, b}, [ia, ib, m, n](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    const Tensor& Av = t.value(ia);
    const Tensor& Bv = t.value(ib);
    const Tensor& D = t.value(self);
    auto ga = t.input_grad(ia);
    auto gb = t.input_grad(ib);
    for (std::size_t i = 0; i < m; ++i) {
      const double coef = g[i] / D[i];
      for (std::size_t j = 0; j < n; ++j) {
        const double d = coef * (Av[i * n + j] - Bv[i * n + j]);
        if (!ga.empty()) ga[i * n + j] += d;
        if (!gb.empty()) gb[i * n + j] -= d;
      }
    }
  });
}

}  // namespace

Var l2_distance(const Var& a, const Var& b) {
  if (a.value().rank() != 1 || a.shape() != b.shape()) {
    throw DimensionError("l2_distance: expected equal-length vectors, got " +
                         shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  return distance_rows(a, b, Shape{});
}

Var row_l2_distance(const Var& a, const Var& b) {
  require_rank2("row_l2_distance", a);
  require_same_shape("row_l2_distance", a, b);
  return distance_rows(a, b, Shape{a.value().rows()});
}

// ---- verification ----------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

double grad_check(const std::function<Var(Tape&)>& f, Tensor& param, double eps) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  const bool had_grad = param.requires_grad();
  param.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    Var loss = f(tape);
    tape.backward(loss);
    analytic.assign(param.grad().begin(), param.grad().end());
  }
  auto eval = [&]() {
    Tape tape;
    return f(tape).value().item();
  };
  double worst = 0.0;
  auto data = param.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + eps;
    const double up = eval();
    data[i] = saved - eps;
    const double down = eval();
    data[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  param.set_requires_grad(had_grad);
  return worst;
}

double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& point,
                  double eps) {
  Tensor x = point.detached();
  return grad_check([&](Tape& tape) { return f(tape, tape.param(x)); }, x, eps);
}

}  // namespace mmt

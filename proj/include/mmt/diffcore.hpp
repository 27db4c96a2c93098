#pragma once

// Minimal define-by-run reverse-mode automatic differentiation over dense
// row-major double tensors. A Tape records every operation of one forward
// pass; Tape::backward walks the records once in reverse and accumulates
// gradients into the parameters bound with Tape::param.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mmt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  // Rank-2 accessors; a rank-1 tensor reads as a single row.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const {
    if (shape_.size() == 2) return shape_[1];
    return shape_.size() == 1 ? shape_[0] : 1;
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  // Enabling allocates a zeroed gradient buffer; disabling drops it.
  void set_requires_grad(bool on);
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  // Same shape and data, no gradient state.
  Tensor detached() const { return Tensor(shape_, data_); }

 private:
  Shape shape_{0};
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_;
  std::size_t id_;
};

class Tape {
 public:
  // Called during backward with the node's own id; reads grad(self) and
  // accumulates into input_grad(input) for each of its inputs.
  using Rule = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Binds an external parameter. When p.requires_grad(), backward adds the
  // node's gradient into p.grad(); otherwise the node is a constant. The
  // tensor must outlive the tape and must not be resized while bound.
  Var param(Tensor& p);
  Var record(Tensor value, std::initializer_list<Var> inputs, Rule rule);

  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }
  // Empty span when the input does not need a gradient.
  std::span<double> input_grad(std::size_t id);

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Rule rule;
    Tensor* bound = nullptr;
    bool needs_grad = false;
  };

  void check_owner(const Var& v) const;

  std::vector<Node> nodes_;
};

// ---- operations ------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// a[m x n] + bias[n] broadcast over rows.
Var add_bias(const Var& a, const Var& bias);

Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var sqrt(const Var& a);
Var sigmoid(const Var& a);
// log(clamp(a, lo, hi)); gradient is zero where the clamp is active.
Var log_clamped(const Var& a, double lo, double hi);

Var row_softmax(const Var& x);

Var sum(const Var& a);
Var mean(const Var& a);
// [m x n] -> [m]
Var row_sum(const Var& a);
// [m x n] -> [k x n], rows selected by index (repeats allowed).
Var gather_rows(const Var& a, std::span<const std::size_t> rows);
// [m x n] -> [m], element (i, cols[i]) of each row.
Var pick(const Var& a, std::span<const std::size_t> cols);

inline constexpr double kDistanceEps = 1e-12;

// Euclidean distance between two rank-1 tensors: sqrt(sum (a-b)^2 + eps).
Var l2_distance(const Var& a, const Var& b);
// Row-wise distances between [m x d] tensors -> [m].
Var row_l2_distance(const Var& a, const Var& b);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

// ---- verification ----------------------------------------------------------

// |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor).
inline constexpr double kGradCheckFloor = 1e-3;
double relative_error(double analytic, double numeric);

// Worst relative discrepancy between the tape gradient of f at `point` and
// central finite differences with step eps.
double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& point,
                  double eps);

// Same check against a parameter that f binds itself via Tape::param.
// The parameter is perturbed in place and restored; its grad is left zeroed.
double grad_check(const std::function<Var(Tape&)>& f, Tensor& param, double eps);

}  // namespace mmt

#pragma once

// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// A Tape owns every intermediate value of one computation. Ops are free
// functions over Var handles; each op appends a node whose inputs all have
// smaller ids, so backward() is a single reverse sweep over the node list.
// Parameters live outside the tape and receive accumulated gradients.

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dspn::nd {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Row-major shape of rank 0 to 3.
struct Shape {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::uint8_t rank = 0;

  static Shape scalar() { return {}; }
  static Shape vector(std::size_t n) { return {{n, 0, 0}, 1}; }
  static Shape matrix(std::size_t r, std::size_t c) { return {{r, c, 0}, 2}; }
  static Shape cube(std::size_t a, std::size_t b, std::size_t c) { return {{a, b, c}, 3}; }

  std::size_t numel() const;
  std::size_t operator[](std::size_t i) const { return dims[i]; }
  std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank != b.rank) return false;
    for (std::size_t i = 0; i < a.rank; ++i)
      if (a.dims[i] != b.dims[i]) return false;
    return true;
  }
};

class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// 1×n matrix.
  static Tensor row(std::vector<double> values);
  /// r×c matrix from nested rows; all rows must have the same length.
  static Tensor matrix(const std::vector<std::vector<double>>& rows);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> mutable_data() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Trainable tensor with a gradient buffer of identical shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v);
  void zero_grad();
};

/// Ordered parameter collection; references stay valid as parameters are added.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  const Parameter* find(const std::string& name) const;

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::vector<Parameter*> pointers();

 private:
  std::deque<Parameter> params_;
};

enum class OpKind : std::uint8_t {
  Constant,
  Param,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  Shift,
  Sigmoid,
  Tanh,
  Exp,
  Log,
  Clamp,
  SoftmaxRows,
  Sum,
  Mean,
  MeanRows,
  ConcatRows,
  ConcatCols,
  Transpose,
  SliceRow,
  GatherRows,
  Reshape,
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
  bool requires_grad() const;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to an external parameter. Repeated calls return the same node.
  Var param(Parameter& p);

  /// Reverse sweep from a scalar node. Gradients are accumulated (+=) into the
  /// grad buffer of every parameter leaf, scaled by `seed`.
  void backward(Var loss, double seed = 1.0);

  /// Gradient of an arbitrary node after backward(); zeros if unreached.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  void clear();

  struct Node {
    OpKind op = OpKind::Constant;
    bool requires_grad = false;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    double s0 = 0.0;
    double s1 = 0.0;
    Tensor value;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    std::vector<std::uint32_t> inputs;  // variadic ops (concat)
    std::vector<double> aux;            // masks, gather ids, saved data
  };

  const Tensor& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  const Node& node(std::uint32_t id) const { return nodes_[id]; }
  Var push(Node n);

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<const Parameter*, std::uint32_t>> param_index_;
  std::vector<std::vector<double>> grads_;
};

// Linear algebra and elementwise ops. Binary elementwise ops accept equal
// shapes, or a rank-0 (single element) second operand.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var shift(Var a, double offset);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var clamp(Var a, double lo, double hi);

/// Row-wise softmax with per-row max subtraction.
Var softmax_rows(Var x);
/// Row-wise softmax where columns with mask == 0 get probability exactly 0.
/// Rows whose every column is masked produce all zeros.
Var masked_softmax_rows(Var x, std::span<const double> column_mask);

Var sum(Var a);
Var mean(Var a);
/// Mean over rows of an r×c matrix, giving 1×c.
Var mean_rows(Var a);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var transpose(Var a);
/// Row i of an r×c matrix as 1×c.
Var slice_row(Var a, std::size_t i);
/// Rows ids[k] of an r×c matrix stacked into ids.size()×c.
Var gather_rows(Var a, std::span<const std::size_t> ids);
Var reshape(Var a, Shape shape);

/// Central-difference check of tape gradients.
///
/// `build` records the scalar loss on a fresh tape. Returns the max over all
/// entries of every parameter of |analytic - numeric| / max(1, |numeric|).
/// Parameter grad buffers are overwritten.
double grad_check(const std::function<Var(Tape&)>& build, std::span<Parameter* const> params,
                  double step = 1e-5);

inline constexpr double kExpClamp = 30.0;

}  // namespace dspn::nd

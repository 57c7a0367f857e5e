#include "dspn/ndgrad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace dspn::nd {

// ---------------------------------------------------------------------------
// Shape / Tensor

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) n *= dims[i];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < rank; ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (shape_.rank > 3) throw DimensionError("tensor rank must be 0..3");
  if (shape_.numel() != data_.size())
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
}

Tensor Tensor::zeros(Shape shape) { return Tensor(shape, std::vector<double>(shape.numel(), 0.0)); }

Tensor Tensor::full(Shape shape, double value) {
  return Tensor(shape, std::vector<double>(shape.numel(), value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape::scalar(), {value}); }

Tensor Tensor::row(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape::matrix(1, n), std::move(values));
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.front().size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape::matrix(r, c), std::move(data));
}

std::size_t Tensor::rows() const {
  switch (shape_.rank) {
    case 0: return 1;
    case 1: return 1;
    case 2: return shape_.dims[0];
    default: return shape_.dims[0] * shape_.dims[1];
  }
}

std::size_t Tensor::cols() const {
  switch (shape_.rank) {
    case 0: return 1;
    case 1: return shape_.dims[0];
    case 2: return shape_.dims[1];
    default: return shape_.dims[2];
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_.str());
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Parameters

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

void Parameter::zero_grad() {
  auto g = grad.mutable_data();
  std::fill(g.begin(), g.end(), 0.0);
}

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  return params_.emplace_back(std::move(name), std::move(init));
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter& ParameterSet::get(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("unknown parameter: " + name);
}

const Parameter& ParameterSet::get(const std::string& name) const {
  if (const auto* p = find(name)) return *p;
  throw std::out_of_range("unknown parameter: " + name);
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t ParameterSet::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

std::vector<Parameter*> ParameterSet::pointers() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape->value(id); }
const Shape& Var::shape() const { return value().shape(); }
bool Var::requires_grad() const { return tape->node(id).requires_grad; }

Var Tape::push(Node n) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max())
    throw std::length_error("tape node limit reached");
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  for (const auto& [ptr, id] : param_index_)
    if (ptr == &p) return Var{this, id};
  Node n;
  n.op = OpKind::Param;
  n.requires_grad = true;
  n.external = &p.value;
  n.param = &p;
  Var v = push(std::move(n));
  param_index_.emplace_back(&p, v.id);
  return v;
}

void Tape::clear() {
  nodes_.clear();
  param_index_.clear();
  grads_.clear();
}

namespace {

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("vars belong to different tapes");
}

// Records `value` as a node; drops the graph edge when no input needs a gradient.
Var record(Tape& tape, OpKind op, Tensor value, std::initializer_list<Var> inputs, double s0 = 0.0,
           double s1 = 0.0, std::vector<double> aux = {}) {
  Tape::Node n;
  bool rg = false;
  for (const Var& v : inputs) rg = rg || v.requires_grad();
  n.value = std::move(value);
  if (!rg) {
    n.op = OpKind::Constant;
    return tape.push(std::move(n));
  }
  n.op = op;
  n.requires_grad = true;
  auto it = inputs.begin();
  if (it != inputs.end()) n.a = (it++)->id;
  if (it != inputs.end()) n.b = (it++)->id;
  n.s0 = s0;
  n.s1 = s1;
  n.aux = std::move(aux);
  return tape.push(std::move(n));
}

inline double clamp_exp_arg(double x) { return std::clamp(x, -kExpClamp, kExpClamp); }

inline double sigmoid_scalar(double x) {
  const double c = clamp_exp_arg(x);
  return c >= 0.0 ? 1.0 / (1.0 + std::exp(-c)) : std::exp(c) / (1.0 + std::exp(c));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.shape().rank != 2)
    throw DimensionError(std::string(op) + " requires a matrix, got " + t.shape().str());
}

enum class Broadcast { Same, ScalarRhs };

Broadcast binary_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.numel() == 1 && b.shape().rank == 0) return Broadcast::ScalarRhs;
  throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor(x.shape(), std::move(out));
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, Broadcast mode, F f) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  if (mode == Broadcast::Same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  } else {
    const double s = y[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], s);
  }
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

// ---------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  const std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
  if (B.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions differ, " + A.shape().str() + " x " + B.shape().str());
  std::vector<double> out(m * n, 0.0);
  const auto x = A.data();
  const auto y = B.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = x[i * k + p];
      const double* brow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return record(*a.tape, OpKind::MatMul, Tensor(Shape::matrix(m, n), std::move(out)), {a, b});
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  const auto mode = binary_mode(a.value(), b.value(), "add");
  return record(*a.tape, OpKind::Add, map_binary(a.value(), b.value(), mode, std::plus<>{}), {a, b});
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  const auto mode = binary_mode(a.value(), b.value(), "sub");
  return record(*a.tape, OpKind::Sub, map_binary(a.value(), b.value(), mode, std::minus<>{}), {a, b});
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  const auto mode = binary_mode(a.value(), b.value(), "mul");
  return record(*a.tape, OpKind::Mul, map_binary(a.value(), b.value(), mode, std::multiplies<>{}), {a, b});
}

Var scale(Var a, double factor) {
  return record(*a.tape, OpKind::Scale, map_unary(a.value(), [factor](double v) { return v * factor; }), {a},
                factor);
}

Var shift(Var a, double offset) {
  return record(*a.tape, OpKind::Shift, map_unary(a.value(), [offset](double v) { return v + offset; }), {a},
                offset);
}

Var sigmoid(Var a) { return record(*a.tape, OpKind::Sigmoid, map_unary(a.value(), sigmoid_scalar), {a}); }

Var tanh(Var a) {
  return record(*a.tape, OpKind::Tanh, map_unary(a.value(), [](double v) { return std::tanh(v); }), {a});
}

Var exp(Var a) {
  return record(*a.tape, OpKind::Exp, map_unary(a.value(), [](double v) { return std::exp(clamp_exp_arg(v)); }),
                {a});
}

Var log(Var a) {
  for (double v : a.value().data())
    if (!(v > 0.0)) throw DomainError("log: input must be strictly positive, got " + std::to_string(v));
  return record(*a.tape, OpKind::Log, map_unary(a.value(), [](double v) { return std::log(v); }), {a});
}

Var clamp(Var a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return record(*a.tape, OpKind::Clamp,
                map_unary(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); }), {a}, lo, hi);
}

namespace {

Tensor softmax_impl(const Tensor& x, std::span<const double> mask) {
  require_matrix(x, "softmax_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (!mask.empty() && mask.size() != c)
    throw DimensionError("masked_softmax_rows: mask length " + std::to_string(mask.size()) +
                         " does not match " + std::to_string(c) + " columns");
  std::vector<double> out(r * c, 0.0);
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double* orow = out.data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (mask.empty() || mask[j] != 0.0) mx = std::max(mx, row[j]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked row
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask.empty() && mask[j] == 0.0) continue;
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= total;
  }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

Var softmax_rows(Var x) { return record(*x.tape, OpKind::SoftmaxRows, softmax_impl(x.value(), {}), {x}); }

Var masked_softmax_rows(Var x, std::span<const double> column_mask) {
  return record(*x.tape, OpKind::SoftmaxRows, softmax_impl(x.value(), column_mask), {x});
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return record(*a.tape, OpKind::Sum, Tensor::scalar(total), {a});
}

Var mean(Var a) {
  const auto n = a.value().numel();
  if (n == 0) throw DimensionError("mean of empty tensor");
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return record(*a.tape, OpKind::Mean, Tensor::scalar(total / static_cast<double>(n)), {a});
}

Var mean_rows(Var a) {
  const Tensor& x = a.value();
  require_matrix(x, "mean_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (r == 0) throw DimensionError("mean_rows of empty matrix");
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x.data()[i * c + j];
  for (double& v : out) v /= static_cast<double>(r);
  return record(*a.tape, OpKind::MeanRows, Tensor(Shape::matrix(1, c), std::move(out)), {a});
}

namespace {

Var record_variadic(Tape& tape, OpKind op, Tensor value, std::span<const Var> parts) {
  Tape::Node n;
  bool rg = false;
  for (const Var& v : parts) rg = rg || v.requires_grad();
  n.value = std::move(value);
  if (!rg) return tape.push(std::move(n));
  n.op = op;
  n.requires_grad = true;
  n.inputs.reserve(parts.size());
  for (const Var& v : parts) n.inputs.push_back(v.id);
  return tape.push(std::move(n));
}

}  // namespace

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts.front().value().cols();
  std::size_t r = 0;
  for (const Var& p : parts) {
    check_same_tape(parts.front(), p);
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != c)
      throw DimensionError("concat_rows: column mismatch " + parts.front().shape().str() + " vs " +
                           p.shape().str());
    r += p.value().rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const Var& p : parts) out.insert(out.end(), p.value().data().begin(), p.value().data().end());
  return record_variadic(*parts.front().tape, OpKind::ConcatRows, Tensor(Shape::matrix(r, c), std::move(out)),
                         parts);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts.front().value().rows();
  std::size_t c = 0;
  for (const Var& p : parts) {
    check_same_tape(parts.front(), p);
    require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != r)
      throw DimensionError("concat_cols: row mismatch " + parts.front().shape().str() + " vs " +
                           p.shape().str());
    c += p.value().cols();
  }
  std::vector<double> out(r * c);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t pc = p.value().cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.value().data().data() + i * pc, pc, out.data() + i * c + offset);
    offset += pc;
  }
  return record_variadic(*parts.front().tape, OpKind::ConcatCols, Tensor(Shape::matrix(r, c), std::move(out)),
                         parts);
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  require_matrix(x, "transpose");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
  return record(*a.tape, OpKind::Transpose, Tensor(Shape::matrix(c, r), std::move(out)), {a});
}

Var slice_row(Var a, std::size_t i) {
  const Tensor& x = a.value();
  require_matrix(x, "slice_row");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (i >= r) throw DimensionError("slice_row: row " + std::to_string(i) + " out of range for " + x.shape().str());
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(i * c),
                          x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
  return record(*a.tape, OpKind::SliceRow, Tensor(Shape::matrix(1, c), std::move(out)), {a},
                static_cast<double>(i));
}

Var gather_rows(Var a, std::span<const std::size_t> ids) {
  const Tensor& x = a.value();
  require_matrix(x, "gather_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(ids.size() * c);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= r)
      throw DimensionError("gather_rows: row " + std::to_string(ids[k]) + " out of range for " + x.shape().str());
    std::copy_n(x.data().data() + ids[k] * c, c, out.data() + k * c);
  }
  return record(*a.tape, OpKind::GatherRows, Tensor(Shape::matrix(ids.size(), c), std::move(out)), {a}, 0.0,
                0.0, std::vector<double>(ids.begin(), ids.end()));
}

Var reshape(Var a, Shape shape) {
  if (shape.numel() != a.value().numel())
    throw DimensionError("reshape: " + a.shape().str() + " to " + shape.str());
  return record(*a.tape, OpKind::Reshape, Tensor(shape, a.value().vec()), {a});
}

// ---------------------------------------------------------------------------
// Backward

void Tape::backward(Var loss, double seed) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (value(loss.id).numel() != 1)
    throw DimensionError("backward: loss must be scalar, got " + value(loss.id).shape().str());

  grads_.assign(nodes_.size(), {});
  auto grad_buf = [this](std::uint32_t id) -> std::vector<double>& {
    auto& g = grads_[id];
    if (g.empty()) g.assign(value(id).numel(), 0.0);
    return g;
  };
  grad_buf(loss.id)[0] = seed;

  for (std::int64_t idx = loss.id; idx >= 0; --idx) {
    const auto id = static_cast<std::uint32_t>(idx);
    const Node& n = nodes_[id];
    if (!n.requires_grad || grads_[id].empty()) continue;
    const std::vector<double>& g = grads_[id];
    const Tensor& y = value(id);

    switch (n.op) {
      case OpKind::Constant:
        break;
      case OpKind::Param: {
        auto pg = n.param->grad.mutable_data();
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
        break;
      }
      case OpKind::MatMul: {
        const Tensor& A = value(n.a);
        const Tensor& B = value(n.b);
        const std::size_t m = A.shape()[0], k = A.shape()[1], nn = B.shape()[1];
        if (nodes_[n.a].requires_grad) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < nn; ++j) acc += g[i * nn + j] * B.data()[p * nn + j];
              ga[i * k + p] += acc;
            }
        }
        if (nodes_[n.b].requires_grad) {
          auto& gb = grad_buf(n.b);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = A.data()[i * k + p];
              if (av == 0.0) continue;
              double* row = gb.data() + p * nn;
              for (std::size_t j = 0; j < nn; ++j) row[j] += av * g[i * nn + j];
            }
        }
        break;
      }
      case OpKind::Add:
      case OpKind::Sub: {
        const double sign = n.op == OpKind::Add ? 1.0 : -1.0;
        if (nodes_[n.a].requires_grad) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (nodes_[n.b].requires_grad) {
          auto& gb = grad_buf(n.b);
          if (gb.size() == g.size()) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
          } else {
            double total = 0.0;
            for (double v : g) total += v;
            gb[0] += sign * total;
          }
        }
        break;
      }
      case OpKind::Mul: {
        const Tensor& A = value(n.a);
        const Tensor& B = value(n.b);
        const bool scalar_rhs = B.numel() != A.numel() || !(A.shape() == B.shape());
        if (nodes_[n.a].requires_grad) {
          auto& ga = grad_buf(n.a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (scalar_rhs ? B[0] : B[i]);
        }
        if (nodes_[n.b].requires_grad) {
          auto& gb = grad_buf(n.b);
          if (!scalar_rhs) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
          } else {
            double total = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) total += g[i] * A[i];
            gb[0] += total;
          }
        }
        break;
      }
      case OpKind::Scale: {
        auto& ga = grad_buf(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.s0;
        break;
      }
      case OpKind::Shift:
      case OpKind::Reshape: {
        auto& ga = grad_buf(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
      }
      case OpKind::Sigmoid: {
        const Tensor& x = value(n.a);
        auto& ga = grad_buf(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (std::abs(x[i]) <= kExpClamp) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case OpKind::Tanh: {
        auto& ga = grad_buf(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case OpKind::Exp: {
        const Tensor& x = value(n.a);
        auto& ga = grad_buf(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (std::abs(x[i]) <= kExpClamp) ga[i] += g[i] * y[i];
        break;
      }
      case OpKind::Log: {
        const Tensor& x = value(n.a);
        auto& ga = grad_buf(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
        break;
      }
      case OpKind::Clamp: {
        const Tensor& x = value(n.a);
        auto& ga = grad_buf(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] >= n.s0 && x[i] <= n.s1) ga[i] += g[i];
        break;
      }
      case OpKind::SoftmaxRows: {
        auto& ga = grad_buf(n.a);
        const std::size_t r = y.shape()[0], c = y.shape()[1];
        for (std::size_t i = 0; i < r; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
        }
        break;
      }
      case OpKind::Sum:
      case OpKind::Mean: {
        auto& ga = grad_buf(n.a);
        const double d = n.op == OpKind::Sum ? g[0] : g[0] / static_cast<double>(ga.size());
        for (double& v : ga) v += d;
        break;
      }
      case OpKind::MeanRows: {
        const Tensor& x = value(n.a);
        auto& ga = grad_buf(n.a);
        const std::size_t r = x.shape()[0], c = x.shape()[1];
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j] / static_cast<double>(r);
        break;
      }
      case OpKind::ConcatRows: {
        std::size_t offset = 0;
        for (std::uint32_t in : n.inputs) {
          const std::size_t len = value(in).numel();
          if (nodes_[in].requires_grad) {
            auto& gi = grad_buf(in);
            for (std::size_t i = 0; i < len; ++i) gi[i] += g[offset + i];
          }
          offset += len;
        }
        break;
      }
      case OpKind::ConcatCols: {
        const std::size_t r = y.shape()[0], c = y.shape()[1];
        std::size_t offset = 0;
        for (std::uint32_t in : n.inputs) {
          const std::size_t pc = value(in).cols();
          if (nodes_[in].requires_grad) {
            auto& gi = grad_buf(in);
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < pc; ++j) gi[i * pc + j] += g[i * c + offset + j];
          }
          offset += pc;
        }
        break;
      }
      case OpKind::Transpose: {
        auto& ga = grad_buf(n.a);
        const std::size_t r = y.shape()[0], c = y.shape()[1];  // output is r×c, input c×r
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[j * r + i] += g[i * c + j];
        break;
      }
      case OpKind::SliceRow: {
        auto& ga = grad_buf(n.a);
        const std::size_t c = y.numel();
        const auto row = static_cast<std::size_t>(n.s0);
        for (std::size_t j = 0; j < c; ++j) ga[row * c + j] += g[j];
        break;
      }
      case OpKind::GatherRows: {
        auto& ga = grad_buf(n.a);
        const std::size_t c = y.shape()[1];
        for (std::size_t k = 0; k < n.aux.size(); ++k) {
          const auto row = static_cast<std::size_t>(n.aux[k]);
          for (std::size_t j = 0; j < c; ++j) ga[row * c + j] += g[k * c + j];
        }
        break;
      }
    }
  }
}

Tensor Tape::grad(Var v) const {
  const Tensor& x = value(v.id);
  if (v.id >= grads_.size() || grads_[v.id].empty()) return Tensor::zeros(x.shape());
  return Tensor(x.shape(), grads_[v.id]);
}

// ---------------------------------------------------------------------------
// Finite-difference check

double grad_check(const std::function<Var(Tape&)>& build, std::span<Parameter* const> params, double step) {
  auto evaluate = [&build]() {
    Tape tape;
    const double v = build(tape).value().item();
    if (!std::isfinite(v)) throw DomainError("grad_check: non-finite function value");
    return v;
  };

  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = build(tape);
    if (!std::isfinite(loss.value().item())) throw DomainError("grad_check: non-finite function value");
    tape.backward(loss);
  }

  double worst = 0.0;
  for (Parameter* p : params) {
    auto values = p->value.mutable_data();
    const auto analytic = p->grad.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + step;
      const double up = evaluate();
      values[i] = orig - step;
      const double down = evaluate();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace dspn::nd

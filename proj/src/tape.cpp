#include "mpcflow/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "mpcflow/errors.hpp"

namespace mpcflow::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_same_tape(const char* op, Var a, Var b) {
  if (&a.tape() != &b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

void require_same_shape(const char* op, Var a, Var b) {
  require_same_tape(op, a, b);
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string Shape::str() const { return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")"; }

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Scale: return "scale";
    case Op::ScalarMul: return "scalar_mul";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::AddBias: return "add_bias";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Tanh: return "tanh";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Softplus: return "softplus";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::SquaredNorm: return "squared_norm";
    case Op::Linear: return "linear";
  }
  return "?";
}

const Shape& Var::shape() const { return tape_->shape(id_); }
std::span<const double> Var::value() const { return tape_->value(id_); }
std::span<const double> Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::item() const {
  if (!shape().is_scalar()) throw ShapeError("item: expected scalar, got " + shape().str());
  return value()[0];
}

std::span<const double> Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return {n.data(), n.shape.size()};
}

std::span<const double> Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.empty()) return {};
  return n.grad;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(std::vector<double> value, Shape shape) {
  if (value.size() != shape.size()) {
    throw ShapeError("leaf: value length " + std::to_string(value.size()) + " does not match shape " + shape.str());
  }
  Node n;
  n.shape = shape;
  n.op = Op::Leaf;
  n.requires_grad = true;
  n.owned = std::move(value);
  n.grad.assign(shape.size(), 0.0);
  return push(std::move(n));
}

Var Tape::leaf(std::vector<double> value) {
  const Shape s{value.size(), 1};
  return leaf(std::move(value), s);
}

Var Tape::leaf_view(std::span<const double> value, Shape shape) {
  if (value.size() != shape.size()) {
    throw ShapeError("leaf_view: value length " + std::to_string(value.size()) + " does not match shape " +
                     shape.str());
  }
  Node n;
  n.shape = shape;
  n.op = Op::Leaf;
  n.requires_grad = true;
  n.external = value.data();
  n.grad.assign(shape.size(), 0.0);
  return push(std::move(n));
}

Var Tape::constant(std::vector<double> value, Shape shape) {
  if (value.size() != shape.size()) {
    throw ShapeError("constant: value length " + std::to_string(value.size()) + " does not match shape " +
                     shape.str());
  }
  Node n;
  n.shape = shape;
  n.op = Op::Constant;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(std::vector<double> value) {
  const Shape s{value.size(), 1};
  return constant(std::move(value), s);
}

Var Tape::constant_view(std::span<const double> value, Shape shape) {
  if (value.size() != shape.size()) {
    throw ShapeError("constant_view: value length " + std::to_string(value.size()) + " does not match shape " +
                     shape.str());
  }
  Node n;
  n.shape = shape;
  n.op = Op::Constant;
  n.external = value.data();
  return push(std::move(n));
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.shape.size()) n.grad.assign(n.shape.size(), 0.0);
  return n.grad;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    if (n.op == Op::Leaf) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw std::invalid_argument("backward: root belongs to a different tape");
  const std::size_t root_id = root.id();
  if (!nodes_[root_id].shape.is_scalar()) {
    throw ShapeError("backward: root must be scalar, got " + nodes_[root_id].shape.str());
  }

  // Mark the ancestors of root that carry gradient.
  std::vector<char> live(root_id + 1, 0);
  live[root_id] = nodes_[root_id].requires_grad ? 1 : 0;
  for (std::size_t i = root_id + 1; i-- > 0;) {
    if (!live[i]) continue;
    for (std::size_t p : nodes_[i].parents) {
      if (nodes_[p].requires_grad) live[p] = 1;
    }
  }

  for (std::size_t i = 0; i <= root_id; ++i) {
    Node& n = nodes_[i];
    if (live[i] && n.op != Op::Leaf) n.grad.assign(n.shape.size(), 0.0);
  }

  last_rule_count_ = 0;
  if (!live[root_id]) return;
  grad_buffer(root_id)[0] += 1.0;

  for (std::size_t i = root_id + 1; i-- > 0;) {
    if (!live[i] || nodes_[i].op == Op::Leaf) continue;
    apply_rule(nodes_[i]);
    ++last_rule_count_;
  }
}

void Tape::apply_rule(const Node& node) {
  const std::span<const double> g(node.grad);
  const std::size_t n = node.shape.size();
  auto parent_value = [&](std::size_t k) { return value(node.parents[k]); };
  auto wants = [&](std::size_t k) { return nodes_[node.parents[k]].requires_grad; };
  // grad_buffer may reallocate another node's vector but never node.grad itself,
  // because a node is never its own parent.

  switch (node.op) {
    case Op::Leaf:
    case Op::Constant:
      return;
    case Op::Add:
    case Op::Sub: {
      const double sign_b = node.op == Op::Add ? 1.0 : -1.0;
      if (wants(0)) {
        auto ga = grad_buffer(node.parents[0]);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        auto gb = grad_buffer(node.parents[1]);
        for (std::size_t i = 0; i < n; ++i) gb[i] += sign_b * g[i];
      }
      return;
    }
    case Op::Scale: {
      auto ga = grad_buffer(node.parents[0]);
      for (std::size_t i = 0; i < n; ++i) ga[i] += node.scalar * g[i];
      return;
    }
    case Op::ScalarMul: {
      const auto s = parent_value(0);
      const auto a = parent_value(1);
      if (wants(0)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i] * a[i];
        grad_buffer(node.parents[0])[0] += acc;
      }
      if (wants(1)) {
        auto ga = grad_buffer(node.parents[1]);
        for (std::size_t i = 0; i < n; ++i) ga[i] += s[0] * g[i];
      }
      return;
    }
    case Op::Mul: {
      const auto a = parent_value(0);
      const auto b = parent_value(1);
      if (wants(0)) {
        auto ga = grad_buffer(node.parents[0]);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * b[i];
      }
      if (wants(1)) {
        auto gb = grad_buffer(node.parents[1]);
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * a[i];
      }
      return;
    }
    case Op::MatMul: {
      const Shape& sa = nodes_[node.parents[0]].shape;
      const Shape& sb = nodes_[node.parents[1]].shape;
      ConstMap G(g.data(), node.shape.rows, node.shape.cols);
      if (wants(0)) {
        ConstMap B(parent_value(1).data(), sb.rows, sb.cols);
        MutMap GA(grad_buffer(node.parents[0]).data(), sa.rows, sa.cols);
        GA.noalias() += G * B.transpose();
      }
      if (wants(1)) {
        ConstMap A(parent_value(0).data(), sa.rows, sa.cols);
        MutMap GB(grad_buffer(node.parents[1]).data(), sb.rows, sb.cols);
        GB.noalias() += A.transpose() * G;
      }
      return;
    }
    case Op::AddBias: {
      const std::size_t rows = node.shape.rows;
      const std::size_t cols = node.shape.cols;
      if (wants(0)) {
        auto ga = grad_buffer(node.parents[0]);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        auto gb = grad_buffer(node.parents[1]);
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t c = 0; c < cols; ++c) acc += g[r * cols + c];
          gb[r] += acc;
        }
      }
      return;
    }
    case Op::Sum:
    case Op::Mean: {
      auto ga = grad_buffer(node.parents[0]);
      const double w = node.op == Op::Sum ? g[0] : g[0] / static_cast<double>(ga.size());
      for (double& v : ga) v += w;
      return;
    }
    case Op::SquaredNorm: {
      const auto a = parent_value(0);
      auto ga = grad_buffer(node.parents[0]);
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] += 2.0 * a[i] * g[0];
      return;
    }
    case Op::Square: {
      const auto a = parent_value(0);
      auto ga = grad_buffer(node.parents[0]);
      for (std::size_t i = 0; i < n; ++i) ga[i] += 2.0 * a[i] * g[i];
      return;
    }
    case Op::Sqrt: {
      const double* y = node.data();
      auto ga = grad_buffer(node.parents[0]);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / (2.0 * y[i]);
      return;
    }
    case Op::Tanh: {
      const double* y = node.data();
      auto ga = grad_buffer(node.parents[0]);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::Sin: {
      const auto a = parent_value(0);
      auto ga = grad_buffer(node.parents[0]);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * std::cos(a[i]);
      return;
    }
    case Op::Cos: {
      const auto a = parent_value(0);
      auto ga = grad_buffer(node.parents[0]);
      for (std::size_t i = 0; i < n; ++i) ga[i] -= g[i] * std::sin(a[i]);
      return;
    }
    case Op::Exp: {
      const double* y = node.data();
      auto ga = grad_buffer(node.parents[0]);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i];
      return;
    }
    case Op::Softplus: {
      const auto a = parent_value(0);
      auto ga = grad_buffer(node.parents[0]);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * sigmoid(a[i]);
      return;
    }
    case Op::Concat: {
      std::size_t at = 0;
      for (std::size_t k = 0; k < node.parents.size(); ++k) {
        const std::size_t len = nodes_[node.parents[k]].shape.size();
        if (wants(k)) {
          auto gp = grad_buffer(node.parents[k]);
          for (std::size_t i = 0; i < len; ++i) gp[i] += g[at + i];
        }
        at += len;
      }
      return;
    }
    case Op::Slice: {
      auto ga = grad_buffer(node.parents[0]);
      const std::size_t start = node.offset * node.shape.cols;
      for (std::size_t i = 0; i < n; ++i) ga[start + i] += g[i];
      return;
    }
    case Op::Linear: {
      std::vector<double> back(node.map->in_dim());
      node.map->adjoint(g, back);
      auto ga = grad_buffer(node.parents[0]);
      for (std::size_t i = 0; i < back.size(); ++i) ga[i] += back[i];
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Primitive constructors. Each computes the forward value eagerly.

Var Tape::emit(Op op, std::vector<std::size_t> parents, std::vector<double> value, Shape shape, double scalar,
               std::size_t offset, const LinearMap* map) {
  Node node;
  node.op = op;
  node.shape = shape;
  node.owned = std::move(value);
  node.scalar = scalar;
  node.offset = offset;
  node.map = map;
  for (std::size_t p : parents) node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
  node.parents = std::move(parents);
  return push(std::move(node));
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  const auto x = a.value();
  const auto y = b.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tape& t = a.tape();
  return t.emit(Op::Add, std::vector<std::size_t>{a.id(), b.id()}, std::move(out), a.shape());
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  const auto x = a.value();
  const auto y = b.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  Tape& t = a.tape();
  return t.emit(Op::Sub, std::vector<std::size_t>{a.id(), b.id()}, std::move(out), a.shape());
}

Var scale(Var a, double c) {
  const auto x = a.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i];
  Tape& t = a.tape();
  return t.emit(Op::Scale, {a.id()}, std::move(out), a.shape(), c);
}

Var scalar_mul(Var s, Var a) {
  require_same_tape("scalar_mul", s, a);
  if (!s.shape().is_scalar()) shape_mismatch("scalar_mul", s.shape(), a.shape());
  const double c = s.value()[0];
  const auto x = a.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i];
  Tape& t = a.tape();
  return t.emit(Op::ScalarMul, std::vector<std::size_t>{s.id(), a.id()}, std::move(out), a.shape());
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  const auto x = a.value();
  const auto y = b.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Tape& t = a.tape();
  return t.emit(Op::Mul, std::vector<std::size_t>{a.id(), b.id()}, std::move(out), a.shape());
}

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.cols != sb.rows) shape_mismatch("matmul", sa, sb);
  const Shape so{sa.rows, sb.cols};
  std::vector<double> out(so.size());
  MutMap C(out.data(), so.rows, so.cols);
  C.noalias() = ConstMap(a.value().data(), sa.rows, sa.cols) * ConstMap(b.value().data(), sb.rows, sb.cols);
  Tape& t = a.tape();
  return t.emit(Op::MatMul, std::vector<std::size_t>{a.id(), b.id()}, std::move(out), so);
}

Var matvec(Var w, Var x) {
  if (!x.shape().is_vector()) shape_mismatch("matvec", w.shape(), x.shape());
  return matmul(w, x);
}

Var add_bias(Var a, Var bias) {
  require_same_tape("add_bias", a, bias);
  const Shape sa = a.shape();
  if (!bias.shape().is_vector() || bias.shape().rows != sa.rows) shape_mismatch("add_bias", sa, bias.shape());
  const auto x = a.value();
  const auto b = bias.value();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < sa.rows; ++r) {
    for (std::size_t c = 0; c < sa.cols; ++c) out[r * sa.cols + c] = x[r * sa.cols + c] + b[r];
  }
  Tape& t = a.tape();
  return t.emit(Op::AddBias, std::vector<std::size_t>{a.id(), bias.id()}, std::move(out), sa);
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value()) acc += v;
  std::vector<double> out{acc};
  Tape& t = a.tape();
  return t.emit(Op::Sum, std::vector<std::size_t>{a.id()}, std::move(out), Shape{1, 1});
}

Var mean(Var a) {
  double acc = 0.0;
  for (double v : a.value()) acc += v;
  std::vector<double> out{acc / static_cast<double>(a.shape().size())};
  Tape& t = a.tape();
  return t.emit(Op::Mean, std::vector<std::size_t>{a.id()}, std::move(out), Shape{1, 1});
}

Var squared_norm(Var a) {
  double acc = 0.0;
  for (double v : a.value()) acc += v * v;
  std::vector<double> out{acc};
  Tape& t = a.tape();
  return t.emit(Op::SquaredNorm, std::vector<std::size_t>{a.id()}, std::move(out), Shape{1, 1});
}

namespace {

template <typename F>
std::vector<double> map_values(Var a, F f) {
  const auto x = a.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

#define MPCFLOW_ELEMENTWISE(fname, op_tag, expr)                                                            \
  Var fname(Var a) {                                                                                      \
    auto out = map_values(a, [](double v) { return expr; });                                             \
    Tape& t = a.tape();                                                                                   \
    return t.emit(op_tag, std::vector<std::size_t>{a.id()}, std::move(out), a.shape());      \
  }

MPCFLOW_ELEMENTWISE(square, Op::Square, v * v)
MPCFLOW_ELEMENTWISE(sqrt, Op::Sqrt, std::sqrt(v))
MPCFLOW_ELEMENTWISE(tanh, Op::Tanh, std::tanh(v))
MPCFLOW_ELEMENTWISE(sin, Op::Sin, std::sin(v))
MPCFLOW_ELEMENTWISE(cos, Op::Cos, std::cos(v))
MPCFLOW_ELEMENTWISE(exp, Op::Exp, std::exp(v))
MPCFLOW_ELEMENTWISE(softplus, Op::Softplus, v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)))

#undef MPCFLOW_ELEMENTWISE

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape& t = parts[0].tape();
  const std::size_t cols = parts[0].shape().cols;
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    require_same_tape("concat", parts[0], p);
    if (p.shape().cols != cols) shape_mismatch("concat", parts[0].shape(), p.shape());
    rows += p.shape().rows;
    ids.push_back(p.id());
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const Var& p : parts) {
    const auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
  }
  return t.emit(Op::Concat, std::move(ids), std::move(out), Shape{rows, cols});
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var slice(Var a, std::size_t offset, std::size_t count) {
  const Shape sa = a.shape();
  if (count == 0 || offset + count > sa.rows) {
    throw ShapeError("slice: rows [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                     ") out of range for shape " + sa.str());
  }
  const auto v = a.value();
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(offset * sa.cols),
                          v.begin() + static_cast<std::ptrdiff_t>((offset + count) * sa.cols));
  Tape& t = a.tape();
  return t.emit(Op::Slice, {a.id()}, std::move(out), Shape{count, sa.cols}, 0.0, offset);
}

Var apply_linear(const LinearMap& map, Var x) {
  if (!x.shape().is_vector() || x.shape().rows != map.in_dim()) {
    shape_mismatch("linear", Shape{map.out_dim(), map.in_dim()}, x.shape());
  }
  std::vector<double> out(map.out_dim());
  map.forward(x.value(), out);
  Tape& t = x.tape();
  return t.emit(Op::Linear, {x.id()}, std::move(out), Shape{map.out_dim(), 1}, 0.0, 0, &map);
}

}  // namespace mpcflow::ad

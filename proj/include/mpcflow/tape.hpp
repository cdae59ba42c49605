#pragma once

// Reverse-mode automatic differentiation over dense row-major f64 arrays.
//
// A Tape records every primitive as it is evaluated. Nodes are appended after
// their parents, so the node order is a topological order and backward() is a
// single reverse sweep. Values never change after creation; only gradient
// buffers are written during backward().
//
// Gradients of leaves accumulate across backward() calls until zero_grad().
// Gradients of interior nodes are scratch space and are reset by each pass.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mpcflow::ad {

struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const noexcept { return rows * cols; }
  bool is_scalar() const noexcept { return rows == 1 && cols == 1; }
  bool is_vector() const noexcept { return cols == 1; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Scale,
  ScalarMul,
  Mul,
  MatMul,
  AddBias,
  Sum,
  Mean,
  Square,
  Sqrt,
  Tanh,
  Sin,
  Cos,
  Exp,
  Softplus,
  Concat,
  Slice,
  SquaredNorm,
  Linear,
};

const char* op_name(Op op) noexcept;

/// A linear map R^n -> R^m usable as a tape primitive. The tape stores a raw
/// pointer, so the map must outlive every tape that references it.
class LinearMap {
 public:
  virtual ~LinearMap() = default;
  virtual std::size_t in_dim() const = 0;
  virtual std::size_t out_dim() const = 0;
  virtual void forward(std::span<const double> in, std::span<double> out) const = 0;
  virtual void adjoint(std::span<const double> in, std::span<double> out) const = 0;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Shape& shape() const;
  std::span<const double> value() const;
  /// Scalar value; throws ShapeError unless the node is 1x1.
  double item() const;
  std::span<const double> grad() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Differentiable input owning a copy of `value`.
  Var leaf(std::vector<double> value, Shape shape);
  Var leaf(std::vector<double> value);
  /// Differentiable input viewing external storage that must outlive the tape.
  Var leaf_view(std::span<const double> value, Shape shape);
  Var constant(std::vector<double> value, Shape shape);
  Var constant(std::vector<double> value);
  Var constant_view(std::span<const double> value, Shape shape);
  Var scalar(double v) { return constant({v}, Shape{1, 1}); }

  /// Seeds d(root)/d(root) = 1 and accumulates into every leaf reachable from
  /// root. Throws ShapeError if root is not 1x1.
  void backward(Var root);
  /// Resets accumulated leaf gradients to zero.
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of backward-rule applications performed by the most recent backward().
  std::size_t last_backward_rule_count() const noexcept { return last_rule_count_; }

  const Shape& shape(std::size_t id) const { return nodes_.at(id).shape; }
  std::span<const double> value(std::size_t id) const;
  std::span<const double> grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  Op op(std::size_t id) const { return nodes_.at(id).op; }

 private:
  friend Var add(Var, Var);
  friend Var sub(Var, Var);
  friend Var scale(Var, double);
  friend Var scalar_mul(Var, Var);
  friend Var mul(Var, Var);
  friend Var matmul(Var, Var);
  friend Var add_bias(Var, Var);
  friend Var sum(Var);
  friend Var mean(Var);
  friend Var square(Var);
  friend Var sqrt(Var);
  friend Var tanh(Var);
  friend Var sin(Var);
  friend Var cos(Var);
  friend Var exp(Var);
  friend Var softplus(Var);
  friend Var concat(std::span<const Var>);
  friend Var slice(Var, std::size_t, std::size_t);
  friend Var squared_norm(Var);
  friend Var apply_linear(const LinearMap&, Var);

  struct Node {
    Shape shape;
    Op op = Op::Constant;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    std::vector<double> owned;
    const double* external = nullptr;
    std::vector<double> grad;
    double scalar = 0.0;
    std::size_t offset = 0;
    const LinearMap* map = nullptr;

    const double* data() const { return external != nullptr ? external : owned.data(); }
  };

  Var push(Node node);
  Var emit(Op op, std::vector<std::size_t> parents, std::vector<double> value, Shape shape, double scalar = 0.0,
           std::size_t offset = 0, const LinearMap* map = nullptr);
  void apply_rule(const Node& node);
  std::span<double> grad_buffer(std::size_t id);

  std::vector<Node> nodes_;
  std::size_t last_rule_count_ = 0;
};

// Primitives. All shape mismatches throw ShapeError naming the op and both shapes.
// The only broadcasting is scalar_mul (1x1 node times array) and add_bias
// (matrix plus a column vector repeated across columns).

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double c);
Var scalar_mul(Var s, Var a);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
/// Matrix-vector product; `x` must be a column vector.
Var matvec(Var w, Var x);
Var add_bias(Var a, Var bias);
Var sum(Var a);
Var mean(Var a);
Var square(Var a);
Var sqrt(Var a);
Var tanh(Var a);
Var sin(Var a);
Var cos(Var a);
Var exp(Var a);
/// log(1 + e^x), a smooth relu.
Var softplus(Var a);
/// Stacks operands vertically; all operands need the same column count.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
/// Rows [offset, offset + count).
Var slice(Var a, std::size_t offset, std::size_t count);
Var squared_norm(Var a);
Var apply_linear(const LinearMap& map, Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }

}  // namespace mpcflow::ad

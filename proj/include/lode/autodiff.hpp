#pragma once

// Reverse-mode automatic differentiation over small dense tensors.
//
// A Tape records every primitive applied to Vars it owns. Tensors are
// immutable values (shared storage), so recording never copies parameter
// arrays. Shapes are limited to scalars, vectors and matrices; there is no
// broadcasting beyond the matrix-vector product.

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lode::ad {

class Shape {
 public:
  Shape() = default;  // scalar
  explicit Shape(std::size_t n) : rank_(1), dims_{n, 1} {}
  Shape(std::size_t rows, std::size_t cols) : rank_(2), dims_{rows, cols} {}

  std::size_t rank() const noexcept { return rank_; }
  std::size_t size() const noexcept {
    return rank_ == 0 ? 1 : (rank_ == 1 ? dims_[0] : dims_[0] * dims_[1]);
  }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b) noexcept {
    if (a.rank_ != b.rank_) return false;
    for (std::size_t i = 0; i < a.rank_; ++i)
      if (a.dims_[i] != b.dims_[i]) return false;
    return true;
  }

 private:
  std::size_t rank_ = 0;
  std::array<std::size_t, 2> dims_{1, 1};
};

class Tensor {
 public:
  Tensor();
  /// Throws ContractViolation on size mismatch, NumericDomainError on NaN/Inf.
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor vector(std::vector<double> v, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                       bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_->size(); }
  std::span<const double> data() const noexcept { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;
  bool requires_grad() const noexcept { return requires_grad_; }
  Tensor with_requires_grad(bool flag) const;
  std::vector<double> to_vector() const { return *data_; }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  bool requires_grad_ = false;
};

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Scale,
  Mul,
  Tanh,
  Sigmoid,
  Softplus,
  Exp,
  Log,
  Sum,
  Mean,
  Concat,
  Slice,
  Clamp,
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives
/// and has not been cleared.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Result of a backward pass: d(output)/d(node) for every recorded node.
class Gradients {
 public:
  /// Gradient with respect to `v`; zeros of the right shape if `v` is unreachable.
  Tensor operator[](Var v) const;
  /// Raw accumulated buffer, empty if unreachable.
  std::span<const double> raw(Var v) const;

 private:
  friend class Tape;
  std::vector<std::vector<double>> grads_;
  std::vector<Shape> shapes_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf. It is differentiable iff `t.requires_grad()`.
  Var leaf(const Tensor& t);
  Var variable(const Tensor& t) { return leaf(t.with_requires_grad(true)); }
  Var constant(const Tensor& t) { return leaf(t.with_requires_grad(false)); }

  /// Generic entry point; the named free functions below are thin wrappers.
  Var apply(OpKind op, std::span<const Var> inputs, double a0 = 0.0, double a1 = 0.0);

  /// Reverse sweep from a scalar output. Leaves used more than once accumulate.
  Gradients backward(Var output) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Drops every node but keeps allocated capacity for reuse.
  void clear() noexcept { nodes_.clear(); }

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    std::uint32_t arity = 0;
    std::array<std::uint32_t, 2> in{};
    std::vector<std::uint32_t> many;  // concat inputs
    Tensor value;
    double a0 = 0.0;
    double a1 = 0.0;
    bool requires_grad = false;
  };
  Var push(Node node);
  void check_owner(Var v) const;

  std::vector<Node> nodes_;
};

// Primitive set. Each has a local-gradient rule in autodiff.cpp and a
// finite-difference test in tests/test_autodiff.cpp.

/// (m×k)·(k) -> (m) or (m×k)·(k×n) -> (m×n).
Var matmul(Var a, Var b);
/// Elementwise sum of equal shapes.
Var add(Var a, Var b);
Var scale(Var a, double c);
/// Elementwise (Hadamard) product of equal shapes.
Var mul(Var a, Var b);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
/// Requires strictly positive input.
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
/// Concatenates scalars and vectors into one vector.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
/// Elements [begin, end) of a vector.
Var slice(Var a, std::size_t begin, std::size_t end);
/// Elementwise clamp; gradient passes only strictly inside (lo, hi) or on the bounds.
Var clamp(Var a, double lo, double hi);

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

}  // namespace lode::ad

#include "lode/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "lode/error.hpp"

namespace lode::ad {

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericDomainError(std::string("non-finite value in ") + what);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

void accumulate(std::vector<double>& dst, std::size_t n) {
  if (dst.empty()) dst.assign(n, 0.0);
}

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::Mul: return "mul";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softplus: return "softplus";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Clamp: return "clamp";
  }
  return "?";
}

}  // namespace

std::string Shape::str() const {
  if (rank_ == 0) return "()";
  if (rank_ == 1) return "(" + std::to_string(dims_[0]) + ")";
  return "(" + std::to_string(dims_[0]) + "x" + std::to_string(dims_[1]) + ")";
}

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : shape_(shape), requires_grad_(requires_grad) {
  if (shape.size() != data.size())
    throw ContractViolation("tensor shape " + shape.str() + " does not match " +
                            std::to_string(data.size()) + " values");
  require_finite(data, "tensor");
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{}, {v}, requires_grad);
}
Tensor Tensor::vector(std::vector<double> v, bool requires_grad) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v), requires_grad);
}
Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                      bool requires_grad) {
  return Tensor(Shape{rows, cols}, std::move(v), requires_grad);
}
Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape.size(), 0.0), requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw ContractViolation("item() on non-scalar tensor " + shape_.str());
  return (*data_)[0];
}

Tensor Tensor::with_requires_grad(bool flag) const {
  Tensor t = *this;
  t.requires_grad_ = flag;
  return t;
}

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Tensor Gradients::operator[](Var v) const {
  const auto& g = grads_.at(v.id());
  if (g.empty()) return Tensor::zeros(shapes_.at(v.id()));
  return Tensor(shapes_[v.id()], g);
}

std::span<const double> Gradients::raw(Var v) const { return grads_.at(v.id()); }

const Tensor& Tape::value(Var v) const {
  check_owner(v);
  return nodes_[v.id()].value;
}

bool Tape::requires_grad(Var v) const {
  check_owner(v);
  return nodes_[v.id()].requires_grad;
}

void Tape::check_owner(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size())
    throw ContractViolation("variable does not belong to this tape");
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::leaf(const Tensor& t) {
  Node n;
  n.op = OpKind::Leaf;
  n.value = t;
  n.requires_grad = t.requires_grad();
  return push(std::move(n));
}

Var Tape::apply(OpKind op, std::span<const Var> inputs, double a0, double a1) {
  for (const Var& v : inputs) check_owner(v);
  const auto in = [&](std::size_t i) -> const Tensor& { return nodes_[inputs[i].id()].value; };
  const auto arity_check = [&](std::size_t n) {
    if (inputs.size() != n)
      throw ContractViolation(std::string(op_name(op)) + " expects " + std::to_string(n) +
                              " inputs");
  };

  Shape out_shape;
  std::vector<double> out;

  switch (op) {
    case OpKind::Leaf:
      throw ContractViolation("use Tape::leaf to register leaves");

    case OpKind::MatMul: {
      arity_check(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape().rank() != 2 || b.shape().rank() == 0 || b.shape()[0] != a.shape()[1])
        throw ContractViolation("matmul shape mismatch " + a.shape().str() + " x " +
                                b.shape().str());
      const std::size_t m = a.shape()[0], k = a.shape()[1];
      const std::size_t n = b.shape().rank() == 1 ? 1 : b.shape()[1];
      out.assign(m * n, 0.0);
      const double* A = a.data().data();
      const double* B = b.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* row = A + i * k;
        double* o = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = row[p];
          const double* brow = B + p * n;
          for (std::size_t j = 0; j < n; ++j) o[j] += aip * brow[j];
        }
      }
      out_shape = b.shape().rank() == 1 ? Shape{m} : Shape{m, n};
      break;
    }

    case OpKind::Add:
    case OpKind::Mul: {
      arity_check(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (!(a.shape() == b.shape()))
        throw ContractViolation(std::string(op_name(op)) + " shape mismatch " +
                                a.shape().str() + " vs " + b.shape().str());
      out.resize(a.size());
      const auto x = a.data();
      const auto y = b.data();
      if (op == OpKind::Add)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
      else
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
      out_shape = a.shape();
      break;
    }

    case OpKind::Scale:
    case OpKind::Tanh:
    case OpKind::Sigmoid:
    case OpKind::Softplus:
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::Clamp: {
      arity_check(1);
      const Tensor& a = in(0);
      const auto x = a.data();
      out.resize(a.size());
      switch (op) {
        case OpKind::Scale:
          if (!std::isfinite(a0)) throw NumericDomainError("non-finite scale factor");
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = a0 * x[i];
          break;
        case OpKind::Tanh:
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
          break;
        case OpKind::Sigmoid:
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x[i]);
          break;
        case OpKind::Softplus:
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_softplus(x[i]);
          break;
        case OpKind::Exp:
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
          break;
        case OpKind::Log:
          for (std::size_t i = 0; i < out.size(); ++i) {
            if (!(x[i] > 0.0)) throw NumericDomainError("log of non-positive value");
            out[i] = std::log(x[i]);
          }
          break;
        case OpKind::Clamp:
          if (!(a0 <= a1)) throw ContractViolation("clamp bounds out of order");
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i], a0, a1);
          break;
        default:
          break;
      }
      out_shape = a.shape();
      break;
    }

    case OpKind::Sum:
    case OpKind::Mean: {
      arity_check(1);
      const Tensor& a = in(0);
      double s = 0.0;
      for (double x : a.data()) s += x;
      if (op == OpKind::Mean) s /= static_cast<double>(a.size());
      out = {s};
      out_shape = Shape{};
      break;
    }

    case OpKind::Concat: {
      if (inputs.empty()) throw ContractViolation("concat of nothing");
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& t = in(i);
        if (t.shape().rank() > 1) throw ContractViolation("concat accepts scalars and vectors");
        out.insert(out.end(), t.data().begin(), t.data().end());
      }
      out_shape = Shape{out.size()};
      break;
    }

    case OpKind::Slice: {
      arity_check(1);
      const Tensor& a = in(0);
      const auto begin = static_cast<std::size_t>(a0);
      const auto end = static_cast<std::size_t>(a1);
      if (a.shape().rank() != 1 || begin > end || end > a.size())
        throw ContractViolation("slice [" + std::to_string(begin) + ", " +
                                std::to_string(end) + ") out of range for " + a.shape().str());
      out.assign(a.data().begin() + static_cast<std::ptrdiff_t>(begin),
                 a.data().begin() + static_cast<std::ptrdiff_t>(end));
      out_shape = Shape{end - begin};
      break;
    }
  }

  Node node;
  node.op = op;
  node.a0 = a0;
  node.a1 = a1;
  node.value = Tensor(out_shape, std::move(out));
  for (const Var& v : inputs) node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  if (op == OpKind::Concat) {
    node.many.reserve(inputs.size());
    for (const Var& v : inputs) node.many.push_back(v.id());
    node.arity = static_cast<std::uint32_t>(inputs.size());
  } else {
    node.arity = static_cast<std::uint32_t>(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) node.in[i] = inputs[i].id();
  }
  return push(std::move(node));
}

Gradients Tape::backward(Var output) const {
  check_owner(output);
  if (nodes_[output.id()].value.size() != 1 || nodes_[output.id()].value.shape().rank() != 0)
    throw ContractViolation("backward requires a scalar output, got " +
                            nodes_[output.id()].value.shape().str());

  Gradients result;
  auto& grads = result.grads_;
  grads.resize(nodes_.size());
  result.shapes_.reserve(nodes_.size());
  for (const Node& n : nodes_) result.shapes_.push_back(n.value.shape());
  if (!nodes_[output.id()].requires_grad) return result;
  grads[output.id()] = {1.0};

  for (std::size_t idx = output.id() + 1; idx-- > 0;) {
    const Node& node = nodes_[idx];
    if (node.op == OpKind::Leaf || !node.requires_grad || grads[idx].empty()) continue;
    const std::vector<double>& g = grads[idx];
    const auto input_needs = [&](std::uint32_t id) { return nodes_[id].requires_grad; };

    switch (node.op) {
      case OpKind::Leaf:
        break;

      case OpKind::MatMul: {
        const Tensor& a = nodes_[node.in[0]].value;
        const Tensor& b = nodes_[node.in[1]].value;
        const std::size_t m = a.shape()[0], k = a.shape()[1];
        const std::size_t n = b.shape().rank() == 1 ? 1 : b.shape()[1];
        const double* A = a.data().data();
        const double* B = b.data().data();
        if (input_needs(node.in[0])) {
          auto& da = grads[node.in[0]];
          accumulate(da, m * k);
          for (std::size_t i = 0; i < m; ++i) {
            const double* gi = g.data() + i * n;
            double* dai = da.data() + i * k;
            for (std::size_t p = 0; p < k; ++p) {
              const double* brow = B + p * n;
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += gi[j] * brow[j];
              dai[p] += s;
            }
          }
        }
        if (input_needs(node.in[1])) {
          auto& db = grads[node.in[1]];
          accumulate(db, k * n);
          for (std::size_t i = 0; i < m; ++i) {
            const double* row = A + i * k;
            const double* gi = g.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = row[p];
              double* dbp = db.data() + p * n;
              for (std::size_t j = 0; j < n; ++j) dbp[j] += aip * gi[j];
            }
          }
        }
        break;
      }

      case OpKind::Add:
        for (std::size_t s = 0; s < 2; ++s) {
          if (!input_needs(node.in[s])) continue;
          auto& d = grads[node.in[s]];
          accumulate(d, g.size());
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        break;

      case OpKind::Mul:
        for (std::size_t s = 0; s < 2; ++s) {
          if (!input_needs(node.in[s])) continue;
          const auto other = nodes_[node.in[1 - s]].value.data();
          auto& d = grads[node.in[s]];
          accumulate(d, g.size());
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * other[i];
        }
        break;

      case OpKind::Scale:
      case OpKind::Tanh:
      case OpKind::Sigmoid:
      case OpKind::Softplus:
      case OpKind::Exp:
      case OpKind::Log:
      case OpKind::Clamp: {
        if (!input_needs(node.in[0])) break;
        const auto x = nodes_[node.in[0]].value.data();
        const auto y = node.value.data();
        auto& d = grads[node.in[0]];
        accumulate(d, g.size());
        switch (node.op) {
          case OpKind::Scale:
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += node.a0 * g[i];
            break;
          case OpKind::Tanh:
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
            break;
          case OpKind::Sigmoid:
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
            break;
          case OpKind::Softplus:
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * stable_sigmoid(x[i]);
            break;
          case OpKind::Exp:
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
            break;
          case OpKind::Log:
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / x[i];
            break;
          case OpKind::Clamp:
            for (std::size_t i = 0; i < g.size(); ++i)
              if (x[i] >= node.a0 && x[i] <= node.a1) d[i] += g[i];
            break;
          default:
            break;
        }
        break;
      }

      case OpKind::Sum:
      case OpKind::Mean: {
        if (!input_needs(node.in[0])) break;
        const std::size_t n = nodes_[node.in[0]].value.size();
        const double gv = node.op == OpKind::Mean ? g[0] / static_cast<double>(n) : g[0];
        auto& d = grads[node.in[0]];
        accumulate(d, n);
        for (std::size_t i = 0; i < n; ++i) d[i] += gv;
        break;
      }

      case OpKind::Concat: {
        std::size_t offset = 0;
        for (std::uint32_t id : node.many) {
          const std::size_t n = nodes_[id].value.size();
          if (input_needs(id)) {
            auto& d = grads[id];
            accumulate(d, n);
            for (std::size_t i = 0; i < n; ++i) d[i] += g[offset + i];
          }
          offset += n;
        }
        break;
      }

      case OpKind::Slice: {
        if (!input_needs(node.in[0])) break;
        const auto begin = static_cast<std::size_t>(node.a0);
        auto& d = grads[node.in[0]];
        accumulate(d, nodes_[node.in[0]].value.size());
        for (std::size_t i = 0; i < g.size(); ++i) d[begin + i] += g[i];
        break;
      }
    }
  }
  return result;
}

namespace {
Var apply1(OpKind op, Var a, double a0 = 0.0, double a1 = 0.0) {
  const Var in[1] = {a};
  return a.tape().apply(op, in, a0, a1);
}
Var apply2(OpKind op, Var a, Var b) {
  const Var in[2] = {a, b};
  return a.tape().apply(op, in);
}
}  // namespace

Var matmul(Var a, Var b) { return apply2(OpKind::MatMul, a, b); }
Var add(Var a, Var b) { return apply2(OpKind::Add, a, b); }
Var scale(Var a, double c) { return apply1(OpKind::Scale, a, c); }
Var mul(Var a, Var b) { return apply2(OpKind::Mul, a, b); }
Var tanh(Var a) { return apply1(OpKind::Tanh, a); }
Var sigmoid(Var a) { return apply1(OpKind::Sigmoid, a); }
Var softplus(Var a) { return apply1(OpKind::Softplus, a); }
Var exp(Var a) { return apply1(OpKind::Exp, a); }
Var log(Var a) { return apply1(OpKind::Log, a); }
Var sum(Var a) { return apply1(OpKind::Sum, a); }
Var mean(Var a) { return apply1(OpKind::Mean, a); }
Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat of nothing");
  return parts.front().tape().apply(OpKind::Concat, parts);
}
Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}
Var slice(Var a, std::size_t begin, std::size_t end) {
  return apply1(OpKind::Slice, a, static_cast<double>(begin), static_cast<double>(end));
}
Var clamp(Var a, double lo, double hi) { return apply1(OpKind::Clamp, a, lo, hi); }

}  // namespace lode::ad

#include <cmath>
#include <random>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "lode/autodiff.hpp"
#include "lode/error.hpp"

using namespace lode;
using namespace lode::ad;
using lode::testing::central_difference;
using lode::testing::gradient_close;

namespace {

std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Checks every coordinate of every input against central differences.
void check_builder(const Builder& build, const std::vector<Tensor>& inputs, double rel = 1e-4,
                   double abs = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
  const Var out = build(tape, vars);
  const Gradients g = tape.backward(out);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto f = [&](const std::vector<double>& x) {
      Tape t2;
      std::vector<Var> v2;
      for (std::size_t j = 0; j < inputs.size(); ++j)
        v2.push_back(t2.constant(j == k ? Tensor(inputs[j].shape(), x) : inputs[j]));
      return build(t2, v2).value().item();
    };
    const Tensor grad = g[vars[k]];
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double fd = central_difference(f, inputs[k].to_vector(), i);
      INFO("input " << k << " coordinate " << i << " analytic " << grad[i] << " fd " << fd);
      CHECK(gradient_close(grad[i], fd, rel, abs));
    }
  }
}

}  // namespace

TEST_CASE("forward examples") {
  Tape tape;
  CHECK(ad::tanh(tape.constant(Tensor::scalar(0.0))).value().item() == 0.0);
  CHECK(ad::sigmoid(tape.constant(Tensor::scalar(0.0))).value().item() == 0.5);

  const Var eye = tape.constant(Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  const Var v = tape.constant(Tensor::vector({0.3, -2.5, 7.0}));
  const Var r = matmul(eye, v);
  CHECK(r.value().to_vector() == std::vector<double>{0.3, -2.5, 7.0});
}

TEST_CASE("backward examples") {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(3.0));
  const Gradients g = tape.backward(mul(x, x));
  CHECK(g[x].item() == doctest::Approx(6.0).epsilon(1e-15));

  Tape t2;
  const Var y = t2.variable(Tensor::scalar(0.0));
  CHECK(t2.backward(ad::tanh(y))[y].item() == 1.0);
}

TEST_CASE("outputs are recorded as differentiable only when an input requires grad") {
  Tape tape;
  const Var c = tape.constant(Tensor::vector({1.0, 2.0}));
  const Var v = tape.variable(Tensor::vector({1.0, 2.0}));
  CHECK_FALSE(ad::exp(c).requires_grad());
  CHECK(ad::exp(v).requires_grad());
  const Var out = sum(ad::exp(c));
  const Gradients g = tape.backward(out);
  CHECK(g.raw(c).empty());
}

TEST_CASE("random two-layer network matches finite differences") {
  std::mt19937_64 rng(20240917);
  const std::size_t in = 5, hidden = 7, outn = 3;
  const Tensor w1 = Tensor::matrix(hidden, in, random_values(rng, hidden * in));
  const Tensor b1 = Tensor::vector(random_values(rng, hidden));
  const Tensor w2 = Tensor::matrix(outn, hidden, random_values(rng, outn * hidden));
  const Tensor b2 = Tensor::vector(random_values(rng, outn));
  const Tensor x = Tensor::vector(random_values(rng, in));

  const auto net = [&](Tape& t, const std::vector<Var>& p) {
    const Var xv = t.constant(x);
    const Var h = ad::tanh(add(matmul(p[0], xv), p[1]));
    const Var o = add(matmul(p[2], h), p[3]);
    return sum(mul(o, o));
  };

  Tape tape;
  std::vector<Var> params{tape.variable(w1), tape.variable(b1), tape.variable(w2),
                          tape.variable(b2)};
  const Gradients g = tape.backward(net(tape, params));
  const std::vector<Tensor> values{w1, b1, w2, b2};

  // Ten random parameter coordinates.
  std::uniform_int_distribution<std::size_t> pick_tensor(0, 3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = pick_tensor(rng);
    std::uniform_int_distribution<std::size_t> pick_coord(0, values[k].size() - 1);
    const std::size_t i = pick_coord(rng);
    const auto f = [&](const std::vector<double>& flat) {
      Tape t2;
      std::vector<Var> p2;
      for (std::size_t j = 0; j < 4; ++j)
        p2.push_back(t2.constant(j == k ? Tensor(values[j].shape(), flat) : values[j]));
      return net(t2, p2).value().item();
    };
    const double fd = central_difference(f, values[k].to_vector(), i, 1e-5);
    const double an = g[params[k]][i];
    INFO("tensor " << k << " coord " << i << " analytic " << an << " fd " << fd);
    CHECK(gradient_close(an, fd, 1e-4, 1e-6));
  }
}

TEST_CASE("every primitive passes a finite-difference check") {
  std::mt19937_64 rng(7);
  const Tensor a = Tensor::vector(random_values(rng, 4));
  const Tensor b = Tensor::vector(random_values(rng, 4));
  const Tensor pos = Tensor::vector(random_values(rng, 4, 0.5, 2.0));
  const Tensor m = Tensor::matrix(3, 4, random_values(rng, 12));
  const Tensor mb = Tensor::matrix(4, 2, random_values(rng, 8));

  // Weighted sum makes the scalar output depend non-trivially on every element.
  const auto reduce = [&](Tape& t, Var v) {
    return sum(mul(v, t.constant(Tensor(v.shape(), random_values(rng, v.value().size())))));
  };
  std::mt19937_64 saved = rng;
  const auto fresh = [&] { rng = saved; };

  SUBCASE("matmul vector") {
    check_builder([&](Tape& t, const auto& v) { fresh(); return reduce(t, matmul(v[0], v[1])); },
                  {m, a});
  }
  SUBCASE("matmul matrix") {
    check_builder([&](Tape& t, const auto& v) { fresh(); return reduce(t, matmul(v[0], v[1])); },
                  {m, mb});
  }
  SUBCASE("add") {
    check_builder([&](Tape& t, const auto& v) { fresh(); return reduce(t, add(v[0], v[1])); },
                  {a, b});
  }
  SUBCASE("scale") {
    check_builder([&](Tape& t, const auto& v) { fresh(); return reduce(t, scale(v[0], -2.5)); },
                  {a});
  }
  SUBCASE("mul") {
    check_builder([&](Tape& t, const auto& v) { fresh(); return reduce(t, mul(v[0], v[1])); },
                  {a, b});
  }
  SUBCASE("tanh") {
    check_builder([&](Tape& t, const auto& v) { fresh(); return reduce(t, ad::tanh(v[0])); },
                  {a});
  }
  SUBCASE("sigmoid") {
    check_builder([&](Tape& t, const auto& v) { fresh(); return reduce(t, sigmoid(v[0])); }, {a});
  }
  SUBCASE("softplus") {
    check_builder([&](Tape& t, const auto& v) { fresh(); return reduce(t, softplus(v[0])); },
                  {a});
  }
  SUBCASE("exp") {
    check_builder([&](Tape& t, const auto& v) { fresh(); return reduce(t, ad::exp(v[0])); }, {a});
  }
  SUBCASE("log") {
    check_builder([&](Tape& t, const auto& v) { fresh(); return reduce(t, ad::log(v[0])); },
                  {pos});
  }
  SUBCASE("sum and mean") {
    check_builder([&](Tape&, const auto& v) { return add(sum(v[0]), scale(mean(v[1]), 3.0)); },
                  {a, b});
  }
  SUBCASE("concat and slice") {
    check_builder(
        [&](Tape& t, const auto& v) {
          fresh();
          const Var c = concat({v[0], slice(v[1], 1, 3), sum(v[0])});
          return reduce(t, c);
        },
        {a, b});
  }
  SUBCASE("clamp away from the bounds") {
    // Inputs lie in (-1, 1); bounds at ±0.5 cut some coordinates, and no coordinate
    // sits within the FD step of a bound.
    const Tensor x = Tensor::vector({-0.9, -0.2, 0.3, 0.8});
    check_builder(
        [&](Tape& t, const auto& v) { fresh(); return reduce(t, clamp(v[0], -0.5, 0.5)); }, {x});
  }
}

TEST_CASE("leaves used more than once accumulate") {
  Tape tape;
  const Var x = tape.variable(Tensor::vector({1.0, -2.0}));
  const Var y = add(add(x, x), mul(x, x));  // 2x + x²
  const Gradients g = tape.backward(sum(y));
  CHECK(g[x][0] == 4.0);   // 2 + 2·1
  CHECK(g[x][1] == -2.0);  // 2 + 2·(−2)
}

TEST_CASE("unreachable leaves get zero gradients") {
  Tape tape;
  const Var x = tape.variable(Tensor::vector({1.0, 2.0}));
  const Var unused = tape.variable(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const Gradients g = tape.backward(sum(x));
  const Tensor gu = g[unused];
  CHECK(gu.shape() == Shape(2, 2));
  for (double v : gu.data()) CHECK(v == 0.0);
}

TEST_CASE("backward is linear in the output") {
  std::mt19937_64 rng(99);
  const Tensor w = Tensor::matrix(3, 3, random_values(rng, 9));
  const Tensor x = Tensor::vector(random_values(rng, 3));
  const double a = 0.7, b = -1.9;

  const auto f = [&](Var wv, Var xv) { return sum(ad::tanh(matmul(wv, xv))); };
  const auto h = [&](Var wv, Var xv) { return sum(ad::exp(mul(matmul(wv, xv), xv))); };

  Tape t1;
  Var w1 = t1.variable(w), x1 = t1.variable(x);
  const Gradients gf = t1.backward(f(w1, x1));
  Tape t2;
  Var w2 = t2.variable(w), x2 = t2.variable(x);
  const Gradients gh = t2.backward(h(w2, x2));
  Tape t3;
  Var w3 = t3.variable(w), x3 = t3.variable(x);
  const Gradients gc = t3.backward(add(scale(f(w3, x3), a), scale(h(w3, x3), b)));

  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(gc[x3][i] - (a * gf[x1][i] + b * gh[x2][i])) <= 1e-12);
  for (std::size_t i = 0; i < w.size(); ++i)
    CHECK(std::abs(gc[w3][i] - (a * gf[w1][i] + b * gh[w2][i])) <= 1e-12);
}

TEST_CASE("gradients are deterministic across runs") {
  std::mt19937_64 rng(3);
  const Tensor w = Tensor::matrix(4, 4, random_values(rng, 16));
  const Tensor x = Tensor::vector(random_values(rng, 4));
  std::vector<double> first;
  for (int run = 0; run < 3; ++run) {
    Tape tape;
    const Var wv = tape.variable(w);
    const Var out = sum(softplus(matmul(wv, ad::tanh(matmul(wv, tape.constant(x))))));
    const auto g = tape.backward(out)[wv].to_vector();
    if (run == 0)
      first = g;
    else
      CHECK(g == first);
  }
}

TEST_CASE("contract and domain errors") {
  Tape tape;
  const Var m = tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  const Var v2 = tape.constant(Tensor::vector({1.0, 2.0}));
  CHECK_THROWS_AS(matmul(m, v2), ContractViolation);
  CHECK_THROWS_AS(add(v2, tape.constant(Tensor::vector({1.0, 2.0, 3.0}))), ContractViolation);
  CHECK_THROWS_AS(Tensor::vector({1.0, std::nan("")}), NumericDomainError);
  CHECK_THROWS_AS(Tensor::vector({INFINITY}), NumericDomainError);
  CHECK_THROWS_AS(Tensor(Shape(2, 2), {1.0, 2.0}), ContractViolation);
  CHECK_THROWS_AS(ad::log(tape.constant(Tensor::scalar(0.0))), NumericDomainError);
  CHECK_THROWS_AS(ad::exp(tape.constant(Tensor::scalar(1000.0))), NumericDomainError);
  CHECK_THROWS_AS(tape.backward(v2), ContractViolation);

  Tape other;
  const Var foreign = other.constant(Tensor::scalar(1.0));
  CHECK_THROWS_AS(add(tape.constant(Tensor::scalar(1.0)), foreign), ContractViolation);
}

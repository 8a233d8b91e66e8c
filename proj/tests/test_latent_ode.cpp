#include <cmath>
#include <random>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "lode/error.hpp"
#include "lode/latent_ode.hpp"

using namespace lode;
using namespace lode::model;
using lode::testing::gradient_close;

namespace {

Architecture small_arch(std::size_t features = 3) {
  Architecture a;
  a.feature_count = features;
  a.latent_dim = 4;
  a.encoder_hidden = 8;
  a.dynamics_hidden = 10;
  a.decoder_hidden = 8;
  a.classifier_hidden = 6;
  a.noise_dim = 2;
  return a;
}

IrregularSeries random_series(std::size_t features, std::size_t rows, std::uint64_t seed,
                              double p_observed = 0.6) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  IrregularSeries s;
  s.id = "s" + std::to_string(seed);
  for (std::size_t k = 0; k < features; ++k) s.feature_names.push_back("f" + std::to_string(k));
  double t = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    t += (0.5 + unif(rng)) / static_cast<double>(rows);
    s.times.push_back(std::min(t, 1.0 - 1e-9 * static_cast<double>(rows - i)));
    std::vector<double> v(features);
    std::vector<std::uint8_t> m(features);
    for (std::size_t k = 0; k < features; ++k) {
      v[k] = normal(rng);
      m[k] = unif(rng) < p_observed ? 1 : 0;
    }
    if (i == 0) m[0] = 1;
    s.values.push_back(v);
    s.mask.push_back(m);
  }
  return s;
}

ModelParams with_zeroed(ModelParams p, std::initializer_list<Param> which) {
  for (Param w : which) p[w] = ad::Tensor::zeros(p[w].shape());
  return p;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("layout and initialization") {
  const Architecture a = small_arch();
  const ModelParams p = ModelParams::initialize(a, 1, 0.1);
  CHECK(p.weights.size() == kParamCount);
  CHECK_NOTHROW(p.validate());
  CHECK(p[Param::DynW1].shape() == ad::Shape(10, 6));
  CHECK(p[Param::EncWz].shape() == ad::Shape(8, 7));
  CHECK(p[Param::ClsW2].shape() == ad::Shape(1, 6));

  const ModelParams q = ModelParams::initialize(a, 1, 0.1);
  for (std::size_t i = 0; i < kParamCount; ++i)
    CHECK(p.weights[i].to_vector() == q.weights[i].to_vector());

  ModelParams bad = p;
  bad[Param::DecW2] = ad::Tensor::zeros(ad::Shape(2, 8));
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
  bad = p;
  bad.obs_noise[0] = 0.0;
  CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("series validation names the offending field") {
  IrregularSeries s = random_series(3, 10, 4);
  CHECK_NOTHROW(validate(s));
  auto expect_field = [](const IrregularSeries& bad, const std::string& field) {
    try {
      validate(bad);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(e.field() == field);
    }
  };
  IrregularSeries bad = s;
  bad.times[3] = bad.times[2];
  expect_field(bad, "times");
  bad = s;
  bad.mask[1].pop_back();
  expect_field(bad, "mask");
  bad = s;
  for (auto& row : bad.mask) std::fill(row.begin(), row.end(), 0);
  expect_field(bad, "mask");
  bad = s;
  bad.label = 2;
  expect_field(bad, "label");
  // Unobserved entries may hold anything.
  bad = s;
  bad.mask[2][1] = 0;
  bad.values[2][1] = std::nan("");
  CHECK_NOTHROW(validate(bad));
}

TEST_CASE("encode is deterministic and clamps log-std") {
  const Architecture a = small_arch();
  const ModelParams p = ModelParams::initialize(a, 3, 0.1);
  const IrregularSeries s = random_series(3, 12, 5);
  const LatentPosterior x = encode(s, p, 1.0), y = encode(s, p, 1.0);
  CHECK(x.mean == y.mean);
  CHECK(x.std == y.std);
  REQUIRE(x.mean.size() == 4);

  ModelParams big = p;
  std::vector<double> b(8, 0.0);
  for (std::size_t i = 4; i < 8; ++i) b[i] = (i % 2 == 0) ? 50.0 : -50.0;
  big[Param::PostB] = ad::Tensor::vector(b);
  big[Param::PostW] = ad::Tensor::zeros(big[Param::PostW].shape());
  const LatentPosterior c = encode(s, big, 1.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const double ls = std::log(c.std[i]);
    CHECK(ls >= kLogStdMin - 1e-12);
    CHECK(ls <= kLogStdMax + 1e-12);
  }
  CHECK(std::log(c.std[0]) == doctest::Approx(kLogStdMax));
  CHECK(std::log(c.std[1]) == doctest::Approx(kLogStdMin));
}

TEST_CASE("encode only sees rows inside the fraction") {
  const ModelParams p = ModelParams::initialize(small_arch(), 3, 0.1);
  IrregularSeries s = random_series(3, 20, 6);
  const LatentPosterior half = encode(s, p, 0.5);
  const std::size_t cut = s.rows_until(0.5);
  REQUIRE(cut < s.size());
  for (std::size_t i = cut; i < s.size(); ++i)
    for (double& v : s.values[i]) v += 7.0;
  const LatentPosterior again = encode(s, p, 0.5);
  CHECK(half.mean == again.mean);
  CHECK(half.std == again.std);

  IrregularSeries late = s;
  for (std::size_t i = 0; i < late.size(); ++i)
    if (late.times[i] < 0.9) std::fill(late.mask[i].begin(), late.mask[i].end(), 0);
  CHECK_THROWS_AS(encode(late, p, 0.5), EmptyWindowError);
  CHECK_THROWS_AS(last_observed_time(late, 0.5), EmptyWindowError);
  CHECK_THROWS_AS(encode(s, p, 0.0), ContractViolation);
}

TEST_CASE("mask neutrality: unobserved values never reach the posterior") {
  const ModelParams p = ModelParams::initialize(small_arch(), 9, 0.1);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 100.0);
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    IrregularSeries s = random_series(3, 15, 100 + trial, 0.4);
    const LatentPosterior ref = encode(s, p, 1.0);
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t k = 0; k < 3; ++k)
        if (s.mask[i][k] == 0) s.values[i][k] = (trial % 3 == 0) ? std::nan("") : normal(rng);
    const LatentPosterior fuzzed = encode(s, p, 1.0);
    CHECK(ref.mean == fuzzed.mean);
    CHECK(ref.std == fuzzed.std);
  }
}

TEST_CASE("sample_z0: zero std returns the mean; sample mean obeys the CLT") {
  LatentPosterior post{{0.5, -1.0, 2.0}, {0.0, 0.0, 0.0}};
  CHECK(sample_z0(post, 1) == post.mean);
  CHECK(sample_z0(post, 2) == post.mean);

  post.std = {0.3, 1.0, 2.0};
  const int n = 10000;
  std::vector<double> sum(3, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto z = sample_z0(post, static_cast<std::uint64_t>(i));
    for (int k = 0; k < 3; ++k) sum[k] += z[k];
  }
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(sum[k] / n - post.mean[k]) < 4.0 * post.std[k] / std::sqrt(double(n)));
  CHECK(sample_z0(post, 42) == sample_z0(post, 42));
}

TEST_CASE("evolve: t=0 returns z0, zero dynamics keep z0, refinement agrees") {
  const Architecture a = small_arch();
  const ModelParams p = ModelParams::initialize(a, 21, 0.1);
  const std::vector<double> z0{0.3, -0.2, 0.8, 0.1};
  const std::vector<double> noise = sample_noise(a, 5);

  const std::vector<double> t0{0.0};
  CHECK(evolve(z0, noise, t0, p).states.at(0) == z0);

  const ModelParams still = with_zeroed(p, {Param::DynW3, Param::DynB3});
  const std::vector<double> grid{0.0, 0.3, 1.0, 1.5};
  for (const auto& z : evolve(z0, noise, grid, still).states) CHECK(z == z0);

  const std::vector<double> coarse{1.0};
  std::vector<double> fine;
  for (int i = 1; i <= 100; ++i) fine.push_back(i / 100.0);
  const auto zc = evolve(z0, noise, coarse, p).states.back();
  const auto zf = evolve(z0, noise, fine, p).states.back();
  CHECK(max_abs_diff(zc, zf) < 1e-6);
}

TEST_CASE("evolve_from composes with evolve and runs backwards") {
  const Architecture a = small_arch();
  ModelParams p = ModelParams::initialize(a, 22, 0.1);
  p[Param::DynW3] = ad::Tensor(p[Param::DynW3].shape(), [&] {
    auto v = p[Param::DynW3].to_vector();
    for (double& x : v) x *= 10.0;
    return v;
  }());
  const std::vector<double> z0{0.3, -0.2, 0.8, 0.1};
  const std::vector<double> noise = sample_noise(a, 6);

  const std::vector<double> mid{0.4}, end{1.0};
  const auto z_mid = evolve(z0, noise, mid, p).states[0];
  const auto direct = evolve(z0, noise, end, p).states[0];
  const auto composed = evolve_from(z_mid, 0.4, noise, end, p).states[0];
  CHECK(max_abs_diff(direct, composed) < 1e-6);

  const std::vector<double> back{0.0};
  const auto recovered = evolve_from(direct, 1.0, noise, back, p).states[0];
  CHECK(max_abs_diff(recovered, z0) < 1e-6);
  CHECK(max_abs_diff(direct, z0) > 1e-3);
}

TEST_CASE("latent_dynamics: vjp agrees with the tape network and finite differences") {
  const Architecture a = small_arch();
  const ModelParams p = ModelParams::initialize(a, 23, 0.1);
  const std::vector<double> noise{0.4, -1.1};
  const ode::VjpDynamics d = latent_dynamics(p, noise);
  const std::vector<double> z{0.2, -0.5, 0.9, 0.05}, adj{1.0, -0.3, 0.5, 2.0};

  std::vector<double> f_direct(4), f_tape(4), g_z(4), g_theta(d.param_dim);
  d.eval(0.0, z, f_direct);
  d.vjp(0.0, z, adj, f_tape, g_z, g_theta);
  CHECK(max_abs_diff(f_direct, f_tape) < 1e-14);

  // Reference reverse pass through the tape.
  ad::Tape tape;
  const ParamVars pv = record_params(tape, p, true);
  const ad::Var zv = tape.variable(ad::Tensor::vector(z));
  const ad::Var out = dynamics_on_tape(pv, zv, tape.constant(ad::Tensor::vector(noise)));
  const ad::Gradients g = tape.backward(ad::sum(ad::mul(out, tape.constant(ad::Tensor::vector(adj)))));
  CHECK(max_abs_diff(out.value().to_vector(), f_direct) < 1e-14);
  CHECK(max_abs_diff(g[zv].to_vector(), g_z) < 1e-13);
  std::vector<double> flat;
  for (std::size_t i = index(kDynamicsBegin); i < index(kDynamicsEnd); ++i) {
    const auto gi = g[pv.vars[i]].to_vector();
    flat.insert(flat.end(), gi.begin(), gi.end());
  }
  REQUIRE(flat.size() == g_theta.size());
  CHECK(max_abs_diff(flat, g_theta) < 1e-13);

  auto dot_field = [&](const std::vector<double>& zz) {
    std::vector<double> f(4);
    d.eval(0.0, zz, f);
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += adj[i] * f[i];
    return s;
  };
  for (std::size_t i = 0; i < 4; ++i) {
    const double fd = lode::testing::central_difference(dot_field, z, i);
    CHECK(gradient_close(g_z[i], fd, 1e-5, 1e-8));
  }
  // Spot-check parameter gradients through a perturbed copy of the first dynamics weight.
  for (std::size_t j : {0ul, 7ul, 33ul}) {
    auto value_at = [&](const std::vector<double>& w) {
      ModelParams q = p;
      q[Param::DynW1] = ad::Tensor(q[Param::DynW1].shape(), w);
      const ode::VjpDynamics dq = latent_dynamics(q, noise);
      std::vector<double> f(4);
      dq.eval(0.0, z, f);
      double s = 0.0;
      for (int i = 0; i < 4; ++i) s += adj[i] * f[i];
      return s;
    };
    const double fd = lode::testing::central_difference(value_at, p[Param::DynW1].to_vector(), j);
    CHECK(gradient_close(g_theta[j], fd, 1e-5, 1e-8));
  }
}

TEST_CASE("decode and classify") {
  const Architecture a = small_arch();
  ModelParams p = ModelParams::initialize(a, 31, 0.1);
  const std::vector<double> z0{0.3, -0.2, 0.8, 0.1};
  const std::vector<double> noise = sample_noise(a, 7);
  const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0, 1.25};
  const LatentPath path = evolve(z0, noise, grid, p);

  ModelParams flat = with_zeroed(p, {Param::DecW2});
  flat[Param::DecB2] = ad::Tensor::vector({1.5, -2.0, 0.25});
  for (const auto& m : decode(path, flat, 1.0).means)
    CHECK(m == std::vector<double>{1.5, -2.0, 0.25});

  const Reconstruction rec = decode(path, p, 0.5);
  CHECK(rec.observed_flag == std::vector<bool>{true, true, true, false, false, false});
  const Reconstruction none = decode(path, p, -0.1);
  for (bool f : none.observed_flag) CHECK_FALSE(f);

  const ModelParams neutral = with_zeroed(p, {Param::ClsW2, Param::ClsB2});
  CHECK(classify(path, neutral, 1.0) == 0.5);

  // classify reads the latent at the last time <= observed_end.
  CHECK(classify(path, p, 0.6) == classify_latent(path.states[2], p));
  CHECK(classify(path, p, -1.0) == classify_latent(path.states[0], p));

  ModelParams extreme = p;
  extreme[Param::ClsB2] = ad::Tensor::vector({80.0});
  const double hi = classify(path, extreme, 1.0);
  extreme[Param::ClsB2] = ad::Tensor::vector({-80.0});
  const double lo = classify(path, extreme, 1.0);
  CHECK(hi < 1.0);
  CHECK(lo > 0.0);
}

TEST_CASE("z0 is a sufficient statistic for the forward path") {
  const Architecture a = small_arch();
  const ModelParams p = ModelParams::initialize(a, 41, 0.1);
  const IrregularSeries s1 = random_series(3, 12, 50), s2 = random_series(3, 12, 51);
  REQUIRE(encode(s1, p, 1.0).mean != encode(s2, p, 1.0).mean);
  const std::vector<double> z0 = sample_z0(encode(s1, p, 1.0), 3);
  const std::vector<double> noise = sample_noise(a, 3);
  const std::vector<double> grid{0.1, 0.5, 1.0};
  // The path depends on the series only through z0.
  const auto x = evolve(z0, noise, grid, p).states;
  const auto y = evolve(z0, noise, grid, p).states;
  CHECK(x == y);
}

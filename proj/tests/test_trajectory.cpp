#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "lode/data.hpp"
#include "lode/error.hpp"
#include "lode/trajectory.hpp"

using namespace lode;
using namespace lode::engine;
using model::Param;

namespace {

struct Fixture {
  data::Collection series;
  model::ModelParams params;
};

Fixture fixture(std::uint64_t seed = 1) {
  data::SpiralConfig c;
  c.n_series = 4;
  c.points_per_series = 15;
  c.seed = seed;
  const auto raw = data::gen_spirals(c);
  const NormStats norm = data::fit_norm(raw);
  model::Architecture a;
  a.feature_count = 2;
  a.latent_dim = 4;
  a.encoder_hidden = 8;
  a.dynamics_hidden = 12;
  a.decoder_hidden = 8;
  a.classifier_hidden = 6;
  Fixture f{data::normalize(raw, norm), model::ModelParams::initialize(a, seed + 10, 0.3)};
  f.params.norm = norm;
  f.params.feature_names = {"x", "y"};
  return f;
}

void fill(model::ModelParams& p, Param which, double v) {
  p[which] = ad::Tensor(p[which].shape(), std::vector<double>(p[which].size(), v));
}

/// Stronger dynamics so members spread visibly within the horizon.
model::ModelParams divergent(model::ModelParams p) {
  auto w = p[Param::DynW3].to_vector();
  for (double& x : w) x *= 40.0;
  p[Param::DynW3] = ad::Tensor(p[Param::DynW3].shape(), w);
  fill(p, Param::PostB, 0.0);
  return p;
}

}  // namespace

TEST_CASE("grid: 48 knots per window, extra times merged") {
  const auto g = make_grid(1.5);
  CHECK(g.size() == 73);
  CHECK(g.front() == 0.0);
  CHECK(g.back() == 1.5);
  const double extra[] = {0.51, 0.5};
  const auto h = make_grid(1.0, extra);
  CHECK(h.size() == 50);
  CHECK(std::is_sorted(h.begin(), h.end()));
  CHECK(std::count(h.begin(), h.end(), 0.51) == 1);
  CHECK(make_grid(1.01).back() == 1.01);
}

TEST_CASE("single-member ensemble has zero spread and no horizon") {
  Fixture f = fixture();
  EnsembleOptions o;
  o.members = 1;
  const auto e = sample_ensemble(f.series[0], f.params, o);
  REQUIRE(e.members.size() == 1);
  for (const auto& row : e.spread)
    for (double s : row) CHECK(s == 0.0);
  CHECK_FALSE(e.hop.has_value());
  CHECK_THROWS_AS(estimate_hop(e, 1.0), ContractViolation);
}

TEST_CASE("zero dynamics: constant members and constant spread") {
  Fixture f = fixture();
  fill(f.params, Param::DynW3, 0.0);
  fill(f.params, Param::DynB3, 0.0);
  EnsembleOptions o;
  o.members = 8;
  const auto e = sample_ensemble(f.series[1], f.params, o);
  for (const auto& m : e.members)
    for (const auto& row : m.decoded.means) CHECK(row == m.decoded.means.front());
  for (const auto& row : e.spread) CHECK(row == e.spread.front());
  CHECK(e.pooled_spread.front() > 0.0);
}

TEST_CASE("ensemble invariants: shared grid, non-negative spread, risk in (0,1)") {
  Fixture f = fixture();
  EnsembleOptions o;
  o.members = 6;
  o.fraction = 0.6;
  o.horizon_mult = 2.0;
  const auto e = sample_ensemble(f.series[2], f.params, o);
  CHECK(e.dropped == 0);
  for (const auto& m : e.members) {
    CHECK(m.decoded.times == e.grid);
    CHECK(m.decoded.observed_flag[0]);
    CHECK_FALSE(m.decoded.observed_flag.back());
  }
  for (const auto& row : e.spread)
    for (double s : row) CHECK(s >= 0.0);
  for (const auto& p : e.risk.points) {
    CHECK(p.probability > 0.0);
    CHECK(p.probability < 1.0);
  }
  // Prefix points 0.2, 0.4, 0.6 then every knot past the observed end.
  const std::size_t knots = std::count_if(e.grid.begin(), e.grid.end(), [](double t) { return t > 0.6; });
  CHECK(e.risk.points.size() == 3 + knots);
  CHECK(e.risk.points[2].duration == 0.6);
}

TEST_CASE("horizon estimate: boundary, never, threshold monotonicity") {
  Fixture f = fixture();
  EnsembleOptions o;
  o.members = 12;
  o.horizon_mult = 3.0;
  auto e = sample_ensemble(f.series[0], divergent(f.params), o);

  CHECK_FALSE(estimate_hop(e, 1e9).has_value());
  const std::size_t first = std::upper_bound(e.grid.begin(), e.grid.end(), e.observed_end) - e.grid.begin();
  const double just_below = e.pooled_spread[first] * 0.999;
  const auto at_boundary = estimate_hop(e, just_below);
  REQUIRE(at_boundary.has_value());
  CHECK(*at_boundary == e.grid[first]);

  double prev = -1.0;
  for (double theta = 1e-3; theta < 10.0; theta *= 1.3) {
    const auto h = estimate_hop(e, theta);
    const double v = h ? *h : std::numeric_limits<double>::infinity();
    CHECK(v >= prev);
    prev = v;
  }

  auto flat = e;
  for (double& s : flat.pooled_spread) s = 0.0;
  CHECK_FALSE(estimate_hop(flat, 0.5).has_value());
}

TEST_CASE("ensemble statistics are invariant under member permutation") {
  Fixture f = fixture();
  EnsembleOptions o;
  o.members = 9;
  const auto params = divergent(f.params);
  const auto e = sample_ensemble(f.series[3], params, o);
  auto p = e;
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(p.members.begin(), p.members.end(), rng);
    recompute_statistics(p, params);
    CHECK(p.spread == e.spread);
    CHECK(p.pooled_spread == e.pooled_spread);
    CHECK(p.hop == e.hop);
    REQUIRE(p.risk.points.size() == e.risk.points.size());
    for (std::size_t i = 0; i < p.risk.points.size(); ++i)
      CHECK(p.risk.points[i].probability == e.risk.points[i].probability);
  }
}

TEST_CASE("seeded determinism, independent of thread count") {
  Fixture f = fixture();
  EnsembleOptions o;
  o.members = 10;
  o.seed = 99;
  o.threads = 1;
  const auto a = to_json(sample_ensemble(f.series[0], f.params, o), f.params).dump();
  o.threads = 4;
  const auto b = to_json(sample_ensemble(f.series[0], f.params, o), f.params).dump();
  CHECK(a == b);
  o.seed = 100;
  CHECK(to_json(sample_ensemble(f.series[0], f.params, o), f.params).dump() != a);

  HypotheticalPoint q{1.2, 0, 0.3, 0.5};
  o.threads = 1;
  const auto c1 = to_json(condition_on_point(f.series[0], f.params, q, o, 200), f.params).dump();
  o.threads = 3;
  const auto c2 = to_json(condition_on_point(f.series[0], f.params, q, o, 200), f.params).dump();
  CHECK(c1 == c2);
}

TEST_CASE("divergent members are dropped; too many raise ensemble-degenerate") {
  Fixture f = fixture();
  fill(f.params, Param::DynW3, 1e307);
  EnsembleOptions o;
  o.members = 4;
  try {
    sample_ensemble(f.series[0], f.params, o);
    FAIL("expected EnsembleDegenerateError");
  } catch (const EnsembleDegenerateError& e) {
    CHECK(e.dropped() == 4);
  }
}

TEST_CASE("conditioning: wide kernel gives an evenly spaced subsample") {
  Fixture f = fixture();
  EnsembleOptions o;
  o.members = 10;
  HypotheticalPoint q{1.3, 1, 0.0, 1e12};
  const auto e = condition_on_point(f.series[1], f.params, q, o, 100);
  REQUIRE(e.conditioning.has_value());
  CHECK(e.conditioning->effective_sample_size == doctest::Approx(100.0));
  const auto& sel = e.conditioning->selected;
  REQUIRE(sel.size() == 10);
  for (std::size_t k = 1; k < sel.size(); ++k) CHECK(sel[k] - sel[k - 1] == 10);
  // The selected members are the proposals with the same index.
  o.members = 100;
  const auto all = sample_ensemble(f.series[1], f.params, o);
  CHECK(e.members[3].decoded.means.back() ==
        all.members[sel[3]].decoded.means.back());
}

TEST_CASE("conditioning: point on the ensemble mean with wide kernel barely moves the mean") {
  Fixture f = fixture(3);
  const auto params = divergent(f.params);
  EnsembleOptions o;
  o.members = 200;
  o.horizon_mult = 1.5;
  o.seed = 8;
  const std::size_t M = 50 * o.members;
  EnsembleOptions big = o;
  big.members = M;
  const auto base = sample_ensemble(f.series[0], params, big);
  const std::size_t qi = std::find(base.grid.begin(), base.grid.end(), 1.25) - base.grid.begin();
  double mean = 0;
  for (const auto& m : base.members) mean += m.decoded.means[qi][0];
  mean /= static_cast<double>(M);
  HypotheticalPoint q{1.25, 0, mean, 20.0};
  const auto c = condition_on_point(f.series[0], params, q, o);
  double worst = 0;
  for (std::size_t t = 0; t < c.grid.size(); ++t)
    for (std::size_t k = 0; k < 2; ++k) {
      double a = 0, b = 0;
      for (const auto& m : c.members) a += m.decoded.means[t][k];
      for (const auto& m : base.members) b += m.decoded.means[t][k];
      worst = std::max(worst, std::abs(a / 200.0 - b / static_cast<double>(M)));
    }
  MESSAGE("largest mean shift ", worst);
  CHECK(worst < 0.05);
}

TEST_CASE("conditioning: kernel-weighted distance never exceeds the proposal average") {
  Fixture f = fixture();
  const auto params = divergent(f.params);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> time(0.0, 1.5), value(-2.0, 2.0), width(0.05, 2.0);
  int feasible = 0;
  for (int i = 0; i < 20; ++i) {
    HypotheticalPoint q{time(rng), static_cast<std::size_t>(i % 2), value(rng), width(rng)};
    EnsembleOptions o;
    o.members = 5;
    o.seed = static_cast<std::uint64_t>(i);
    try {
      const auto e = condition_on_point(f.series[i % 4], params, q, o);
      const auto& c = *e.conditioning;
      CHECK(c.weighted_mean_distance <= c.proposal_mean_distance * (1 + 1e-12));
      CHECK(c.effective_sample_size >= kMinEffectiveSampleSize);
      ++feasible;
    } catch (const QueryInfeasibleError&) {
    }
  }
  CHECK(feasible >= 10);
}

TEST_CASE("conditioning: far-away point is infeasible and reports the best distance") {
  Fixture f = fixture();
  EnsembleOptions o;
  o.members = 5;
  HypotheticalPoint q{1.2, 0, 12.0, 0.1};
  try {
    condition_on_point(f.series[0], f.params, q, o);
    FAIL("expected QueryInfeasibleError");
  } catch (const QueryInfeasibleError& e) {
    CHECK(e.best_distance() > 9.0);
    CHECK(e.effective_sample_size() < kMinEffectiveSampleSize);
  }
  HypotheticalPoint bad{1.2, 2, 0.0, 0.1};
  CHECK_THROWS_AS(condition_on_point(f.series[0], f.params, bad, o), ValidationError);
  bad = {1.2, 0, 0.0, 0.0};
  CHECK_THROWS_AS(condition_on_point(f.series[0], f.params, bad, o), ValidationError);
}

TEST_CASE("reconstruct_past: identity, zero dynamics, round trip") {
  Fixture f = fixture();
  const std::vector<double> z{0.3, -0.2, 0.5, 0.1};
  const double same[] = {0.7};
  const auto id = reconstruct_past(z, 0.7, same, f.params);
  REQUIRE(id.states.size() == 1);
  CHECK(id.states[0] == z);

  auto still = f.params;
  fill(still, Param::DynW3, 0.0);
  fill(still, Param::DynB3, 0.0);
  const double back[] = {0.5, 0.2, 0.0};
  for (const auto& s : reconstruct_past(z, 0.9, back, still).states) CHECK(s == z);

  const auto params = divergent(f.params);
  const std::vector<double> noise{0.4, -1.0};
  const double fwd[] = {1.0};
  const auto forward = model::evolve(z, noise, fwd, params);
  const double to0[] = {0.0};
  const auto round = reconstruct_past(forward.states[0], 1.0, to0, params, noise);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(round.states[0][i] == doctest::Approx(z[i]).epsilon(1e-6));

  const double wrong[] = {0.2, 0.5};
  CHECK_THROWS_AS(reconstruct_past(z, 0.9, wrong, params), ContractViolation);
  const double later[] = {1.1};
  CHECK_THROWS_AS(reconstruct_past(z, 0.9, later, params), ContractViolation);
}

TEST_CASE("backward paths end at the query state and are distinct") {
  Fixture f = fixture();
  const auto params = divergent(f.params);
  EnsembleOptions o;
  o.members = 8;
  HypotheticalPoint q{1.1, 0, 0.0, 1.0};
  const auto e = condition_on_point(f.series[0], params, q, o, 80);
  const auto paths = backward_paths(e, params, q, 3);
  REQUIRE_FALSE(paths.empty());
  for (const auto& p : paths) {
    CHECK(p.times.front() == 1.1);
    CHECK(p.times.back() == 0.0);
    CHECK(std::is_sorted(p.times.rbegin(), p.times.rend()));
  }
}

TEST_CASE("risk curve: zero classifier is flat at one half with no crossing") {
  Fixture f = fixture();
  fill(f.params, Param::ClsW2, 0.0);
  fill(f.params, Param::ClsB2, 0.0);
  const double fr[] = {0.2, 0.4, 0.6, 0.8, 1.0};
  const auto r = risk_curve(f.series[0], f.params, fr);
  REQUIRE(r.points.size() == 5);
  for (const auto& p : r.points) CHECK(p.probability == 0.5);
  CHECK_FALSE(r.crossing.has_value());
}

TEST_CASE("risk curve: single full-window point equals direct classification") {
  Fixture f = fixture();
  const double fr[] = {1.0};
  const auto r = risk_curve(f.series[1], f.params, fr);
  const auto post = model::encode(f.series[1], f.params, 1.0);
  const double tc = model::last_observed_time(f.series[1], 1.0);
  const double at[] = {tc};
  const auto path = model::evolve(post.mean, std::vector<double>(2, 0.0), at, f.params);
  REQUIRE(r.points.size() == 1);
  CHECK(r.points[0].probability == model::classify(path, f.params, 1.0));
  const double unsorted[] = {0.6, 0.4};
  CHECK_THROWS_AS(risk_curve(f.series[1], f.params, unsorted), ValidationError);
}

TEST_CASE("risk curve crossing is the first strictly-above point") {
  Fixture f = fixture();
  fill(f.params, Param::ClsW2, 0.0);
  fill(f.params, Param::ClsB2, 0.3);
  const double fr[] = {0.4, 1.0};
  const auto r = risk_curve(f.series[0], f.params, fr, 0.55);
  REQUIRE(r.crossing.has_value());
  CHECK(*r.crossing == 0.4);
  CHECK_FALSE(risk_curve(f.series[0], f.params, fr, 0.6).crossing.has_value());
}

TEST_CASE("export document in normalized and raw units") {
  Fixture f = fixture();
  EnsembleOptions o;
  o.members = 3;
  const auto e = sample_ensemble(f.series[0], f.params, o);
  const auto n = to_json(e, f.params, Units::Normalized);
  const auto r = to_json(e, f.params, Units::Raw);
  CHECK(n["units"] == "normalized");
  CHECK(r["units"] == "raw");
  CHECK(n["grid"].size() == e.grid.size());
  CHECK(n["members"].size() == 3);
  CHECK(n["hop"]["beyond_grid"].is_boolean());
  const double xn = n["members"][1]["values"][5][1];
  const double xr = r["members"][1]["values"][5][1];
  CHECK(xr == doctest::Approx(f.params.norm.to_raw(1, xn)));
  const double sn = n["spread"][7][0], sr = r["spread"][7][0];
  CHECK(sr == doctest::Approx(sn * f.params.norm.std[0]));
  auto bare = f.params;
  bare.norm = {};
  CHECK_THROWS_AS(to_json(e, bare, Units::Raw), ValidationError);
}

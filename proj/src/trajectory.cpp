#include "lode/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "lode/error.hpp"
#include "lode/seed.hpp"
#include "parallel.hpp"

namespace lode::engine {

using nlohmann::json;

namespace {

constexpr std::uint64_t kResampleSalt = 0x5e5a3b1e;

/// Sum in ascending order so the result does not depend on input order.
double ordered_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  return std::accumulate(v.begin(), v.end(), 0.0);
}

std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

/// Draws and integrates members; failed solves come back empty.
std::vector<std::optional<Member>> draw_members(const model::LatentPosterior& posterior,
                                                const model::ModelParams& params,
                                                const std::vector<double>& grid,
                                                double observed_end, std::uint64_t seed,
                                                std::size_t count, const EnsembleOptions& o) {
  std::vector<std::optional<Member>> out(count);
  detail::parallel_for(count, o.threads, [&](std::size_t i) {
    Member m;
    m.seed = mix_seed(seed, 7, i);
    m.z0 = model::sample_z0(posterior, m.seed);
    m.noise = model::sample_noise(params.arch, m.seed);
    try {
      m.latent = model::evolve(m.z0, m.noise, grid, params, o.tolerances);
    } catch (const DivergenceError&) {
      return;
    } catch (const StiffnessError&) {
      return;
    }
    m.decoded = model::decode(m.latent, params, observed_end);
    for (const auto& row : m.decoded.means)
      for (double x : row)
        if (!std::isfinite(x)) return;
    out[i] = std::move(m);
  });
  return out;
}

std::size_t count_dropped(const std::vector<std::optional<Member>>& drawn) {
  return static_cast<std::size_t>(
      std::count_if(drawn.begin(), drawn.end(), [](const auto& m) { return !m; }));
}

void check_degenerate(std::size_t dropped, std::size_t requested) {
  if (4 * dropped > requested)
    throw EnsembleDegenerateError(dropped, std::to_string(dropped) + " of " +
                                               std::to_string(requested) +
                                               " members diverged");
}

double point_probability(const IrregularSeries& series, const model::ModelParams& params,
                         double fraction, const ode::Tolerances& tol) {
  const model::LatentPosterior post = model::encode(series, params, fraction);
  const double tc = model::last_observed_time(series, fraction);
  const std::vector<double> at{tc};
  const model::LatentPath path =
      model::evolve(post.mean, zeros(params.arch.noise_dim), at, params, tol);
  return model::classify_latent(path.states[0], params);
}

/// Risk at the prefix fractions k/5 <= fraction (and the fraction itself);
/// prefixes without observations are skipped.
std::vector<RiskPoint> prefix_risk(const IrregularSeries& series, const model::ModelParams& params,
                                   double fraction, const ode::Tolerances& tol) {
  std::vector<double> fs;
  for (int k = 1; k <= 5; ++k)
    if (k / 5.0 <= fraction + 1e-12) fs.push_back(k / 5.0);
  if (fs.empty() || std::abs(fs.back() - fraction) > 1e-12) fs.push_back(fraction);
  std::vector<RiskPoint> out;
  for (double f : fs) {
    try {
      out.push_back({f, point_probability(series, params, f, tol)});
    } catch (const EmptyWindowError&) {
    }
  }
  return out;
}

void set_crossing(RiskCurve& r) {
  r.crossing.reset();
  for (const RiskPoint& p : r.points)
    if (p.probability > r.threshold) {
      r.crossing = p.duration;
      return;
    }
}

std::size_t grid_index(const std::vector<double>& grid, double t) {
  const auto it = std::lower_bound(grid.begin(), grid.end(), t);
  if (it == grid.end() || *it != t) throw ContractViolation("time is not on the ensemble grid");
  return static_cast<std::size_t>(it - grid.begin());
}

}  // namespace

void EnsembleOptions::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ValidationError("fraction", "fraction must lie in (0, 1]");
  if (members < 1) throw ValidationError("K", "K must be at least 1");
  if (!(horizon_mult >= 1.0) || horizon_mult > 100.0)
    throw ValidationError("horizon_mult", "horizon_mult must lie in [1, 100]");
  if (!(hop_threshold > 0.0)) throw ValidationError("theta_hop", "theta_hop must be positive");
  if (!(risk_threshold > 0.0 && risk_threshold < 1.0))
    throw ValidationError("threshold", "threshold must lie in (0, 1)");
}

void HypotheticalPoint::validate(std::size_t feature_count) const {
  if (!(tolerance > 0.0)) throw ValidationError("tolerance", "tolerance must be positive");
  if (feature >= feature_count) throw ValidationError("feature", "feature index out of range");
  if (!(time >= 0.0) || !std::isfinite(time))
    throw ValidationError("time", "time must be finite and non-negative");
  if (!std::isfinite(value)) throw ValidationError("value", "value must be finite");
}

std::vector<double> make_grid(double horizon_mult, std::span<const double> extra) {
  std::vector<double> grid;
  const double n = static_cast<double>(kKnotsPerWindow);
  for (std::size_t i = 0;; ++i) {
    const double t = static_cast<double>(i) / n;
    if (t > horizon_mult + 1e-12) break;
    grid.push_back(t);
  }
  if (grid.back() < horizon_mult) grid.push_back(horizon_mult);
  grid.insert(grid.end(), extra.begin(), extra.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

std::optional<double> estimate_hop(const TrajectoryEnsemble& e, double threshold) {
  if (e.members.size() < 2) throw ContractViolation("horizon estimate needs at least two members");
  for (std::size_t i = 0; i < e.grid.size(); ++i)
    if (e.grid[i] > e.observed_end && e.pooled_spread[i] > threshold) return e.grid[i];
  return std::nullopt;
}

void recompute_statistics(TrajectoryEnsemble& e, const model::ModelParams& params) {
  const std::size_t T = e.grid.size(), F = params.arch.feature_count, K = e.members.size();
  if (K == 0) throw ContractViolation("ensemble has no members");
  e.spread.assign(T, std::vector<double>(F, 0.0));
  e.pooled_spread.assign(T, 0.0);
  std::vector<double> col(K), dev(K);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t k = 0; k < K; ++k) col[k] = e.members[k].decoded.means[t][f];
      const double mean = ordered_sum(col) / static_cast<double>(K);
      for (std::size_t k = 0; k < K; ++k) dev[k] = (col[k] - mean) * (col[k] - mean);
      e.spread[t][f] = std::sqrt(ordered_sum(dev) / static_cast<double>(K));
    }
    std::vector<double> row = e.spread[t];
    e.pooled_spread[t] = ordered_sum(row) / static_cast<double>(F);
  }
  e.hop = K >= 2 ? estimate_hop(e, e.hop_threshold) : std::nullopt;

  std::erase_if(e.risk.points, [&](const RiskPoint& p) { return p.duration > e.observed_end; });
  std::vector<double> probs(K);
  for (std::size_t t = 0; t < T; ++t) {
    if (e.grid[t] <= e.observed_end) continue;
    for (std::size_t k = 0; k < K; ++k)
      probs[k] = model::classify_latent(e.members[k].latent.states[t], params);
    e.risk.points.push_back({e.grid[t], ordered_sum(probs) / static_cast<double>(K)});
  }
  set_crossing(e.risk);
}

TrajectoryEnsemble sample_ensemble(const IrregularSeries& series, const model::ModelParams& params,
                                   const EnsembleOptions& o) {
  o.validate();
  const model::LatentPosterior post = model::encode(series, params, o.fraction);
  TrajectoryEnsemble e;
  e.grid = make_grid(o.horizon_mult);
  e.fraction = o.fraction;
  e.observed_end = o.fraction;
  e.seed = o.seed;
  e.hop_threshold = o.hop_threshold;
  auto drawn = draw_members(post, params, e.grid, e.observed_end, o.seed, o.members, o);
  e.dropped = count_dropped(drawn);
  check_degenerate(e.dropped, o.members);
  for (auto& m : drawn)
    if (m) e.members.push_back(std::move(*m));
  e.risk.threshold = o.risk_threshold;
  e.risk.points = prefix_risk(series, params, o.fraction, o.tolerances);
  recompute_statistics(e, params);
  return e;
}

TrajectoryEnsemble condition_on_point(const IrregularSeries& series,
                                      const model::ModelParams& params,
                                      const HypotheticalPoint& point, const EnsembleOptions& o,
                                      std::size_t proposals) {
  o.validate();
  point.validate(params.arch.feature_count);
  const std::size_t K = o.members;
  const std::size_t M = proposals == 0 ? 50 * K : proposals;
  if (M < K) throw ValidationError("M", "proposal count must be at least K");
  const model::LatentPosterior post = model::encode(series, params, o.fraction);

  TrajectoryEnsemble e;
  const double tq[] = {point.time};
  e.grid = make_grid(std::max(o.horizon_mult, point.time), tq);
  e.fraction = o.fraction;
  e.observed_end = o.fraction;
  e.seed = o.seed;
  e.hop_threshold = o.hop_threshold;
  const std::size_t qi = grid_index(e.grid, point.time);

  auto drawn = draw_members(post, params, e.grid, e.observed_end, o.seed, M, o);
  e.dropped = count_dropped(drawn);
  check_degenerate(e.dropped, M);
  std::vector<Member> pool;
  std::vector<std::size_t> pool_index;
  for (std::size_t i = 0; i < M; ++i)
    if (drawn[i]) {
      pool.push_back(std::move(*drawn[i]));
      pool_index.push_back(i);
    }
  const std::size_t n = pool.size();

  std::vector<double> d(n), logw(n);
  const double inv2e2 = 1.0 / (2.0 * point.tolerance * point.tolerance);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = std::abs(pool[i].decoded.means[qi][point.feature] - point.value);
    logw[i] = -d[i] * d[i] * inv2e2;
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  double z = 0.0;
  for (double lw : logw) z += std::exp(lw - top);
  std::vector<double> w(n);
  double sum_w2 = 0.0, weighted = 0.0, plain = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::exp(logw[i] - top) / z;
    sum_w2 += w[i] * w[i];
    weighted += w[i] * d[i];
    plain += d[i];
  }
  Conditioning c;
  c.time = point.time;
  c.feature = point.feature;
  c.value = point.value;
  c.tolerance = point.tolerance;
  c.proposals = M;
  c.effective_sample_size = 1.0 / sum_w2;
  c.best_distance = *std::min_element(d.begin(), d.end());
  c.proposal_mean_distance = plain / static_cast<double>(n);
  c.weighted_mean_distance = weighted;
  if (c.effective_sample_size < kMinEffectiveSampleSize)
    throw QueryInfeasibleError(c.best_distance, c.effective_sample_size,
                               "the model considers this point implausible (effective sample size " +
                                   std::to_string(c.effective_sample_size) + ")");

  // Systematic resampling: one uniform offset, K evenly spaced pointers.
  std::mt19937_64 rng(mix_seed(o.seed, kResampleSalt));
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) / static_cast<double>(K);
  double cum = w[0];
  std::size_t j = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const double target = u + static_cast<double>(k) / static_cast<double>(K);
    while (cum < target && j + 1 < n) cum += w[++j];
    c.selected.push_back(pool_index[j]);
    e.members.push_back(pool[j]);
  }
  e.conditioning = std::move(c);
  e.risk.threshold = o.risk_threshold;
  e.risk.points = prefix_risk(series, params, o.fraction, o.tolerances);
  recompute_statistics(e, params);
  return e;
}

model::LatentPath reconstruct_past(std::span<const double> z_at, double from_time,
                                   std::span<const double> to_times,
                                   const model::ModelParams& params, std::span<const double> noise,
                                   const ode::Tolerances& tol) {
  for (std::size_t i = 0; i < to_times.size(); ++i) {
    if (to_times[i] > from_time)
      throw ContractViolation("reconstruct_past times must not exceed the start time");
    if (i > 0 && to_times[i] > to_times[i - 1])
      throw ContractViolation("reconstruct_past times must be non-increasing");
  }
  const std::vector<double> zero = zeros(params.arch.noise_dim);
  return model::evolve_from(z_at, from_time, noise.empty() ? std::span<const double>(zero) : noise,
                            to_times, params, tol);
}

std::vector<model::Reconstruction> backward_paths(const TrajectoryEnsemble& e,
                                                  const model::ModelParams& params,
                                                  const HypotheticalPoint& point,
                                                  std::size_t count) {
  const std::size_t qi = grid_index(e.grid, point.time);
  std::vector<std::size_t> order(e.members.size());
  std::iota(order.begin(), order.end(), 0);
  auto dist = [&](std::size_t k) {
    return std::abs(e.members[k].decoded.means[qi][point.feature] - point.value);
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist(a) < dist(b); });
  std::vector<double> back(e.grid.begin(), e.grid.begin() + static_cast<std::ptrdiff_t>(qi) + 1);
  std::reverse(back.begin(), back.end());
  std::vector<model::Reconstruction> out;
  std::vector<std::size_t> seen;
  for (std::size_t k : order) {
    if (out.size() == count) break;
    // Resampled families repeat members; trace each distinct proposal once.
    const std::size_t id = e.conditioning ? e.conditioning->selected[k] : k;
    if (std::find(seen.begin(), seen.end(), id) != seen.end()) continue;
    seen.push_back(id);
    const Member& m = e.members[k];
    const model::LatentPath path =
        reconstruct_past(m.latent.states[qi], point.time, back, params, m.noise);
    out.push_back(model::decode(path, params, e.observed_end));
  }
  return out;
}

RiskCurve risk_curve(const IrregularSeries& series, const model::ModelParams& params,
                     std::span<const double> fractions, double threshold,
                     const ode::Tolerances& tol) {
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0.0 && fractions[i] <= 1.0))
      throw ValidationError("fractions", "fractions must lie in (0, 1]");
    if (i > 0 && fractions[i] < fractions[i - 1])
      throw ValidationError("fractions", "fractions must be sorted");
  }
  RiskCurve r;
  r.threshold = threshold;
  for (double f : fractions) r.points.push_back({f, point_probability(series, params, f, tol)});
  set_crossing(r);
  return r;
}

json to_json(const TrajectoryEnsemble& e, const model::ModelParams& params, Units units) {
  const bool raw = units == Units::Raw;
  if (raw && params.norm.empty())
    throw ValidationError("units", "checkpoint carries no normalization statistics");
  const std::size_t F = params.arch.feature_count;
  auto value = [&](std::size_t f, double x) { return raw ? params.norm.to_raw(f, x) : x; };
  auto scale = [&](std::size_t f, double x) { return raw ? x * params.norm.std[f] : x; };

  json members = json::array();
  for (const Member& m : e.members) {
    json rows = json::array();
    for (const auto& row : m.decoded.means) {
      json r = json::array();
      for (std::size_t f = 0; f < F; ++f) r.push_back(value(f, row[f]));
      rows.push_back(std::move(r));
    }
    members.push_back({{"seed", m.seed}, {"values", std::move(rows)}});
  }
  json spread = json::array();
  for (const auto& row : e.spread) {
    json r = json::array();
    for (std::size_t f = 0; f < F; ++f) r.push_back(scale(f, row[f]));
    spread.push_back(std::move(r));
  }
  json risk_points = json::array();
  for (const RiskPoint& p : e.risk.points)
    risk_points.push_back({{"duration", p.duration}, {"probability", p.probability}});

  json doc = {
      {"units", raw ? "raw" : "normalized"},
      {"feature_names", params.feature_names},
      {"window", params.window},
      {"fraction", e.fraction},
      {"observed_end", e.observed_end},
      {"seed", e.seed},
      {"grid", e.grid},
      {"members", std::move(members)},
      {"dropped", e.dropped},
      {"spread", std::move(spread)},
      {"pooled_spread", e.pooled_spread},
      {"hop",
       {{"threshold", e.hop_threshold},
        {"time", e.hop ? json(*e.hop) : json(nullptr)},
        {"beyond_grid", !e.hop.has_value()}}},
      {"risk_curve",
       {{"threshold", e.risk.threshold},
        {"points", std::move(risk_points)},
        {"crossing", e.risk.crossing ? json(*e.risk.crossing) : json(nullptr)}}},
  };
  if (e.conditioning) {
    const Conditioning& c = *e.conditioning;
    doc["conditioning"] = {
        {"time", c.time},
        {"feature", c.feature},
        {"value", value(c.feature, c.value)},
        {"tolerance", scale(c.feature, c.tolerance)},
        {"proposals", c.proposals},
        {"effective_sample_size", c.effective_sample_size},
        {"best_distance", scale(c.feature, c.best_distance)},
        {"proposal_mean_distance", scale(c.feature, c.proposal_mean_distance)},
        {"weighted_mean_distance", scale(c.feature, c.weighted_mean_distance)},
        {"selected", c.selected},
    };
  }
  return doc;
}

}  // namespace lode::engine

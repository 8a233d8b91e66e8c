#pragma once

// Ensembles of decoded trajectories, the horizon of predictability, risk
// curves, backward reconstruction and conditioning on a hypothetical point.

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "lode/latent_ode.hpp"

namespace lode::engine {

inline constexpr std::size_t kKnotsPerWindow = 48;
inline constexpr double kDefaultHopThreshold = 1.0;

struct EnsembleOptions {
  double fraction = 1.0;
  std::size_t members = 30;   // K
  double horizon_mult = 1.5;  // grid runs to horizon_mult × window
  std::uint64_t seed = 0;
  double hop_threshold = kDefaultHopThreshold;
  double risk_threshold = 0.5;
  ode::Tolerances tolerances = ode::kInferenceTolerances;
  std::size_t threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

struct RiskPoint {
  double duration = 0.0;  // normalized time
  double probability = 0.5;
};

struct RiskCurve {
  std::vector<RiskPoint> points;
  double threshold = 0.5;
  /// First duration whose probability is strictly above the threshold.
  std::optional<double> crossing;
};

struct Member {
  std::uint64_t seed = 0;
  std::vector<double> z0;
  std::vector<double> noise;
  model::LatentPath latent;
  model::Reconstruction decoded;
};

/// Present on ensembles produced by condition_on_point.
struct Conditioning {
  double time = 0.0;
  std::size_t feature = 0;
  double value = 0.0;
  double tolerance = 1.0;
  std::size_t proposals = 0;
  double effective_sample_size = 0.0;
  double best_distance = 0.0;
  double proposal_mean_distance = 0.0;  // uniform average over proposals
  double weighted_mean_distance = 0.0;  // kernel-weighted average over proposals
  std::vector<std::size_t> selected;    // proposal index of each member
};

struct TrajectoryEnsemble {
  std::vector<double> grid;
  double fraction = 1.0;
  double observed_end = 1.0;  // grid times above this are extrapolation
  std::uint64_t seed = 0;
  std::vector<Member> members;
  std::size_t dropped = 0;
  std::vector<std::vector<double>> spread;  // [time][feature], normalized units
  std::vector<double> pooled_spread;        // [time], averaged over features
  double hop_threshold = kDefaultHopThreshold;
  std::optional<double> hop;                // empty = beyond grid
  RiskCurve risk;
  std::optional<Conditioning> conditioning;
};

/// Knots at multiples of 1/48 from 0 to horizon_mult, with `extra` times merged in.
std::vector<double> make_grid(double horizon_mult, std::span<const double> extra = {});

/// K posterior draws (z0 and noise channel per member) evolved over the grid and
/// decoded. Members whose solve diverges are dropped and counted; more than K/4
/// drops raise EnsembleDegenerateError.
TrajectoryEnsemble sample_ensemble(const IrregularSeries& series, const model::ModelParams& params,
                                   const EnsembleOptions& options);

/// Earliest grid time after observed_end where the pooled spread exceeds the
/// threshold; empty if it never does. Requires at least two members.
std::optional<double> estimate_hop(const TrajectoryEnsemble& ensemble, double threshold);

/// Per-time, per-feature population std over members; also refreshes pooled
/// spread, hop and the extrapolated part of the risk curve. Invariant under
/// member permutation, bit for bit.
void recompute_statistics(TrajectoryEnsemble& ensemble, const model::ModelParams& params);

struct HypotheticalPoint {
  double time = 1.0;      // normalized; may lie beyond the window
  std::size_t feature = 0;
  double value = 0.0;     // normalized units
  double tolerance = 0.5; // kernel width ε, normalized units

  void validate(std::size_t feature_count) const;
};

inline constexpr double kMinEffectiveSampleSize = 5.0;

/// Draws M proposals, weights them by exp(-d²/2ε²) on the decoded distance to
/// the point at its time, and keeps K by systematic resampling. `options.members`
/// is K; `proposals` = 0 means 50·K. Throws QueryInfeasibleError when the
/// effective sample size falls below 5.
TrajectoryEnsemble condition_on_point(const IrregularSeries& series,
                                      const model::ModelParams& params,
                                      const HypotheticalPoint& point,
                                      const EnsembleOptions& options,
                                      std::size_t proposals = 0);

/// Integrates the dynamics backward from `z_at` at `from_time` to each of
/// `to_times` (all <= from_time, in decreasing order).
model::LatentPath reconstruct_past(std::span<const double> z_at, double from_time,
                                   std::span<const double> to_times,
                                   const model::ModelParams& params,
                                   std::span<const double> noise = {},
                                   const ode::Tolerances& tol = ode::kInferenceTolerances);

/// Backward traces from the latent state at the query time of the members
/// whose decoded value lies nearest the point. Each path runs over the grid
/// times <= point.time, newest first.
std::vector<model::Reconstruction> backward_paths(const TrajectoryEnsemble& ensemble,
                                                  const model::ModelParams& params,
                                                  const HypotheticalPoint& point,
                                                  std::size_t count = 5);

/// Outcome probability for each prefix fraction: encode, evolve the posterior
/// mean with zero noise, classify at the last observed time. Fractions must be
/// sorted in (0, 1]; an empty prefix raises EmptyWindowError.
RiskCurve risk_curve(const IrregularSeries& series, const model::ModelParams& params,
                     std::span<const double> fractions, double threshold = 0.5,
                     const ode::Tolerances& tol = ode::kInferenceTolerances);

enum class Units { Normalized, Raw };

/// Export document: grid, per-member feature matrices, spread, hop, risk curve,
/// seeds and drop count. Raw units denormalize values and scale spreads.
nlohmann::json to_json(const TrajectoryEnsemble& ensemble, const model::ModelParams& params,
                       Units units = Units::Normalized);

}  // namespace lode::engine

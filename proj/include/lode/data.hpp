#pragma once

// Synthetic generators, normalization and series (de)serialization.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lode/series.hpp"

namespace lode::data {

using Collection = std::vector<IrregularSeries>;

struct SpiralConfig {
  std::size_t n_series = 100;
  std::size_t points_per_series = 30;
  /// Dense parametric grid over [0, 1] that observations are thinned from.
  std::size_t grid_points = 100;
  double clockwise_ratio = 0.5;
  double noise_std = 0.03;
  /// Revolutions per unit of normalized time.
  double turns = 1.0;
  std::uint64_t seed = 0;
};

/// Point on the spiral at normalized time t. Counter-clockwise spirals move
/// outward (r = r0 + t); clockwise spirals move inward (r = r0 + 1 - t).
struct SpiralShape {
  bool clockwise = false;
  double r0 = 1.0;
  double phase = 0.0;
  double turns = 1.0;

  double radius(double t) const { return clockwise ? r0 + 1.0 - t : r0 + t; }
  double angle(double t) const;
  std::pair<double, double> point(double t) const;
};

struct SpiralSample {
  IrregularSeries series;  // raw coordinates, label 1 = clockwise
  SpiralShape shape;
};

std::vector<SpiralSample> gen_spiral_samples(const SpiralConfig& config);
Collection gen_spirals(const SpiralConfig& config);

inline const std::vector<std::string> kIcuFeatures = {"FiO2", "GCS", "HR", "PaO2"};

struct IcuGenConfig {
  std::size_t n_patients = 1000;
  double window_hours = 48.0;
  /// Per-feature probability that a given hourly slot carries a measurement,
  /// in kIcuFeatures order.
  std::vector<double> observation_rate = {0.3, 0.28, 0.65, 0.13};
  double death_ratio = 0.25;
  /// Mean decline rate of latent health for the deteriorating class, per window.
  double separation = 2.5;
  std::uint64_t seed = 0;
};

/// Parameters of one synthetic patient's latent health trajectory.
struct PatientProfile {
  bool deteriorating = false;
  double baseline = 0.0;   // h at t = 0
  double onset = 0.5;      // decline starts here (deteriorating only)
  double rate = 0.0;       // decline per unit normalized time
  double drift = 0.0;      // slow linear drift for stable patients
  double hr_phase = 0.0;   // circadian heart-rate phase

  double health(double t) const;
};

/// Raw-unit series for one patient; label 1 = in-hospital death.
IrregularSeries simulate_patient(const PatientProfile& profile, const IcuGenConfig& config,
                                 std::uint64_t seed, const std::string& id);
Collection gen_icu(const IcuGenConfig& config);

/// The two hand-picked exemplars: A deteriorates after ~45% of the window and
/// dies; B stays stable and survives. Raw units.
IrregularSeries demo_patient_a(const IcuGenConfig& config);
IrregularSeries demo_patient_b(const IcuGenConfig& config);

// ---------------------------------------------------------------------------
// Normalization. Statistics use observed entries only (population std).

NormStats fit_norm(const Collection& raw);
/// Z-scores raw values and records the statistics in the series.
IrregularSeries normalize(IrregularSeries raw, const NormStats& stats);
Collection normalize(Collection raw, const NormStats& stats);
/// Returns the series with values in raw units and norm cleared.
IrregularSeries denormalize(IrregularSeries s);
/// Re-expresses a normalized series under different statistics.
IrregularSeries renormalize(IrregularSeries s, const NormStats& target);

struct Split {
  Collection train;
  Collection test;
};
/// Seeded shuffle, then the first round(train_fraction * n) go to train.
Split split(const Collection& all, double train_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tabular format: UTF-8 CSV with header series_id,time,feature,value[,label];
// time in raw window units, RFC 4180 quoting.

struct IngestWarning {
  std::size_t line = 0;
  std::string message;
};

struct IngestResult {
  Collection series;
  std::vector<IngestWarning> warnings;
};

struct IngestOptions {
  double window = 1.0;
  /// Fixed feature order; derived (sorted) from the file when empty.
  std::vector<std::string> feature_names;
  /// Normalize with these statistics instead of fitting them to the file.
  NormStats norm;
};

IngestResult ingest_csv(const std::string& text, const IngestOptions& options);
/// Writes raw values; series must carry norm statistics.
std::string export_csv(const Collection& series);

// ---------------------------------------------------------------------------
// Structured documents. A series document holds normalized values (null where
// unobserved), normalized times, mask, feature_names, label, norm_stats and window
// when "units" is "normalized"; raw values and raw times when "units" is "raw".

nlohmann::json to_json(const IrregularSeries& s);
nlohmann::json to_json(const Collection& c);
/// Parses and validates a series document. Raw documents are normalized with
/// `target`; normalized documents are re-expressed under `target` when it is
/// non-empty and differs. Throws ValidationError naming the field.
IrregularSeries series_from_json(const nlohmann::json& doc, const NormStats& target = {});
Collection collection_from_json(const nlohmann::json& doc, const NormStats& target = {});

IngestResult ingest_file(const std::filesystem::path& path, const IngestOptions& options);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace lode::data

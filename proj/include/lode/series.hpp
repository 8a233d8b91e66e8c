#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lode {

/// Per-feature mean and standard deviation in raw units.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  double to_raw(std::size_t feature, double normalized) const {
    return normalized * std[feature] + mean[feature];
  }
  double to_normalized(std::size_t feature, double raw) const {
    return (raw - mean[feature]) / std[feature];
  }
  bool empty() const { return mean.empty(); }
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Timestamped, masked multivariate observations. Times are normalized so the
/// observation window is [0, 1]; values are z-scored. Entries whose mask is 0
/// carry no information and are never read.
struct IrregularSeries {
  std::string id;
  std::vector<double> times;
  std::vector<std::vector<double>> values;
  std::vector<std::vector<std::uint8_t>> mask;
  std::vector<std::string> feature_names;
  std::optional<int> label;
  NormStats norm;
  /// Raw length of the normalized window (hours for clinical data).
  double window = 1.0;

  std::size_t feature_count() const { return feature_names.size(); }
  std::size_t size() const { return times.size(); }
  std::size_t observed_entries() const;
  /// Index one past the last row with time <= `end`.
  std::size_t rows_until(double end) const;

  friend bool operator==(const IrregularSeries&, const IrregularSeries&) = default;
};

/// Throws ValidationError naming the first offending field.
void validate(const IrregularSeries& s);

}  // namespace lode

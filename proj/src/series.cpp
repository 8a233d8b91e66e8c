#include "lode/series.hpp"

#include <algorithm>
#include <cmath>

#include "lode/error.hpp"

namespace lode {

std::size_t IrregularSeries::observed_entries() const {
  std::size_t n = 0;
  for (const auto& row : mask) n += static_cast<std::size_t>(std::count(row.begin(), row.end(), 1));
  return n;
}

std::size_t IrregularSeries::rows_until(double end) const {
  return static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), end) - times.begin());
}

void validate(const IrregularSeries& s) {
  const std::size_t f = s.feature_names.size();
  if (f == 0) throw ValidationError("feature_names", "at least one feature is required");
  if (s.values.size() != s.times.size())
    throw ValidationError("values", "values must have one row per timestamp");
  if (s.mask.size() != s.times.size())
    throw ValidationError("mask", "mask must have one row per timestamp");
  for (std::size_t i = 0; i < s.times.size(); ++i) {
    if (!std::isfinite(s.times[i]) || s.times[i] < 0.0)
      throw ValidationError("times", "times must be finite and non-negative");
    if (i > 0 && !(s.times[i] > s.times[i - 1]))
      throw ValidationError("times", "times not increasing");
    if (s.values[i].size() != f)
      throw ValidationError("values", "row " + std::to_string(i) + " has the wrong width");
    if (s.mask[i].size() != f)
      throw ValidationError("mask", "row " + std::to_string(i) + " has the wrong width");
    for (std::size_t k = 0; k < f; ++k) {
      if (s.mask[i][k] > 1) throw ValidationError("mask", "mask entries must be 0 or 1");
      if (s.mask[i][k] == 1 && !std::isfinite(s.values[i][k]))
        throw ValidationError("values", "observed value at row " + std::to_string(i) +
                                            " is not finite");
    }
  }
  if (s.observed_entries() == 0)
    throw ValidationError("mask", "series has no observed entries");
  if (s.label && *s.label != 0 && *s.label != 1)
    throw ValidationError("label", "label must be 0 or 1");
  if (!s.norm.empty()) {
    if (s.norm.mean.size() != f || s.norm.std.size() != f)
      throw ValidationError("norm_stats", "norm_stats must have one entry per feature");
    for (std::size_t k = 0; k < f; ++k)
      if (!std::isfinite(s.norm.mean[k]) || !(s.norm.std[k] > 0.0) || !std::isfinite(s.norm.std[k]))
        throw ValidationError("norm_stats", "norm_stats std must be positive and finite");
  }
  if (!(s.window > 0.0) || !std::isfinite(s.window))
    throw ValidationError("window", "window must be positive");
}

}  // namespace lode

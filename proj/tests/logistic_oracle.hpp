#pragma once

// Logistic regression on per-feature summary statistics. Independent of the
// latent model; used to certify that the synthetic cohort is separable.

#include <cmath>
#include <vector>

#include "lode/series.hpp"

namespace lode::testing {

inline std::vector<double> summary_features(const IrregularSeries& s) {
  std::vector<double> out;
  for (std::size_t k = 0; k < s.feature_count(); ++k) {
    std::vector<double> t, v;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s.mask[i][k]) {
        t.push_back(s.times[i]);
        v.push_back(s.values[i][k]);
      }
    double mean = 0, lo = 0, hi = 0, last = 0, slope = 0;
    if (!v.empty()) {
      lo = hi = v[0];
      for (double x : v) {
        mean += x;
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
      mean /= static_cast<double>(v.size());
      last = v.back();
      if (v.size() > 1) {
        double tm = 0;
        for (double x : t) tm += x;
        tm /= static_cast<double>(t.size());
        double num = 0, den = 0;
        for (std::size_t i = 0; i < v.size(); ++i) {
          num += (t[i] - tm) * (v[i] - mean);
          den += (t[i] - tm) * (t[i] - tm);
        }
        slope = den > 0 ? num / den : 0;
      }
    }
    out.insert(out.end(), {mean, lo, hi, last, slope, v.empty() ? 1.0 : 0.0});
  }
  return out;
}

class LogisticRegression {
 public:
  void fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
           double l2 = 1e-3, int iterations = 3000, double lr = 0.5) {
    const std::size_t n = x.size(), d = x.front().size();
    mu_.assign(d, 0.0);
    sd_.assign(d, 0.0);
    for (const auto& r : x)
      for (std::size_t j = 0; j < d; ++j) mu_[j] += r[j] / static_cast<double>(n);
    for (const auto& r : x)
      for (std::size_t j = 0; j < d; ++j) sd_[j] += (r[j] - mu_[j]) * (r[j] - mu_[j]) / static_cast<double>(n);
    for (double& s : sd_) s = s > 0 ? std::sqrt(s) : 1.0;
    w_.assign(d, 0.0);
    b_ = 0.0;
    for (int it = 0; it < iterations; ++it) {
      std::vector<double> gw(d, 0.0);
      double gb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double err = predict(x[i]) - y[i];
        const auto z = standardize(x[i]);
        for (std::size_t j = 0; j < d; ++j) gw[j] += err * z[j] / static_cast<double>(n);
        gb += err / static_cast<double>(n);
      }
      for (std::size_t j = 0; j < d; ++j) w_[j] -= lr * (gw[j] + l2 * w_[j]);
      b_ -= lr * gb;
    }
  }

  double predict(const std::vector<double>& row) const {
    const auto z = standardize(row);
    double s = b_;
    for (std::size_t j = 0; j < z.size(); ++j) s += w_[j] * z[j];
    return 1.0 / (1.0 + std::exp(-s));
  }

 private:
  std::vector<double> standardize(const std::vector<double>& row) const {
    std::vector<double> z(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) z[j] = (row[j] - mu_[j]) / sd_[j];
    return z;
  }
  std::vector<double> mu_, sd_, w_;
  double b_ = 0.0;
};

}  // namespace lode::testing

#pragma once

#include <span>
#include <vector>

namespace lode::metrics {

/// Area under the ROC curve via the rank statistic; ties count one half.
/// Returns 0.5 when either class is empty.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of (score >= threshold) == label.
double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

/// Running mean of squared errors.
class MeanSquaredError {
 public:
  void add(double predicted, double observed) {
    const double d = predicted - observed;
    sum_ += d * d;
    ++count_;
  }
  void merge(const MeanSquaredError& other) {
    sum_ += other.sum_;
    count_ += other.count_;
  }
  double value() const { return count_ == 0 ? 0.0 : sum_ / static_cast<double>(count_); }
  std::size_t count() const { return count_; }

 private:
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

}  // namespace lode::metrics

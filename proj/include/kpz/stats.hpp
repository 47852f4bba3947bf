#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace kpz::stats {

/// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::fabs(sum_) >= std::fabs(x)) comp_ += (sum_ - t) + x;
    else comp_ += (x - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(double x) {
    add(x);
    return *this;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double mean(std::span<const double> x);
/// Unbiased sample variance.
double variance(std::span<const double> x);
double standard_error(std::span<const double> x);

/// Jackknife standard error from leave-one-out estimates.
double jackknife_se(std::span<const double> leave_one_out);

/// Standard error of the mean from contiguous batch means.
double batch_means_se(std::span<const double> batch_values);

struct LinearModelFit {
  std::vector<double> coef;
  std::vector<double> se;  // from residual variance, used when no replicates exist
  double residual_norm = 0.0;
  double condition = 0.0;
  bool ill_conditioned = false;
};

/// Ordinary least squares y ~ X (columns are regressors).
LinearModelFit least_squares(const std::vector<std::vector<double>>& columns, std::span<const double> y);

/// y ~ a + b x.
LinearModelFit fit_line(std::span<const double> x, std::span<const double> y);

}  // namespace kpz::stats

#include "kpz/stats.hpp"

#include <Eigen/Dense>

#include <stdexcept>

namespace kpz::stats {

double mean(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("mean of empty sample");
  CompensatedSum s;
  for (double v : x) s += v;
  return s.value() / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("variance needs at least two values");
  const double m = mean(x);
  CompensatedSum s;
  for (double v : x) s += (v - m) * (v - m);
  return s.value() / static_cast<double>(x.size() - 1);
}

double standard_error(std::span<const double> x) { return std::sqrt(variance(x) / static_cast<double>(x.size())); }

double jackknife_se(std::span<const double> loo) {
  const auto n = static_cast<double>(loo.size());
  if (loo.size() < 2) throw std::invalid_argument("jackknife needs at least two replicates");
  const double m = mean(loo);
  CompensatedSum s;
  for (double v : loo) s += (v - m) * (v - m);
  return std::sqrt((n - 1.0) / n * s.value());
}

double batch_means_se(std::span<const double> batches) { return standard_error(batches); }

LinearModelFit least_squares(const std::vector<std::vector<double>>& columns, std::span<const double> y) {
  const auto n = static_cast<Eigen::Index>(y.size());
  const auto p = static_cast<Eigen::Index>(columns.size());
  if (p == 0 || n < p) throw std::invalid_argument("least_squares: need at least as many points as parameters");
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index c = 0; c < p; ++c) {
    if (static_cast<Eigen::Index>(columns[c].size()) != n) throw std::invalid_argument("least_squares: size mismatch");
    for (Eigen::Index r = 0; r < n; ++r) X(r, c) = columns[c][r];
  }
  const Eigen::VectorXd Y = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  LinearModelFit f;
  f.condition = sv(p - 1) > 0.0 ? sv(0) / sv(p - 1) : INFINITY;
  f.ill_conditioned = !(f.condition < 1e10);
  const Eigen::VectorXd beta = svd.solve(Y);
  const Eigen::VectorXd r = Y - X * beta;
  f.residual_norm = r.norm();
  f.coef.assign(beta.data(), beta.data() + p);
  f.se.assign(static_cast<std::size_t>(p), 0.0);
  if (n > p && !f.ill_conditioned) {
    const double s2 = r.squaredNorm() / static_cast<double>(n - p);
    const Eigen::MatrixXd cov = s2 * (X.transpose() * X).inverse();
    for (Eigen::Index c = 0; c < p; ++c) f.se[c] = std::sqrt(std::max(0.0, cov(c, c)));
  }
  return f;
}

LinearModelFit fit_line(std::span<const double> x, std::span<const double> y) {
  std::vector<double> ones(x.size(), 1.0);
  return least_squares({ones, std::vector<double>(x.begin(), x.end())}, y);
}

}  // namespace kpz::stats

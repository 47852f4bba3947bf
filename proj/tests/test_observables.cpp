#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Cholesky>
#include <cmath>

#include "kpz/observables.hpp"
#include "kpz/stats.hpp"

using namespace kpz;
using namespace kpz::obs;

namespace {
constexpr double kSigmas = 3.0;
constexpr double kNoiselessTol = 1e-10;

double fbm13(double s, double t) {
  return 0.5 * (std::pow(s, 2.0 / 3.0) + std::pow(t, 2.0 / 3.0) - std::pow(std::fabs(t - s), 2.0 / 3.0));
}

// Heights whose rescaled values are Gaussian with the fBM(H=1/3) covariance.
EnsembleTable synthetic_ensemble(std::size_t n, std::uint64_t seed, int points = 20) {
  EnsembleTable e;
  e.tau = default_tau_grid(points);
  e.t_max = 8.0;
  const std::size_t K = e.tau.size();
  Eigen::MatrixXd C(K, K);
  for (std::size_t a = 0; a < K; ++a)
    for (std::size_t b = 0; b < K; ++b) C(a, b) = fbm13(e.tau[a], e.tau[b]);
  Eigen::MatrixXd Lc = C.llt().matrixL();
  RandomStream r({seed, 0}, StreamPurpose::Synthetic);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd z(K);
    for (std::size_t k = 0; k < K; ++k) z[k] = r.normal();
    Eigen::VectorXd x = Lc * z;
    std::vector<double> h(K);
    for (std::size_t k = 0; k < K; ++k) h[k] = e.tau[k] * e.t_max / 4.0 - x[k] * std::cbrt(e.t_max) / std::pow(2.0, 4.0 / 3.0);
    e.h.push_back(h);
    e.trial_index.push_back(i);
  }
  return e;
}
}  // namespace

TEST_CASE("rescaling") {
  CHECK(rescale_height(2.0, 1.0, 8.0) == 0.0);
  CHECK(rescale_height(3.0, 1.0, 8.0) == doctest::Approx(-std::cbrt(2.0)).epsilon(1e-14));
  CHECK_THROWS(rescale_height(1.0, 1.0, 0.0));
}

TEST_CASE("stationary curve") {
  CHECK(stationary_theory_curve(1.0) == 1.0);
  CHECK(stationary_theory_curve(0.5) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(stationary_theory_curve(0.0) == 0.0);
  for (double t = 0.05; t < 1.0; t += 0.05) CHECK(stationary_theory_curve(t) == doctest::Approx(fbm13(t, 1.0)));
  auto g = default_tau_grid();
  CHECK(g.size() == 100);
  CHECK(g.front() == 0.01);
  CHECK(g.back() == 1.0);
}

TEST_CASE("degenerate ensemble") {
  EnsembleTable e;
  e.tau = {0.5, 1.0};
  e.t_max = 10.0;
  for (int i = 0; i < 5; ++i) e.h.push_back({1.0, 3.0});
  auto raw = raw_covariance(e);
  CHECK(raw[0] == 0.0);
  CHECK(raw[1] == 0.0);
  CHECK_THROWS_AS(ensemble_covariance(e), EstimationError);
  e.h.resize(1);
  CHECK_THROWS_AS(raw_covariance(e), EstimationError);
  e.h = {{1.0}, {2.0}};
  CHECK_THROWS_AS(ensemble_covariance(e), EstimationError);
}

TEST_CASE("synthetic covariance recovery") {
  auto e = synthetic_ensemble(20000, 3);
  auto c = ensemble_covariance(e);
  CHECK(c.normalized.back() == 1.0);
  int outside = 0;
  for (std::size_t k = 0; k < c.tau.size(); ++k) {
    CHECK(c.cov_se[k] > 0.0);
    if (std::fabs(c.cov[k] - fbm13(c.tau[k], 1.0)) > kSigmas * c.cov_se[k]) ++outside;
  }
  // 20 correlated points at 3 SE: allow one excursion
  CHECK(outside <= 1);
}

TEST_CASE("leave-one-out matches direct recomputation") {
  auto e = synthetic_ensemble(9, 4, 5);
  auto c = ensemble_covariance(e);
  std::vector<std::vector<double>> loo(e.tau.size());
  for (std::size_t drop = 0; drop < e.trials(); ++drop) {
    EnsembleTable sub = e;
    sub.h.erase(sub.h.begin() + static_cast<long>(drop));
    sub.trial_index.erase(sub.trial_index.begin() + static_cast<long>(drop));
    auto raw = raw_covariance(sub);
    for (std::size_t k = 0; k < raw.size(); ++k) loo[k].push_back(raw[k] / raw.back());
  }
  for (std::size_t k = 0; k + 1 < e.tau.size(); ++k) {
    CHECK(c.normalized_se[k] == doctest::Approx(stats::jackknife_se(loo[k])).epsilon(1e-9));
    for (std::size_t i = 0; i < e.trials(); ++i) CHECK(c.normalized_loo[i][k] == doctest::Approx(loo[k][i]).epsilon(1e-9));
  }
}

TEST_CASE("jackknife error shrinks like the square root of trials") {
  auto a = ensemble_covariance(synthetic_ensemble(4000, 5));
  auto b = ensemble_covariance(synthetic_ensemble(8000, 6));
  const std::size_t k = a.tau.size() / 2;
  CHECK(a.normalized_se[k] / b.normalized_se[k] == doctest::Approx(std::sqrt(2.0)).epsilon(0.2));
  CHECK(a.cov_se[k] / b.cov_se[k] == doctest::Approx(std::sqrt(2.0)).epsilon(0.2));
}

TEST_CASE("noiseless power law fits") {
  CovTable t;
  t.tau = default_tau_grid();
  for (double x : t.tau) t.normalized.push_back(0.65 * std::pow(x, 2.0 / 3.0));
  auto z = fit_power_law(t, FitEnd::Zero);
  CHECK(std::fabs(z.exponent - 2.0 / 3.0) < kNoiselessTol);
  CHECK(std::fabs(z.prefactor - 0.65) < kNoiselessTol);
  CHECK(z.points == 10);
  CHECK_FALSE(z.flagged);

  t.normalized.clear();
  for (double x : t.tau) t.normalized.push_back(1.0 - 0.7 * std::pow(1.0 - x, 2.0 / 3.0) - 0.1 * (1.0 - x));
  auto o = fit_power_law(t, FitEnd::One);
  CHECK(std::fabs(o.prefactor - 0.7) < kNoiselessTol);
  CHECK(std::fabs(o.linear - 0.1) < kNoiselessTol);

  PowerLawForm tiny;
  tiny.window = 3;
  CHECK_THROWS_AS(fit_power_law(t, FitEnd::Zero, tiny), EstimationError);
}

TEST_CASE("decay fits") {
  std::vector<double> x, y;
  for (double u = 1.0; u <= 40.0; u += 0.5) {
    x.push_back(u);
    y.push_back(-0.02013 * std::pow(u, -4.0 / 3.0));
  }
  auto f = fit_decay(x, y, 10.0, 40.0);
  CHECK(std::fabs(f.exponent + 4.0 / 3.0) < kNoiselessTol);
  CHECK(std::fabs(f.prefactor + 0.02013) < kNoiselessTol);
  auto g = fit_decay(x, y, 10.0, 40.0, -4.0 / 3.0);
  CHECK(std::fabs(g.prefactor + 0.02013) < kNoiselessTol);
  y[30] = -y[30];
  CHECK(fit_decay(x, y, 10.0, 40.0).flagged);
}

TEST_CASE("current correlator") {
  CHECK_THROWS_AS(CurrentCorrelator(10, 60.0, 50.0), sim::RangeError);
  auto c = current_autocorrelation(sim::ModelSpec::tasep(), 0.5, 400, 2000.0, {2, 0}, 10.0, 0.5);
  CHECK(c.h.size() == 20);
  CHECK(c.lag_lo.front() == 0.0);
  for (std::size_t i = 1; i < c.h.size(); ++i) CHECK(c.lag_lo[i] == c.lag_hi[i - 1]);
  CHECK(std::fabs(c.rate - 0.25) < kSigmas * c.rate_se);
  CHECK(c.rate_ensemble_sd == doctest::Approx(ring_rate_spread(1.0, 0.5, 400)));
  CHECK(c.h[4] < 0.0);
}

TEST_CASE("ring rate spread against a direct binomial sum") {
  const std::int64_t L = 30;
  const double rho = 0.3;
  double m1 = 0.0, m2 = 0.0;
  for (std::int64_t N = 0; N <= L; ++N) {
    const double pmf = std::exp(std::lgamma(L + 1.0) - std::lgamma(N + 1.0) - std::lgamma(L - N + 1.0)) *
                       std::pow(rho, N) * std::pow(1.0 - rho, L - N);
    const double r = N * (L - N) / (L * (L - 1.0));
    m1 += pmf * r;
    m2 += pmf * r * r;
  }
  CHECK(ring_rate_spread(1.0, rho, L) == doctest::Approx(std::sqrt(m2 - m1 * m1)).epsilon(1e-10));
  CHECK(m1 == doctest::Approx(rho * (1.0 - rho)).epsilon(1e-12));
}

TEST_CASE("ring correlation formula") {
  RandomStream r({8, 8}, StreamPurpose::Synthetic);
  const std::int64_t L = 41;
  std::vector<std::uint8_t> a(L), b(L);
  for (auto& v : a) v = r.bernoulli(0.4);
  for (auto& v : b) v = r.bernoulli(0.4);
  double N = 0;
  for (auto v : b) N += v;
  const double rr = N / L;
  auto s = ring_correlation(a, b, 20);
  for (std::int64_t j = -20; j <= 20; ++j) {
    double acc = 0.0;
    for (std::int64_t x = 0; x < L; ++x) acc += a[((x + j) % L + L) % L] * b[x];
    CHECK(s[j + 20] == doctest::Approx(acc / L - rr * rr + rr * (1.0 - rr) / (L - 1.0)).epsilon(1e-12));
  }
  // equal snapshots: sum over the full ring is L rho(1-rho)/(L-1)
  auto same = ring_correlation(b, b, 20);
  double total = 0.0;
  for (double v : same) total += v;
  CHECK(total == doctest::Approx(L * rr * (1.0 - rr) / (L - 1.0)).epsilon(1e-12));
}

TEST_CASE("two point function at time zero") {
  TwoPointOptions opt;
  opt.times = {0.0};
  opt.j_max = 10;
  auto t = two_point_function(sim::ModelSpec::tasep(), 0.5, 100, 400, 0, 5, opt);
  CHECK(std::fabs(t.value(0, 0) - 0.25) < kSigmas * t.s_se[0][10] + 0.25 / 99.0);
  for (std::int64_t j = 1; j <= 10; ++j) CHECK(std::fabs(t.value(0, j)) < kSigmas * t.s_se[0][j + 10] + 1e-12);
  CHECK(std::fabs(t.chi[0] - 0.25) < 0.02);

  auto sr = sum_rule_residual(0.0, 0.0, t, 0, 0);
  CHECK(sr.residual == 0.0);
  CHECK(sr.rhs == 0.0);
  double moment = 0.0, moment_se = 0.0;
  for (std::int64_t j = -10; j <= 10; ++j) {
    moment += std::abs(j) * t.value(0, j);
    moment_se += j * j * t.s_se[0][j + 10] * t.s_se[0][j + 10];
  }
  CHECK(std::fabs(moment) < kSigmas * std::sqrt(moment_se) * 3.0);
}

TEST_CASE("width of a gaussian profile") {
  TwoPointTable t;
  t.times = {100.0};
  t.j_max = 200;
  const double sigma = 12.0;
  t.s.assign(1, std::vector<double>(401));
  t.s_se.assign(1, std::vector<double>(401, 0.0));
  for (int j = -200; j <= 200; ++j) t.s[0][j + 200] = 0.25 * std::exp(-0.5 * j * j / (sigma * sigma)) / (sigma * std::sqrt(2 * M_PI));
  auto w = two_point_width(t, 0);
  CHECK(w.width == doctest::Approx(sigma * std::sqrt(2.0 / M_PI)).epsilon(0.01));
  auto shifted = two_point_width(t, 0, 3.0);
  CHECK(shifted.width > w.width);
}

TEST_CASE("ray heights and staircase") {
  std::vector<std::uint8_t> occ{0, 1, 1, 0, 1, 0};
  auto f = sim::init_configuration(sim::InitialCondition::explicit_sites(occ), sim::Domain::ring(6), {1, 0});
  CHECK(ray_height(f, 0) == 0);
  CHECK(ray_height(f, 3) == -2);
  auto res = ray_current_series(sim::ModelSpec::tasep(), 0.25, 0.5, 120, 40, 10, 20, 0, 3);
  CHECK(res.staircase_checks > 0);
  CHECK(res.staircase_failures == 0);
  CHECK(res.cov.size() == res.lag.size());
}

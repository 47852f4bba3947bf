#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kpz/exclusion.hpp"

namespace kpz::obs {

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// -2^{4/3} t^{-1/3} (h - tau t / 4).
double rescale_height(double h, double tau, double t);

/// 1/2 (1 + tau^{2/3} - (1 - tau)^{2/3}).
double stationary_theory_curve(double tau);

/// Default tau grid {1/100, ..., 99/100, 1}.
std::vector<double> default_tau_grid(int points = 100);

struct EnsembleTable {
  std::vector<double> tau;
  double t_max = 0.0;
  std::vector<std::uint64_t> trial_index;
  std::vector<std::vector<double>> h;  // h[trial][k] = h(0, tau_k t_max)
  std::map<std::string, std::string> metadata;

  std::size_t trials() const { return h.size(); }
  void validate() const;
};

struct CovTable {
  std::vector<double> tau;
  std::vector<double> cov;
  std::vector<double> cov_se;
  std::vector<double> normalized;
  std::vector<double> normalized_se;
  double var1 = 0.0;
  double var1_se = 0.0;
  // Leave-one-out normalized curves, [trial][k]; empty when not kept.
  std::vector<std::vector<double>> normalized_loo;
};

/// Unbiased Cov(X(tau_k), X(1)) of the rescaled heights, no normalization.
std::vector<double> raw_covariance(const EnsembleTable& ens);

/// Covariances, A(tau) = C(tau)/C(1) and jackknife errors.
CovTable ensemble_covariance(const EnsembleTable& ens, bool keep_replicates = true);

enum class FitEnd { Zero, One };

struct PowerLawForm {
  bool free_exponent = true;
  double exponent = 2.0 / 3.0;  // used when the exponent is fixed
  int window = 10;
};

struct ScalingReport {
  double exponent = 0.0;
  double exponent_se = 0.0;
  double prefactor = 0.0;
  double prefactor_se = 0.0;
  double linear = 0.0;  // b in 1 - c(1-tau)^{2/3} - b(1-tau)
  double linear_se = 0.0;
  double window_lo = 0.0;
  double window_hi = 0.0;
  double residual_norm = 0.0;
  int points = 0;
  bool flagged = false;
  std::string note;
};

/// Near 0: log-log fit of a tau^alpha over the first `window` points.
/// Near 1: 1 - A = c (1-tau)^{2/3} + b (1-tau) over the last `window` points.
/// Errors by jackknife when the table carries replicates.
ScalingReport fit_power_law(const CovTable& cov, FitEnd end, const PowerLawForm& form = {});

/// Log-log fit of |y| = c x^alpha over points with x in [lo, hi]; with
/// `fixed_exponent` only c is fitted. y must have a fixed sign in the window;
/// the returned prefactor carries that sign.
ScalingReport fit_decay(const std::vector<double>& x, const std::vector<double>& y, double lo, double hi,
                        std::optional<double> fixed_exponent = std::nullopt);

struct CurrentCorr {
  std::vector<double> lag_lo;
  std::vector<double> lag_hi;
  std::vector<double> h;
  std::vector<double> h_se;
  double rate = 0.0;  // delta part, jumps per bond per unit time
  double rate_se = 0.0;
  // Spread of the ring's conditional rate over the Bernoulli particle number;
  // included in rate_se by current_autocorrelation.
  double rate_ensemble_sd = 0.0;
  double mean_current = 0.0;
  double observed_time = 0.0;
  std::uint64_t events = 0;
};

/// Streaming estimator of the bond current autocorrelation on a ring. Feed
/// every jump in time order; pairs are attributed to the earlier event, which
/// must lie in [0, T - max_lag].
class CurrentCorrelator {
 public:
  CurrentCorrelator(std::int64_t bonds, double total_time, double max_lag = 50.0, double bin_width = 0.25,
                    int batches = 40);
  void on_jump(const sim::JumpEvent& e);
  CurrentCorr finish() const;
  sim::ExclusionProcess::Observer observer();

 private:
  struct Recent {
    double time;
    int dir;
  };
  std::int64_t bonds_;
  double total_;
  double max_lag_;
  double width_;
  int nbins_;
  int batches_;
  double origin_end_;
  std::vector<std::deque<Recent>> recent_;
  std::vector<std::vector<double>> pair_sum_;  // [batch][bin]
  std::vector<double> self_count_;              // [batch]
  std::int64_t signed_total_ = 0;
  std::uint64_t events_ = 0;
};

/// Standard deviation of (p+q) N(L-N)/(L(L-1)) for N ~ Binomial(L, rho):
/// the stationary jump rate per bond of a ring with N particles.
double ring_rate_spread(double rate_scale, double rho, std::int64_t L);

/// Runs TASEP/ASEP from Bernoulli(rho) on Ring(L) to time T and returns the estimator.
CurrentCorr current_autocorrelation(const sim::ModelSpec& model, double rho, std::int64_t L, double T,
                                    const RngSeed& seed, double max_lag = 50.0, double bin_width = 0.25);

/// Integral check: rate + 2 sum_bins h * width, i.e. over |t| <= max lag.
double integral_cancellation(const CurrentCorr& c);

struct TwoPointTable {
  std::vector<double> times;
  std::int64_t j_max = 0;
  std::vector<std::vector<double>> s;     // [time][j + j_max]
  std::vector<std::vector<double>> s_se;
  std::vector<double> chi;                // sum_j S(j,t) over the table
  std::size_t samples = 0;                // independent rings
  std::vector<std::vector<std::vector<double>>> per_ring;  // [ring][time][j + j_max]
  double value(std::size_t ti, std::int64_t j) const { return s[ti][static_cast<std::size_t>(j + j_max)]; }
};

/// Canonical ring estimate of S(j,t) for one pair of snapshots:
/// (1/L) sum_x eta_{x+j}(t) eta_x(0) - rho_r^2 + rho_r (1 - rho_r)/(L - 1), rho_r = N/L.
std::vector<double> ring_correlation(const std::vector<std::uint8_t>& later, const std::vector<std::uint8_t>& earlier,
                                     std::int64_t j_max);

struct TwoPointOptions {
  std::vector<double> times{0.0};
  std::int64_t j_max = 50;
  int origins = 1;              // time origins per ring
  double origin_spacing = 0.0;  // defaults to the largest time
  bool keep_per_ring = true;
};

/// Space-time averaged S(j,t) from `rings` independent stationary rings.
TwoPointTable two_point_function(const sim::ModelSpec& model, double rho, std::int64_t L, std::uint64_t rings,
                                 std::uint64_t first_trial, std::uint64_t master_seed, const TwoPointOptions& opt);

struct WidthEstimate {
  double width = 0.0;  // sum |j - center| S / sum S within the window
  double se = 0.0;
  std::int64_t window = 0;
};

/// Width of S(., t) from the first absolute moment about the center
/// (v t with v the ASEP characteristic speed), inside a window set to
/// `window_factor` times the width itself (iterated from the full table).
WidthEstimate two_point_width(const TwoPointTable& t, std::size_t time_index, double center = 0.0,
                              double window_factor = 6.0);

/// Ratio width(t_b)/width(t_a) with a jackknife error over rings. Centers
/// are velocity * t.
WidthEstimate width_ratio(const TwoPointTable& t, std::size_t ia, std::size_t ib, double window_factor = 6.0,
                          double velocity = 0.0);

struct SumRuleResult {
  double residual = 0.0;
  double se = 0.0;
  double lhs = 0.0;  // Var(h(y,t))
  double rhs = 0.0;  // sum |j-y| S(j,t) - sum |j| S(j,0)
  bool truncation_warning = false;
  double edge_mass = 0.0;
};

/// Var(h(y,t)) - [sum_j |j-y| S(j,t) - sum_j |j| S(j,0)] from independent estimates.
SumRuleResult sum_rule_residual(double var_h, double var_h_se, const TwoPointTable& table, std::size_t time_index,
                                std::size_t zero_index, std::int64_t y = 0, double edge_tolerance = 1e-3);

/// Height along the ray convention: J_{0,1}(t) - sum_{j=1..y} eta_j(t).
std::int64_t ray_height(const sim::OccupancyField& state, std::int64_t y);

struct RayCurrentResult {
  std::vector<double> lag;
  std::vector<double> cov;  // Cov(X_0, X_j)
  std::vector<double> cov_se;
  std::vector<double> partial_sum;     // sum_{|j|<=J} Cov(X_0,X_j)
  std::vector<double> partial_sum_se;
  double mean_x = 0.0;
  std::uint64_t staircase_checks = 0;
  std::uint64_t staircase_failures = 0;
  std::size_t rings = 0;
};

/// X_j = J_{j-1,j}([(j-1)/v, j/v]) - eta_j(j/v) along rays started at every
/// ring site, with the staircase identity checked exactly on each ray.
RayCurrentResult ray_current_series(const sim::ModelSpec& model, double rho, double v, std::int64_t L,
                                    std::int64_t y_max, std::int64_t lag_max, std::uint64_t rings,
                                    std::uint64_t first_trial, std::uint64_t master_seed);

}  // namespace kpz::obs

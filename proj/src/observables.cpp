#include "kpz/observables.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kpz/stats.hpp"

namespace kpz::obs {

double rescale_height(double h, double tau, double t) {
  if (!(t > 0.0)) throw std::invalid_argument("rescale_height: t must be positive");
  return -std::pow(2.0, 4.0 / 3.0) * std::pow(t, -1.0 / 3.0) * (h - tau * t / 4.0);
}

double stationary_theory_curve(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("stationary_theory_curve: tau outside [0,1]");
  return 0.5 * (1.0 + std::pow(tau, 2.0 / 3.0) - std::pow(1.0 - tau, 2.0 / 3.0));
}

std::vector<double> default_tau_grid(int points) {
  std::vector<double> t(static_cast<std::size_t>(points));
  for (int k = 1; k <= points; ++k) t[k - 1] = static_cast<double>(k) / points;
  return t;
}

void EnsembleTable::validate() const {
  if (tau.empty()) throw EstimationError("empty tau grid");
  for (std::size_t k = 0; k < tau.size(); ++k) {
    if (!(tau[k] > 0.0 && tau[k] <= 1.0)) throw EstimationError("tau grid must lie in (0,1]");
    if (k && !(tau[k] > tau[k - 1])) throw EstimationError("tau grid must be strictly increasing");
  }
  if (tau.back() != 1.0) throw EstimationError("tau grid must contain 1");
  if (!(t_max > 0.0)) throw EstimationError("t_max must be positive");
  for (const auto& row : h)
    if (row.size() != tau.size()) throw EstimationError("trial row length differs from tau grid");
}

namespace {

std::vector<std::vector<double>> centered_scaled(const EnsembleTable& ens, std::vector<double>& means) {
  const std::size_t n = ens.trials(), K = ens.tau.size();
  std::vector<std::vector<double>> a(n, std::vector<double>(K));
  means.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    stats::CompensatedSum s;
    for (std::size_t i = 0; i < n; ++i) {
      a[i][k] = rescale_height(ens.h[i][k], ens.tau[k], ens.t_max);
      s += a[i][k];
    }
    means[k] = s.value() / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) a[i][k] -= means[k];
  }
  return a;
}

}  // namespace

std::vector<double> raw_covariance(const EnsembleTable& ens) {
  ens.validate();
  if (ens.trials() < 2) throw EstimationError("covariance needs at least 2 trials, got " + std::to_string(ens.trials()));
  std::vector<double> means;
  const auto a = centered_scaled(ens, means);
  const std::size_t n = a.size(), K = ens.tau.size();
  std::vector<double> cov(K);
  for (std::size_t k = 0; k < K; ++k) {
    stats::CompensatedSum s;
    for (std::size_t i = 0; i < n; ++i) s += a[i][k] * a[i][K - 1];
    cov[k] = s.value() / static_cast<double>(n - 1);
  }
  return cov;
}

CovTable ensemble_covariance(const EnsembleTable& ens, bool keep_replicates) {
  ens.validate();
  const std::size_t n = ens.trials(), K = ens.tau.size();
  if (n < 2) throw EstimationError("covariance needs at least 2 trials, got " + std::to_string(n));
  std::vector<double> means;
  const auto a = centered_scaled(ens, means);
  std::vector<double> sab(K), sa(K);
  for (std::size_t k = 0; k < K; ++k) {
    stats::CompensatedSum p, s;
    for (std::size_t i = 0; i < n; ++i) {
      p += a[i][k] * a[i][K - 1];
      s += a[i][k];
    }
    sab[k] = p.value();
    sa[k] = s.value();
  }
  const double dn = static_cast<double>(n);
  CovTable t;
  t.tau = ens.tau;
  t.cov.resize(K);
  for (std::size_t k = 0; k < K; ++k) t.cov[k] = (sab[k] - sa[k] * sa[K - 1] / dn) / (dn - 1.0);
  t.var1 = t.cov[K - 1];
  if (!(t.var1 > 0.0)) throw EstimationError("degenerate ensemble: Var(X(1)) = 0, cannot normalize");
  t.normalized.resize(K);
  for (std::size_t k = 0; k < K; ++k) t.normalized[k] = t.cov[k] / t.var1;
  t.normalized[K - 1] = 1.0;

  t.cov_se.assign(K, INFINITY);
  t.normalized_se.assign(K, INFINITY);
  t.var1_se = INFINITY;
  if (n < 3) return t;
  // Leave-one-out replicates from the running sums.
  std::vector<std::vector<double>> cov_loo(K, std::vector<double>(n)), norm_loo(K, std::vector<double>(n));
  if (keep_replicates) t.normalized_loo.assign(n, std::vector<double>(K));
  const double m = dn - 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double b = a[i][K - 1];
    const double sb = sa[K - 1] - b;
    const double var1 = (sab[K - 1] - b * b - sb * sb / m) / (m - 1.0);
    for (std::size_t k = 0; k < K; ++k) {
      const double x = a[i][k];
      const double c = (sab[k] - x * b - (sa[k] - x) * sb / m) / (m - 1.0);
      cov_loo[k][i] = c;
      norm_loo[k][i] = k + 1 == K ? 1.0 : c / var1;
      if (keep_replicates) t.normalized_loo[i][k] = norm_loo[k][i];
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    t.cov_se[k] = stats::jackknife_se(cov_loo[k]);
    t.normalized_se[k] = stats::jackknife_se(norm_loo[k]);
  }
  t.var1_se = t.cov_se[K - 1];
  return t;
}

namespace {

struct FitOut {
  double exponent, prefactor, linear, residual;
  int points;
  bool ill;
};

FitOut fit_zero(const std::vector<double>& tau, const std::vector<double>& a, int window, const PowerLawForm& form) {
  std::vector<double> lx, ly;
  for (int k = 0; k < window && k < static_cast<int>(tau.size()); ++k) {
    if (a[k] > 0.0) {
      lx.push_back(std::log(tau[k]));
      ly.push_back(std::log(a[k]));
    }
  }
  FitOut o{form.exponent, 0.0, 0.0, 0.0, static_cast<int>(lx.size()), false};
  if (lx.size() < 2) {
    o.ill = true;
    o.prefactor = NAN;
    o.exponent = form.free_exponent ? NAN : form.exponent;
    return o;
  }
  if (form.free_exponent) {
    const auto f = stats::fit_line(lx, ly);
    o.exponent = f.coef[1];
    o.prefactor = std::exp(f.coef[0]);
    o.residual = f.residual_norm;
    o.ill = f.ill_conditioned;
  } else {
    double s = 0.0, r = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) s += ly[i] - form.exponent * lx[i];
    const double c = s / static_cast<double>(lx.size());
    for (std::size_t i = 0; i < lx.size(); ++i) r += std::pow(ly[i] - c - form.exponent * lx[i], 2);
    o.prefactor = std::exp(c);
    o.residual = std::sqrt(r);
  }
  return o;
}

FitOut fit_one(const std::vector<double>& tau, const std::vector<double>& a, int window) {
  const int K = static_cast<int>(tau.size());
  std::vector<double> c1, c2, y;
  for (int k = std::max(0, K - window); k < K; ++k) {
    c1.push_back(std::pow(1.0 - tau[k], 2.0 / 3.0));
    c2.push_back(1.0 - tau[k]);
    y.push_back(1.0 - a[k]);
  }
  const auto f = stats::least_squares({c1, c2}, y);
  return {2.0 / 3.0, f.coef[0], f.coef[1], f.residual_norm, static_cast<int>(y.size()), f.ill_conditioned};
}

}  // namespace

ScalingReport fit_power_law(const CovTable& cov, FitEnd end, const PowerLawForm& form) {
  const int K = static_cast<int>(cov.tau.size());
  if (form.window < 5 || K < form.window) throw EstimationError("fit window needs at least 5 points");
  ScalingReport r;
  auto run = [&](const std::vector<double>& a) {
    return end == FitEnd::Zero ? fit_zero(cov.tau, a, form.window, form) : fit_one(cov.tau, a, form.window);
  };
  const FitOut o = run(cov.normalized);
  r.exponent = o.exponent;
  r.prefactor = o.prefactor;
  r.linear = o.linear;
  r.residual_norm = o.residual;
  r.points = o.points;
  r.window_lo = end == FitEnd::Zero ? cov.tau.front() : cov.tau[K - form.window];
  r.window_hi = end == FitEnd::Zero ? cov.tau[form.window - 1] : cov.tau.back();
  if (o.ill) {
    r.flagged = true;
    r.note = "ill-conditioned fit";
  }
  if (o.points < 5) {
    r.flagged = true;
    r.note = "only " + std::to_string(o.points) + " usable points (A <= 0 excluded from log fit)";
  } else if (end == FitEnd::Zero && o.points < form.window) {
    r.note = std::to_string(form.window - o.points) + " points with A <= 0 excluded";
  }
  if (!cov.normalized_loo.empty()) {
    std::vector<double> ex, pre, lin;
    for (const auto& rep : cov.normalized_loo) {
      const FitOut f = run(rep);
      ex.push_back(f.exponent);
      pre.push_back(f.prefactor);
      lin.push_back(f.linear);
    }
    r.exponent_se = form.free_exponent && end == FitEnd::Zero ? stats::jackknife_se(ex) : 0.0;
    r.prefactor_se = stats::jackknife_se(pre);
    r.linear_se = end == FitEnd::One ? stats::jackknife_se(lin) : 0.0;
  } else {
    // No replicates: fall back to regression errors.
    if (end == FitEnd::Zero) {
      std::vector<double> lx, ly;
      for (int k = 0; k < form.window; ++k)
        if (cov.normalized[k] > 0.0) {
          lx.push_back(std::log(cov.tau[k]));
          ly.push_back(std::log(cov.normalized[k]));
        }
      if (lx.size() > 2 && form.free_exponent) {
        const auto f = stats::fit_line(lx, ly);
        r.exponent_se = f.se[1];
        r.prefactor_se = r.prefactor * f.se[0];
      }
    } else {
      std::vector<double> c1, c2, y;
      for (int k = K - form.window; k < K; ++k) {
        c1.push_back(std::pow(1.0 - cov.tau[k], 2.0 / 3.0));
        c2.push_back(1.0 - cov.tau[k]);
        y.push_back(1.0 - cov.normalized[k]);
      }
      const auto f = stats::least_squares({c1, c2}, y);
      r.prefactor_se = f.se[0];
      r.linear_se = f.se[1];
    }
  }
  if (!std::isfinite(r.exponent) || !std::isfinite(r.prefactor)) r.flagged = true;
  return r;
}

ScalingReport fit_decay(const std::vector<double>& x, const std::vector<double>& y, double lo, double hi,
                        std::optional<double> fixed_exponent) {
  std::vector<double> lx, ly;
  int pos = 0, neg = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < lo || x[i] > hi) continue;
    (y[i] > 0.0 ? pos : neg)++;
  }
  const double sign = pos >= neg ? 1.0 : -1.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < lo || x[i] > hi || !(sign * y[i] > 0.0) || !(x[i] > 0.0)) continue;
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(sign * y[i]));
  }
  ScalingReport r;
  r.window_lo = lo;
  r.window_hi = hi;
  r.points = static_cast<int>(lx.size());
  if (pos > 0 && neg > 0) {
    r.flagged = true;
    r.note = "mixed signs in window";
  }
  if (lx.size() < 3) {
    r.flagged = true;
    r.note = "fewer than 3 usable points";
    r.exponent = r.prefactor = NAN;
    return r;
  }
  if (fixed_exponent) {
    double s = 0.0, rr = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) s += ly[i] - *fixed_exponent * lx[i];
    const double c = s / static_cast<double>(lx.size());
    std::vector<double> res;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      res.push_back(ly[i] - c - *fixed_exponent * lx[i]);
      rr += res.back() * res.back();
    }
    r.exponent = *fixed_exponent;
    r.prefactor = sign * std::exp(c);
    r.residual_norm = std::sqrt(rr);
    r.prefactor_se = std::exp(c) * std::sqrt(rr / static_cast<double>(lx.size() - 1) / static_cast<double>(lx.size()));
  } else {
    const auto f = stats::fit_line(lx, ly);
    r.exponent = f.coef[1];
    r.exponent_se = f.se[1];
    r.prefactor = sign * std::exp(f.coef[0]);
    r.prefactor_se = std::exp(f.coef[0]) * f.se[0];
    r.residual_norm = f.residual_norm;
  }
  return r;
}

CurrentCorrelator::CurrentCorrelator(std::int64_t bonds, double total_time, double max_lag, double bin_width,
                                     int batches)
    : bonds_(bonds),
      total_(total_time),
      max_lag_(max_lag),
      width_(bin_width),
      nbins_(static_cast<int>(std::lround(max_lag / bin_width))),
      batches_(batches),
      origin_end_(total_time - max_lag) {
  if (total_time < 2.0 * max_lag) throw sim::RangeError("current correlation needs T >= 2 * max lag");
  if (std::fabs(nbins_ * bin_width - max_lag) > 1e-9) throw std::invalid_argument("max lag must be a multiple of the bin width");
  recent_.resize(static_cast<std::size_t>(bonds));
  pair_sum_.assign(static_cast<std::size_t>(batches), std::vector<double>(static_cast<std::size_t>(nbins_), 0.0));
  self_count_.assign(static_cast<std::size_t>(batches), 0.0);
}

void CurrentCorrelator::on_jump(const sim::JumpEvent& e) {
  if (e.time > total_) return;
  ++events_;
  signed_total_ += e.direction;
  auto& q = recent_[static_cast<std::size_t>(e.bond)];
  while (!q.empty() && e.time - q.front().time >= max_lag_) q.pop_front();
  const double batch_len = origin_end_ / batches_;
  for (const Recent& r : q) {
    if (r.time > origin_end_) break;
    const int bin = static_cast<int>((e.time - r.time) / width_);
    if (bin >= nbins_) continue;
    const int batch = std::min(batches_ - 1, static_cast<int>(r.time / batch_len));
    pair_sum_[batch][bin] += r.dir * e.direction;
  }
  if (e.time <= origin_end_) self_count_[std::min(batches_ - 1, static_cast<int>(e.time / batch_len))] += 1.0;
  q.push_back({e.time, e.direction});
}

sim::ExclusionProcess::Observer CurrentCorrelator::observer() {
  return [this](const sim::JumpEvent& e) { on_jump(e); };
}

CurrentCorr CurrentCorrelator::finish() const {
  CurrentCorr c;
  c.observed_time = total_;
  c.events = events_;
  const double nb = static_cast<double>(bonds_);
  c.mean_current = static_cast<double>(signed_total_) / (total_ * nb);
  const double j2 = c.mean_current * c.mean_current;
  const double batch_len = origin_end_ / batches_;
  std::vector<double> per(batches_);
  for (int b = 0; b < nbins_; ++b) {
    double s = 0.0;
    for (int k = 0; k < batches_; ++k) {
      s += pair_sum_[k][b];
      per[k] = pair_sum_[k][b] / (batch_len * width_ * nb) - j2;
    }
    c.lag_lo.push_back(b * width_);
    c.lag_hi.push_back((b + 1) * width_);
    c.h.push_back(s / (origin_end_ * width_ * nb) - j2);
    c.h_se.push_back(stats::batch_means_se(per));
  }
  double self = 0.0;
  for (int k = 0; k < batches_; ++k) {
    self += self_count_[k];
    per[k] = self_count_[k] / (batch_len * nb);
  }
  c.rate = self / (origin_end_ * nb);
  c.rate_se = stats::batch_means_se(per);
  return c;
}

CurrentCorr current_autocorrelation(const sim::ModelSpec& model, double rho, std::int64_t L, double T,
                                    const RngSeed& seed, double max_lag, double bin_width) {
  auto state = sim::init_configuration(sim::InitialCondition::bernoulli(rho), sim::Domain::ring(L), seed);
  sim::ExclusionProcess proc(model, std::move(state), seed);
  CurrentCorrelator corr(L, T, max_lag, bin_width);
  proc.set_observer(corr.observer());
  proc.advance_to(T);
  CurrentCorr c = corr.finish();
  // One ring carries one particle number; batches in time cannot see that.
  c.rate_ensemble_sd = ring_rate_spread(model.p + model.q, rho, L);
  c.rate_se = std::hypot(c.rate_se, c.rate_ensemble_sd);
  return c;
}

double ring_rate_spread(double rate_scale, double rho, std::int64_t L) {
  if (L < 2) throw std::invalid_argument("ring_rate_spread: L must be >= 2");
  if (rho <= 0.0 || rho >= 1.0) return 0.0;
  const double dl = static_cast<double>(L);
  double m1 = 0.0, m2 = 0.0;
  for (std::int64_t n = 0; n <= L; ++n) {
    const double dn = static_cast<double>(n);
    const double logp = std::lgamma(dl + 1) - std::lgamma(dn + 1) - std::lgamma(dl - dn + 1) + dn * std::log(rho) +
                        (dl - dn) * std::log1p(-rho);
    const double w = std::exp(logp);
    const double f = rate_scale * dn * (dl - dn) / (dl * (dl - 1.0));
    m1 += w * f;
    m2 += w * f * f;
  }
  return std::sqrt(std::max(0.0, m2 - m1 * m1));
}

double integral_cancellation(const CurrentCorr& c) {
  double s = 0.0;
  for (std::size_t b = 0; b < c.h.size(); ++b) s += c.h[b] * (c.lag_hi[b] - c.lag_lo[b]);
  return c.rate + 2.0 * s;
}

std::vector<double> ring_correlation(const std::vector<std::uint8_t>& later, const std::vector<std::uint8_t>& earlier,
                                     std::int64_t j_max) {
  const auto L = static_cast<std::int64_t>(earlier.size());
  if (static_cast<std::int64_t>(later.size()) != L) throw std::invalid_argument("snapshot size mismatch");
  if (2 * j_max + 1 > L) throw std::invalid_argument("j_max too large for the ring");
  std::vector<std::int64_t> acc(static_cast<std::size_t>(2 * j_max + 1), 0);
  std::int64_t N = 0;
  // Doubled copy avoids the modulo in the inner loop.
  std::vector<std::uint8_t> ext(static_cast<std::size_t>(L + 2 * j_max));
  for (std::int64_t i = 0; i < L + 2 * j_max; ++i) ext[i] = later[((i - j_max) % L + L) % L];
  for (std::int64_t x = 0; x < L; ++x) {
    if (!earlier[x]) continue;
    ++N;
    const std::uint8_t* row = ext.data() + x;  // row[j + j_max] = later[x + j]
    for (std::int64_t k = 0; k <= 2 * j_max; ++k) acc[k] += row[k];
  }
  const double rho = static_cast<double>(N) / L;
  const double offset = -rho * rho + rho * (1.0 - rho) / static_cast<double>(L - 1);
  std::vector<double> c(acc.size());
  for (std::size_t k = 0; k < acc.size(); ++k) c[k] = static_cast<double>(acc[k]) / L + offset;
  return c;
}

TwoPointTable two_point_function(const sim::ModelSpec& model, double rho, std::int64_t L, std::uint64_t rings,
                                 std::uint64_t first_trial, std::uint64_t master_seed, const TwoPointOptions& opt) {
  if (rings < 2) throw EstimationError("two-point function needs at least 2 rings");
  const double t_last = *std::max_element(opt.times.begin(), opt.times.end());
  const double spacing = opt.origin_spacing > 0.0 ? opt.origin_spacing : t_last;
  // Snapshot schedule: (time, origin, time index), origin snapshots use index -1.
  struct Snap {
    double time;
    int origin;
    int ti;
  };
  std::vector<Snap> sched;
  for (int o = 0; o < opt.origins; ++o) {
    sched.push_back({o * spacing, o, -1});
    for (std::size_t ti = 0; ti < opt.times.size(); ++ti) sched.push_back({o * spacing + opt.times[ti], o, static_cast<int>(ti)});
  }
  std::stable_sort(sched.begin(), sched.end(), [](const Snap& a, const Snap& b) { return a.time < b.time; });

  const std::size_t nt = opt.times.size(), nj = static_cast<std::size_t>(2 * opt.j_max + 1);
  TwoPointTable tab;
  tab.times = opt.times;
  tab.j_max = opt.j_max;
  tab.samples = rings;
  std::vector<std::vector<double>> sum(nt, std::vector<double>(nj, 0.0)), sum2 = sum;
  for (std::uint64_t r = 0; r < rings; ++r) {
    const RngSeed seed{master_seed, first_trial + r};
    auto state = sim::init_configuration(sim::InitialCondition::bernoulli(rho), sim::Domain::ring(L), seed);
    sim::ExclusionProcess proc(model, std::move(state), seed);
    std::vector<std::vector<std::uint8_t>> origin_snap(static_cast<std::size_t>(opt.origins));
    std::vector<std::vector<double>> ring_rows(nt, std::vector<double>(nj, 0.0));
    for (const Snap& s : sched) {
      proc.advance_to(s.time);
      const auto& occ = proc.state().raw_occupation();
      if (s.ti < 0) {
        origin_snap[s.origin] = occ;
        continue;
      }
      const auto c = ring_correlation(occ, origin_snap[s.origin], opt.j_max);
      for (std::size_t k = 0; k < nj; ++k) ring_rows[s.ti][k] += c[k] / opt.origins;
    }
    for (std::size_t ti = 0; ti < nt; ++ti)
      for (std::size_t k = 0; k < nj; ++k) {
        sum[ti][k] += ring_rows[ti][k];
        sum2[ti][k] += ring_rows[ti][k] * ring_rows[ti][k];
      }
    if (opt.keep_per_ring) tab.per_ring.push_back(std::move(ring_rows));
  }
  const double n = static_cast<double>(rings);
  tab.s.assign(nt, std::vector<double>(nj));
  tab.s_se = tab.s;
  for (std::size_t ti = 0; ti < nt; ++ti) {
    double chi = 0.0;
    for (std::size_t k = 0; k < nj; ++k) {
      const double m = sum[ti][k] / n;
      tab.s[ti][k] = m;
      tab.s_se[ti][k] = std::sqrt(std::max(0.0, (sum2[ti][k] / n - m * m) * n / (n - 1.0) / n));
      chi += m;
    }
    tab.chi.push_back(chi);
  }
  return tab;
}

namespace {

std::pair<double, double> abs_moments(const std::vector<double>& row, std::int64_t j_max, double center,
                                      double window) {
  double m0 = 0.0, m1 = 0.0;
  for (std::int64_t j = -j_max; j <= j_max; ++j) {
    const double d = std::fabs(static_cast<double>(j) - center);
    if (d > window) continue;
    const double s = row[static_cast<std::size_t>(j + j_max)];
    m0 += s;
    m1 += d * s;
  }
  return {m0, m1};
}

std::int64_t settle_window(const std::vector<double>& row, std::int64_t j_max, double center, double factor,
                           double& width) {
  double window = static_cast<double>(j_max);
  for (int it = 0; it < 20; ++it) {
    const auto [m0, m1] = abs_moments(row, j_max, center, window);
    width = m1 / m0;
    const double next = std::min(static_cast<double>(j_max), std::ceil(factor * width));
    if (next == window) break;
    window = next;
  }
  return static_cast<std::int64_t>(window);
}

}  // namespace

WidthEstimate two_point_width(const TwoPointTable& t, std::size_t ti, double center, double factor) {
  WidthEstimate w;
  w.window = settle_window(t.s[ti], t.j_max, center, factor, w.width);
  const auto [m0, m1] = abs_moments(t.s[ti], t.j_max, center, static_cast<double>(w.window));
  w.width = m1 / m0;
  if (t.per_ring.size() >= 2) {
    const double n = static_cast<double>(t.per_ring.size());
    std::vector<double> loo;
    for (const auto& ring : t.per_ring) {
      const auto [r0, r1] = abs_moments(ring[ti], t.j_max, center, static_cast<double>(w.window));
      loo.push_back((m1 * n - r1) / (m0 * n - r0));
    }
    w.se = stats::jackknife_se(loo);
  }
  return w;
}

WidthEstimate width_ratio(const TwoPointTable& t, std::size_t ia, std::size_t ib, double factor, double velocity) {
  const double ca = velocity * t.times[ia], cb = velocity * t.times[ib];
  const WidthEstimate a = two_point_width(t, ia, ca, factor);
  const WidthEstimate b = two_point_width(t, ib, cb, factor);
  WidthEstimate r;
  r.width = b.width / a.width;
  r.window = b.window;
  if (t.per_ring.size() >= 2) {
    const double n = static_cast<double>(t.per_ring.size());
    const auto [a0, a1] = abs_moments(t.s[ia], t.j_max, ca, static_cast<double>(a.window));
    const auto [b0, b1] = abs_moments(t.s[ib], t.j_max, cb, static_cast<double>(b.window));
    std::vector<double> loo;
    for (const auto& ring : t.per_ring) {
      const auto [ra0, ra1] = abs_moments(ring[ia], t.j_max, ca, static_cast<double>(a.window));
      const auto [rb0, rb1] = abs_moments(ring[ib], t.j_max, cb, static_cast<double>(b.window));
      const double wa = (a1 * n - ra1) / (a0 * n - ra0);
      const double wb = (b1 * n - rb1) / (b0 * n - rb0);
      loo.push_back(wb / wa);
    }
    r.se = stats::jackknife_se(loo);
  }
  return r;
}

SumRuleResult sum_rule_residual(double var_h, double var_h_se, const TwoPointTable& t, std::size_t ti,
                                std::size_t zi, std::int64_t y, double edge_tolerance) {
  auto functional = [&](const std::vector<double>& st, const std::vector<double>& s0) {
    double v = 0.0;
    for (std::int64_t j = -t.j_max; j <= t.j_max; ++j) {
      const auto k = static_cast<std::size_t>(j + t.j_max);
      v += static_cast<double>(std::llabs(j - y)) * st[k] - static_cast<double>(std::llabs(j)) * s0[k];
    }
    return v;
  };
  SumRuleResult r;
  r.lhs = var_h;
  r.rhs = functional(t.s[ti], t.s[zi]);
  r.residual = var_h - r.rhs;
  double rhs_se = 0.0;
  if (t.per_ring.size() >= 2) {
    std::vector<double> per;
    for (const auto& ring : t.per_ring) per.push_back(functional(ring[ti], ring[zi]));
    rhs_se = stats::standard_error(per);
  }
  r.se = std::sqrt(var_h_se * var_h_se + rhs_se * rhs_se);
  for (std::int64_t j : {-t.j_max, -t.j_max + 1, t.j_max - 1, t.j_max})
    r.edge_mass += std::fabs(t.value(ti, j));
  r.truncation_warning = r.edge_mass > edge_tolerance;
  return r;
}

std::int64_t ray_height(const sim::OccupancyField& s, std::int64_t y) {
  std::int64_t h = s.bond_count(0);
  for (std::int64_t i = 1; i <= y; ++i) h -= s.occupied(i);
  return h;
}

RayCurrentResult ray_current_series(const sim::ModelSpec& model, double rho, double v, std::int64_t L,
                                    std::int64_t y_max, std::int64_t lag_max, std::uint64_t rings,
                                    std::uint64_t first_trial, std::uint64_t master_seed) {
  if (!(v > 0.0)) throw std::invalid_argument("ray velocity must be positive");
  if (lag_max >= y_max) throw std::invalid_argument("lag_max must be below y_max");
  if (y_max + 1 > L) throw std::invalid_argument("ring too short for the ray length");
  if (rings < 2) throw EstimationError("ray covariance needs at least 2 rings");
  RayCurrentResult res;
  res.rings = rings;
  const auto nlag = static_cast<std::size_t>(lag_max + 1);
  std::vector<std::vector<double>> prod(rings, std::vector<double>(nlag, 0.0));
  std::vector<double> xsum(rings, 0.0), xcount(rings, 0.0);
  std::vector<double> pcount(nlag, 0.0);

  for (std::uint64_t r = 0; r < rings; ++r) {
    const RngSeed seed{master_seed, first_trial + r};
    auto state = sim::init_configuration(sim::InitialCondition::bernoulli(rho), sim::Domain::ring(L), seed);
    sim::ExclusionProcess proc(model, std::move(state), seed);
    // X[x0][j-1] for rays started at x0.
    std::vector<std::vector<std::int32_t>> X(static_cast<std::size_t>(L), std::vector<std::int32_t>(y_max));
    std::vector<std::int64_t> prev_counts = proc.state().raw_bond_counts();
    std::vector<std::int64_t> prefix(static_cast<std::size_t>(2 * L + 1));
    std::vector<std::int64_t> partial(static_cast<std::size_t>(L), 0);
    for (std::int64_t k = 1; k <= y_max; ++k) {
      proc.advance_to(static_cast<double>(k) / v);
      const auto& bc = proc.state().raw_bond_counts();
      const auto& occ = proc.state().raw_occupation();
      for (std::int64_t x0 = 0; x0 < L; ++x0) {
        const std::int64_t b = (x0 + k - 1) % L;  // bond (x0+k-1, x0+k)
        const std::int64_t site = (x0 + k) % L;
        const auto x = static_cast<std::int32_t>(bc[b] - prev_counts[b] - occ[site]);
        X[x0][k - 1] = x;
        partial[x0] += x;
      }
      // Staircase: sum_{j<=k} X_j = J_{x0,x0+1}(k/v) - sum_{i=1..k} eta_{x0+i}(k/v).
      prefix[0] = 0;
      for (std::int64_t i = 0; i < 2 * L; ++i) prefix[i + 1] = prefix[i] + occ[i % L];
      for (std::int64_t x0 = 0; x0 < L; ++x0) {
        const std::int64_t h = bc[x0] - (prefix[x0 + k + 1] - prefix[x0 + 1]);
        ++res.staircase_checks;
        if (h != partial[x0]) ++res.staircase_failures;
      }
      prev_counts = bc;
    }
    for (std::int64_t x0 = 0; x0 < L; ++x0) {
      const auto& row = X[x0];
      for (std::int64_t i = 0; i < y_max; ++i) {
        xsum[r] += row[i];
        xcount[r] += 1.0;
        const std::int64_t dmax = std::min(lag_max, y_max - 1 - i);
        for (std::int64_t d = 0; d <= dmax; ++d) prod[r][d] += static_cast<double>(row[i] * row[i + d]);
      }
    }
  }
  for (std::int64_t d = 0; d <= lag_max; ++d) pcount[d] = static_cast<double>(L * (y_max - d));
  const double n = static_cast<double>(rings);
  double tx = 0.0, tc = 0.0;
  for (std::uint64_t r = 0; r < rings; ++r) {
    tx += xsum[r];
    tc += xcount[r];
  }
  res.mean_x = tx / tc;
  std::vector<double> tp(nlag, 0.0);
  for (std::uint64_t r = 0; r < rings; ++r)
    for (std::size_t d = 0; d < nlag; ++d) tp[d] += prod[r][d];
  auto cov_from = [&](const std::vector<double>& p, double mx, double rings_used, std::size_t d) {
    return p[d] / (pcount[d] * rings_used) - mx * mx;
  };
  std::vector<std::vector<double>> loo_cov(nlag, std::vector<double>(rings)), loo_sum = loo_cov;
  for (std::uint64_t r = 0; r < rings; ++r) {
    const double mx = (tx - xsum[r]) / (tc - xcount[r]);
    std::vector<double> p(nlag);
    for (std::size_t d = 0; d < nlag; ++d) p[d] = tp[d] - prod[r][d];
    double run = 0.0;
    for (std::size_t d = 0; d < nlag; ++d) {
      const double c = cov_from(p, mx, n - 1.0, d);
      loo_cov[d][r] = c;
      run += d == 0 ? c : 2.0 * c;
      loo_sum[d][r] = run;
    }
  }
  double run = 0.0;
  for (std::size_t d = 0; d < nlag; ++d) {
    const double c = cov_from(tp, res.mean_x, n, d);
    run += d == 0 ? c : 2.0 * c;
    res.lag.push_back(static_cast<double>(d));
    res.cov.push_back(c);
    res.cov_se.push_back(stats::jackknife_se(loo_cov[d]));
    res.partial_sum.push_back(run);
    res.partial_sum_se.push_back(stats::jackknife_se(loo_sum[d]));
  }
  return res;
}

}  // namespace kpz::obs

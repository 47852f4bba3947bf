#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

#include "experiments_detail.hpp"
#include "kpz/fredholm.hpp"
#include "kpz/observables.hpp"
#include "kpz/stats.hpp"

namespace kpz::exp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Acceptance tolerances shared by run() and report().
constexpr double kStatMaxDeviation = 0.05;
constexpr double kStatDevLo = 0.05, kStatDevHi = 0.95;
constexpr double kVarRelTol = 0.10;
constexpr double kStepExponentTol = 0.10;
constexpr double kFlatExponentTol = 0.15;
constexpr double kNearOneCTol = 0.05;
constexpr double kSlopeTol = 0.15;
constexpr double kPrefactorRelTol = 0.25;
constexpr double kRateSe = 3.0;
constexpr double kCancellationRelTol = 0.05;
constexpr double kTwoPointAsymRelTol = 0.15;
constexpr double kTwoPointSymRelTol = 0.10;
constexpr double kSumRuleSe = 3.0;
constexpr double kRaySlopeTol = 0.20;
constexpr double kRaySumSe = 3.0;
constexpr double kLppMeanSe = 3.0;
constexpr double kFredholmVarTol = 0.002;
constexpr double kFredholmCTol = 0.01;
constexpr double kC0RelTol = 0.05;
constexpr double kIdentityRelTol = 0.02;
constexpr double kQuotedAbsMoment = 0.287599;

// Standard error of the sample variance from the fourth central moment.
double variance_se(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  const double m = stats::mean(x);
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = (v - m) * (v - m);
    m2 += d;
    m4 += d * d;
  }
  m2 /= n;
  m4 /= n;
  return std::sqrt(std::max(0.0, (m4 - m2 * m2) / n));
}

// sum_{j > J} j^{-s} by direct summation plus Euler-Maclaurin tail.
double power_tail(std::int64_t J, double s) {
  const std::int64_t N = J + 2000;
  double acc = 0.0;
  for (std::int64_t j = N - 1; j > J; --j) acc += std::pow(static_cast<double>(j), -s);
  const double n = static_cast<double>(N);
  return acc + std::pow(n, 1.0 - s) / (s - 1.0) + 0.5 * std::pow(n, -s) + s * std::pow(n, -s - 1.0) / 12.0;
}

std::vector<std::vector<double>> ensemble_rows(const ExperimentConfig& cfg, const fs::path& dir, std::size_t width) {
  auto rows = read_ensemble(dir / "ensemble.csv");
  if (rows.size() < cfg.trials)
    throw IntegrityError("ensemble has " + std::to_string(rows.size()) + " rows, expected " +
                         std::to_string(cfg.trials));
  rows.resize(cfg.trials);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != width + 2) throw IntegrityError("ensemble row " + std::to_string(i) + " has wrong width");
    if (rows[i][0] != static_cast<double>(i)) throw IntegrityError("ensemble rows out of trial order at " + std::to_string(i));
  }
  return rows;
}

json report_json(const obs::ScalingReport& r) {
  return json{{"exponent", r.exponent},   {"exponent_se", r.exponent_se}, {"prefactor", r.prefactor},
              {"prefactor_se", r.prefactor_se}, {"linear", r.linear},     {"linear_se", r.linear_se},
              {"window_lo", r.window_lo}, {"window_hi", r.window_hi},     {"points", r.points},
              {"flagged", r.flagged},     {"note", r.note}};
}

void write_gnuplot(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  out << body;
}

// ---------------------------------------------------------------- covariance

detail::Finalized finalize_covariance(const ExperimentConfig& cfg, const fs::path& dir) {
  const auto rows = ensemble_rows(cfg, dir, cfg.tau.size());
  obs::EnsembleTable ens;
  ens.tau = cfg.tau;
  ens.t_max = cfg.t_max;
  for (const auto& r : rows) {
    ens.trial_index.push_back(static_cast<std::uint64_t>(r[0]));
    ens.h.emplace_back(r.begin() + 2, r.end());
  }
  ens.metadata["config_hash"] = cfg.hash();
  const obs::CovTable cov = obs::ensemble_covariance(ens, true);
  const std::size_t K = cfg.tau.size();

  detail::CsvWriter csv(dir / "covariance.csv", cfg, {"tau", "cov", "cov_se", "normalized", "theory_stat"});
  for (std::size_t k = 0; k < K; ++k)
    csv.row({cov.tau[k], cov.cov[k], cov.cov_se[k], cov.normalized[k], obs::stationary_theory_curve(cov.tau[k])});

  const bool step = cfg.kind == Kind::CovarianceStep, flat = cfg.kind == Kind::CovarianceFlat;
  const double zero_exp = step ? 2.0 / 3.0 : flat ? 4.0 / 3.0 : 2.0 / 3.0;
  obs::PowerLawForm free_form;
  free_form.free_exponent = true;
  obs::PowerLawForm fixed_form;
  fixed_form.free_exponent = false;
  fixed_form.exponent = zero_exp;
  const auto near_zero = obs::fit_power_law(cov, obs::FitEnd::Zero, free_form);
  const auto near_zero_fixed = obs::fit_power_law(cov, obs::FitEnd::Zero, fixed_form);
  const auto near_one = obs::fit_power_law(cov, obs::FitEnd::One, free_form);

  {
    detail::PlotWriter p(dir / "covariance.dat", cfg, "tau A A_se theory_stat fit_zero fit_one");
    for (std::size_t k = 0; k < K; ++k) {
      const double t = cov.tau[k];
      p.row({t, cov.normalized[k], cov.normalized_se[k], obs::stationary_theory_curve(t),
             near_zero.prefactor * std::pow(t, near_zero.exponent),
             1.0 - near_one.prefactor * std::pow(1.0 - t, 2.0 / 3.0) - near_one.linear * (1.0 - t)});
    }
    detail::PlotWriter z(dir / "inset_zero.dat", cfg, "log_tau log_A log_fit");
    for (std::size_t k = 0; k < std::min<std::size_t>(K, 10); ++k)
      if (cov.normalized[k] > 0.0)
        z.row({std::log(cov.tau[k]), std::log(cov.normalized[k]),
               std::log(near_zero.prefactor) + near_zero.exponent * std::log(cov.tau[k])});
    detail::PlotWriter o(dir / "inset_one.dat", cfg, "log_1_minus_tau log_1_minus_A log_fit");
    for (std::size_t k = K >= 11 ? K - 11 : 0; k + 1 < K; ++k) {
      const double u = 1.0 - cov.tau[k], y = 1.0 - cov.normalized[k];
      const double fit = near_one.prefactor * std::pow(u, 2.0 / 3.0) + near_one.linear * u;
      if (y > 0.0 && fit > 0.0) o.row({std::log(u), std::log(y), std::log(fit)});
    }
    write_gnuplot(dir / "plot.gp",
                  "set terminal svg size 800,600\nset output 'covariance.svg'\nset xlabel 'tau'\n"
                  "set ylabel 'normalized covariance'\nset key left top\n"
                  "plot 'covariance.dat' u 1:2:3 w yerrorbars t 'estimate', '' u 1:4 w l t 'stationary theory', "
                  "'' u 1:5 w l t 'fit near 0', '' u 1:6 w l t 'fit near 1'\n"
                  "set output 'inset_zero.svg'\nset xlabel 'log tau'\nset ylabel 'log A'\n"
                  "plot 'inset_zero.dat' u 1:2 w p t 'estimate', '' u 1:3 w l t 'fit'\n"
                  "set output 'inset_one.svg'\nset xlabel 'log(1-tau)'\nset ylabel 'log(1-A)'\n"
                  "plot 'inset_one.dat' u 1:2 w p t 'estimate', '' u 1:3 w l t 'fit'\n");
  }

  const References& ref = references();
  std::vector<Check> checks;
  const std::string vsrc = step ? "Var(xi_GUE)" : flat ? "2^{-4/3} Var(xi_GOE)" : "Var(xi_BR)";
  const double var_target = step ? ref.var_gue : flat ? std::pow(2.0, -4.0 / 3.0) * ref.var_goe : ref.var_br;
  if (cfg.kind == Kind::CovarianceStat) {
    double dev = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      if (cov.tau[k] >= kStatDevLo - 1e-12 && cov.tau[k] <= kStatDevHi + 1e-12)
        dev = std::max(dev, std::fabs(cov.normalized[k] - obs::stationary_theory_curve(cov.tau[k])));
    checks.push_back(make_check("max |A(tau) - theory| on [0.05, 0.95]", dev, 0.0, kStatMaxDeviation, "below",
                                "exact stationary covariance"));
  } else {
    const double tol = step ? kStepExponentTol : kFlatExponentTol;
    checks.push_back(make_check("near-0 exponent", near_zero.exponent, zero_exp, tol, "abs", "scaling exponent",
                                near_zero.exponent_se));
    checks.push_back(make_check(step ? "near-1 c vs c^step" : "near-1 c vs c^flat", near_one.prefactor,
                                step ? ref.c_step : ref.c_flat, kNearOneCTol, "abs", "Fredholm constants",
                                near_one.prefactor_se));
    if (step)
      checks.push_back(make_check("near-0 prefactor (exponent 2/3) vs 0.65", near_zero_fixed.prefactor, 0.65, 0.1,
                                  "abs", "published fit 0.65 tau^{2/3}", near_zero_fixed.prefactor_se, false));
  }
  checks.push_back(make_check("Var(X(1)) vs " + vsrc, cov.var1, var_target, kVarRelTol, "rel", "Fredholm constants",
                              cov.var1_se));
  checks.push_back(make_check("A(1) == 1", cov.normalized.back() == 1.0 ? 1.0 : 0.0, 1.0, 0.0, "true", "invariant"));
  int monotone_violations = 0;
  for (std::size_t k = 0; k + 1 < K; ++k)
    if (cov.cov[k + 1] - cov.cov[k] < -2.0 * std::hypot(cov.cov_se[k], cov.cov_se[k + 1])) ++monotone_violations;
  checks.push_back(make_check("C(tau) increasing within 2 SE (violations)", monotone_violations, 0.0, 0.5, "below",
                              "invariant", 0.0, false));

  json summary;
  summary["trials"] = cfg.trials;
  summary["t_max"] = cfg.t_max;
  summary["var_x1"] = cov.var1;
  summary["var_x1_se"] = cov.var1_se;
  summary["var_target"] = var_target;
  summary["near_zero"] = report_json(near_zero);
  summary["near_zero_fixed"] = report_json(near_zero_fixed);
  summary["near_one"] = report_json(near_one);
  {
    std::vector<double> x1;
    for (const auto& r : ens.h) x1.push_back(obs::rescale_height(r.back(), 1.0, cfg.t_max));
    summary["mean_x1"] = stats::mean(x1);
    summary["mean_x1_se"] = stats::standard_error(x1);
  }

  if (cfg.kind != Kind::CovarianceStat && cfg.horizon_check_stride > 0) {
    std::vector<double> narrow, wide;
    for (std::uint64_t i = 0; i < cfg.trials; i += cfg.horizon_check_stride) {
      narrow.push_back(obs::rescale_height(ens.h[i].back(), 1.0, cfg.t_max));
      wide.push_back(obs::rescale_height(covariance_trial_wide(cfg, i).back(), 1.0, cfg.t_max));
    }
    if (narrow.size() >= 2) {
      const double diff = stats::mean(wide) - stats::mean(narrow);
      const double se = std::hypot(stats::standard_error(wide), stats::standard_error(narrow));
      summary["horizon_check"] = json{{"samples", narrow.size()}, {"mean_R", stats::mean(narrow)},
                                      {"mean_2R", stats::mean(wide)}, {"diff", diff}, {"se", se}};
      checks.push_back(make_check("horizon: mean X(1) on 2R minus R", diff, 0.0, 1.0, "se", "window validation", se,
                                  false));
    }
  }
  return {checks, summary};
}

// -------------------------------------------------------------- current-corr

detail::Finalized finalize_current(const ExperimentConfig& cfg, const fs::path& dir) {
  const sim::ModelSpec model{cfg.p, cfg.q};
  const obs::CurrentCorr c = obs::current_autocorrelation(model, cfg.rho, cfg.ring_size, cfg.total_time,
                                                          RngSeed{cfg.master_seed, 0}, cfg.max_lag, cfg.bin_width);
  detail::CsvWriter csv(dir / "hcorr.csv", cfg, {"lag_lo", "lag_hi", "h_est", "h_se"});
  std::vector<double> mid, h;
  for (std::size_t b = 0; b < c.h.size(); ++b) {
    csv.row({c.lag_lo[b], c.lag_hi[b], c.h[b], c.h_se[b]});
    mid.push_back(0.5 * (c.lag_lo[b] + c.lag_hi[b]));
    h.push_back(c.h[b]);
  }
  const bool symmetric = cfg.p == cfg.q;
  const double alpha = symmetric ? 1.5 : 4.0 / 3.0;
  const auto free_fit = obs::fit_decay(mid, h, cfg.fit_lo, cfg.fit_hi, std::nullopt);
  const auto fixed_fit = obs::fit_decay(mid, h, cfg.fit_lo, cfg.fit_hi, -alpha);
  const bool half_filled_tasep = cfg.p == 1.0 && cfg.q == 0.0 && cfg.rho == 0.5;
  const double c0 = half_filled_tasep ? c0_reference() : NAN;

  {
    detail::PlotWriter p(dir / "hcorr.dat", cfg, "lag minus_h h_se fit theory");
    for (std::size_t b = 0; b < mid.size(); ++b)
      p.row({mid[b], -h[b], c.h_se[b], std::fabs(fixed_fit.prefactor) * std::pow(mid[b], -alpha),
             half_filled_tasep ? c0 * std::pow(mid[b], -4.0 / 3.0) : NAN});
    write_gnuplot(dir / "plot.gp",
                  "set terminal svg size 800,600\nset output 'hcorr.svg'\nset logscale xy\nset xlabel 't'\n"
                  "set ylabel '-h(t)'\nplot 'hcorr.dat' u 1:2:3 w yerrorbars t 'estimate', '' u 1:4 w l t 'fit', "
                  "'' u 1:5 w l t 'theory'\n");
  }

  // Unit-width lag bins for the sign and monotonicity test on [1, 40].
  const int per_unit = static_cast<int>(std::lround(1.0 / cfg.bin_width));
  std::vector<double> uh, use;
  for (int u = 1; u < 40 && (u + 1) * per_unit <= static_cast<int>(c.h.size()); ++u) {
    double s = 0.0, v = 0.0;
    for (int b = u * per_unit; b < (u + 1) * per_unit; ++b) {
      s += c.h[b];
      v += c.h_se[b] * c.h_se[b];
    }
    uh.push_back(s / per_unit);
    use.push_back(std::sqrt(v) / per_unit);
  }
  int sign_violations = 0, monotone_violations = 0;
  for (std::size_t k = 0; k < uh.size(); ++k) {
    if (uh[k] > 2.0 * use[k]) ++sign_violations;
    if (k + 1 < uh.size() && uh[k + 1] - uh[k] < -2.0 * std::hypot(use[k], use[k + 1])) ++monotone_violations;
  }
  const double raw = obs::integral_cancellation(c);
  const double tail = 2.0 * std::fabs(fixed_fit.prefactor) * std::pow(cfg.max_lag, 1.0 - alpha) / (alpha - 1.0);
  const double corrected = raw - tail;

  std::vector<Check> checks;
  checks.push_back(make_check("h(t) < 0 on [1,40] within 2 SE (violations)", sign_violations, 0.0, 0.5, "below",
                              "negative current correlation"));
  checks.push_back(make_check("h(t) non-decreasing on [1,40] within 2 SE (violations)", monotone_violations, 0.0, 0.5,
                              "below", "negative current correlation"));
  checks.push_back(make_check("log-log slope of -h", free_fit.exponent, -alpha, kSlopeTol, "abs",
                              symmetric ? "reversible decay" : "KPZ decay", free_fit.exponent_se));
  if (half_filled_tasep)
    checks.push_back(make_check("prefactor (exponent -4/3) vs c0", std::fabs(fixed_fit.prefactor), c0,
                                kPrefactorRelTol, "rel", "c0 from f_KPZ", fixed_fit.prefactor_se));
  const double rate_target = (cfg.p + cfg.q) * cfg.rho * (1.0 - cfg.rho);
  checks.push_back(make_check("delta-part rate", c.rate, rate_target, kRateSe, "se", "<c_{0,1}>", c.rate_se));
  checks.push_back(make_check("rate + integral of h (tail-corrected)", corrected / c.rate, 0.0, kCancellationRelTol,
                              "abs", "current covariance integrates to 0"));
  checks.push_back(make_check("rate + integral of h over |t| <= max lag", raw / c.rate, 0.0, kCancellationRelTol, "abs",
                              "current covariance integrates to 0", 0.0, false));

  json summary{{"rate", c.rate},
               {"rate_se", c.rate_se},
               {"mean_current", c.mean_current},
               {"events", c.events},
               {"observed_time", c.observed_time},
               {"free_fit", report_json(free_fit)},
               {"fixed_fit", report_json(fixed_fit)},
               {"integral_raw", raw},
               {"integral_tail_estimate", -tail},
               {"integral_corrected", corrected},
               {"c0_reference", half_filled_tasep ? json(c0) : json(nullptr)}};
  return {checks, summary};
}

// ----------------------------------------------------------------- two-point

detail::Finalized finalize_two_point(const ExperimentConfig& cfg, const fs::path& dir) {
  obs::TwoPointOptions opt;
  opt.times = cfg.times;
  opt.j_max = cfg.j_max;
  opt.origins = cfg.origins;
  opt.origin_spacing = cfg.origin_spacing;
  opt.keep_per_ring = true;
  const sim::ModelSpec model{cfg.p, cfg.q};
  const auto t = obs::two_point_function(model, cfg.rho, cfg.ring_size, cfg.trials, 0, cfg.master_seed, opt);
  const double v = (cfg.p - cfg.q) * (1.0 - 2.0 * cfg.rho);
  const std::size_t nt = t.times.size();

  detail::CsvWriter csv(dir / "twopoint.csv", cfg, {"t", "j", "S", "S_se"});
  for (std::size_t ti = 0; ti < nt; ++ti)
    for (std::int64_t j = -t.j_max; j <= t.j_max; ++j)
      csv.row({t.times[ti], static_cast<double>(j), t.value(ti, j), t.s_se[ti][static_cast<std::size_t>(j + t.j_max)]});

  const bool symmetric = cfg.p == cfg.q;
  const double exponent = symmetric ? 0.5 : 2.0 / 3.0;
  {
    detail::PlotWriter p(dir / "collapse.dat", cfg, "t scaled_j scaled_S");
    for (std::size_t ti = 1; ti < nt; ++ti) {
      const double sc = std::pow(t.times[ti], exponent);
      for (std::int64_t j = -t.j_max; j <= t.j_max; ++j)
        p.row({t.times[ti], (j - v * t.times[ti]) / sc, t.value(ti, j) * sc});
    }
    write_gnuplot(dir / "plot.gp",
                  "set terminal svg size 800,600\nset output 'collapse.svg'\nset xlabel 'scaled j'\n"
                  "set ylabel 'scaled S'\nplot 'collapse.dat' u 2:3 w p t 'S(j,t)'\n");
  }

  std::vector<Check> checks;
  json summary;
  summary["chi"] = t.chi;
  const double chi_target = cfg.rho * (1.0 - cfg.rho);
  {
    std::vector<double> chi0;
    for (const auto& ring : t.per_ring) chi0.push_back(std::accumulate(ring[0].begin(), ring[0].end(), 0.0));
    const double se = stats::standard_error(chi0);
    checks.push_back(make_check("susceptibility chi at t=0", t.chi[0], chi_target, 3.0, "se", "Bernoulli measure", se));
    checks.push_back(make_check("S(0,0)", t.value(0, 0), chi_target, 3.0, "se", "Bernoulli measure",
                                t.s_se[0][static_cast<std::size_t>(t.j_max)]));
  }
  json widths = json::array();
  const double half_var_br = 0.5 * references().var_br;
  for (std::size_t ti = 1; ti < nt; ++ti) {
    const auto w = obs::two_point_width(t, ti, v * t.times[ti], cfg.window_factor);
    json e{{"t", t.times[ti]}, {"width", w.width}, {"se", w.se}, {"window", w.window}};
    // width = (Gamma t)^{2/3} int|x| f_KPZ, with int|x| f_KPZ = Var(xi_BR)/2.
    if (!symmetric) e["gamma_empirical"] = std::pow(w.width / half_var_br, 1.5) / t.times[ti];
    widths.push_back(e);
  }
  summary["widths"] = widths;
  if (nt >= 3) {
    const auto r = obs::width_ratio(t, nt - 2, nt - 1, cfg.window_factor, v);
    const double target = std::pow(t.times[nt - 1] / t.times[nt - 2], exponent);
    checks.push_back(make_check(symmetric ? "width ratio (diffusive)" : "width ratio (KPZ)", r.width, target,
                                symmetric ? kTwoPointSymRelTol : kTwoPointAsymRelTol, "rel",
                                symmetric ? "diffusive broadening" : "KPZ scaling", r.se));
    summary["width_ratio"] = json{{"value", r.width}, {"se", r.se}, {"target", target}};
  }
  return {checks, summary};
}

// ------------------------------------------------------------------ sum-rule

// Ring indices of the S(j,t) ensemble start here, disjoint from the J trials.
constexpr std::uint64_t kSumRuleRingOffset = 1ull << 40;

detail::Finalized finalize_sum_rule(const ExperimentConfig& cfg, const fs::path& dir) {
  const std::size_t nt = cfg.times.size();
  const auto rows = ensemble_rows(cfg, dir, nt);
  std::vector<std::vector<double>> J(nt);
  for (const auto& r : rows)
    for (std::size_t k = 0; k < nt; ++k) J[k].push_back(r[k + 2]);

  // S(j,t) over the same number of independent rings, aggregated in batches.
  const std::uint64_t batches = std::min<std::uint64_t>(100, cfg.trials / 2);
  obs::TwoPointOptions opt;
  opt.times = cfg.times;
  opt.j_max = cfg.j_max;
  opt.origins = cfg.origins;
  opt.origin_spacing = cfg.origin_spacing;
  const sim::ModelSpec model{cfg.p, cfg.q};
  obs::TwoPointTable table;
  table.times = cfg.times;
  table.j_max = cfg.j_max;
  table.samples = cfg.trials;
  const std::size_t nj = static_cast<std::size_t>(2 * cfg.j_max + 1);
  table.s.assign(nt, std::vector<double>(nj, 0.0));
  std::uint64_t first = 0;
  for (std::uint64_t b = 0; b < batches; ++b) {
    const std::uint64_t size = cfg.trials / batches + (b < cfg.trials % batches ? 1 : 0);
    const auto part = obs::two_point_function(model, cfg.rho, cfg.ring_size, size, kSumRuleRingOffset + first,
                                              cfg.master_seed, opt);
    first += size;
    for (std::size_t ti = 0; ti < nt; ++ti)
      for (std::size_t k = 0; k < nj; ++k) table.s[ti][k] += part.s[ti][k] * static_cast<double>(size) / cfg.trials;
    table.per_ring.push_back(part.s);
  }
  table.s_se.assign(nt, std::vector<double>(nj, 0.0));
  for (std::size_t ti = 0; ti < nt; ++ti) table.chi.push_back(std::accumulate(table.s[ti].begin(), table.s[ti].end(), 0.0));

  detail::CsvWriter csv(dir / "sumrule.csv", cfg,
                        {"t", "var_J", "var_J_se", "rhs", "residual", "residual_se", "edge_mass"});
  std::vector<Check> checks;
  json per_time = json::array();
  for (std::size_t ti = 0; ti < nt; ++ti) {
    const double var = stats::variance(J[ti]);
    const double se = variance_se(J[ti]);
    const auto r = obs::sum_rule_residual(var, se, table, ti, 0, 0);
    csv.row({cfg.times[ti], var, se, r.rhs, r.residual, r.se, r.edge_mass});
    per_time.push_back(json{{"t", cfg.times[ti]}, {"var_J", var}, {"var_J_se", se}, {"rhs", r.rhs},
                            {"residual", r.residual}, {"se", r.se}, {"edge_mass", r.edge_mass},
                            {"truncation_warning", r.truncation_warning}});
    if (cfg.times[ti] == 0.0)
      checks.push_back(make_check("residual at t=0", r.residual, 0.0, 0.0, "abs", "both sides vanish"));
    else
      checks.push_back(make_check("sum-rule residual at t=" + detail::format_number(cfg.times[ti]), r.residual, 0.0,
                                  kSumRuleSe, "se", "sum rule", r.se));
  }
  json summary{{"per_time", per_time}, {"rings", cfg.trials}, {"batches", batches}};
  return {checks, summary};
}

// --------------------------------------------------------------- ray-current

detail::Finalized finalize_ray(const ExperimentConfig& cfg, const fs::path& dir) {
  const sim::ModelSpec model{cfg.p, cfg.q};
  const auto r = obs::ray_current_series(model, cfg.rho, cfg.velocity, cfg.ring_size, cfg.y_max, cfg.lag_max,
                                         cfg.trials, 0, cfg.master_seed);
  detail::CsvWriter csv(dir / "ray.csv", cfg, {"lag", "cov", "cov_se", "partial_sum", "partial_sum_se"});
  for (std::size_t d = 0; d < r.lag.size(); ++d)
    csv.row({r.lag[d], r.cov[d], r.cov_se[d], r.partial_sum[d], r.partial_sum_se[d]});
  std::vector<double> x(r.lag.begin() + 1, r.lag.end()), y(r.cov.begin() + 1, r.cov.end());
  const auto free_fit = obs::fit_decay(x, y, cfg.fit_lo, cfg.fit_hi, std::nullopt);
  const auto fixed_fit = obs::fit_decay(x, y, cfg.fit_lo, cfg.fit_hi, -4.0 / 3.0);
  const double tail_sum = 2.0 * power_tail(cfg.lag_max, 4.0 / 3.0);
  const double tail = fixed_fit.prefactor * tail_sum;
  const double total = r.partial_sum.back() + tail;
  const double total_se = std::hypot(r.partial_sum_se.back(), fixed_fit.prefactor_se * tail_sum);
  {
    detail::PlotWriter p(dir / "ray.dat", cfg, "lag minus_cov cov_se fit");
    for (std::size_t d = 1; d < r.lag.size(); ++d)
      p.row({r.lag[d], -r.cov[d], r.cov_se[d], -fixed_fit.prefactor * std::pow(r.lag[d], -4.0 / 3.0)});
    write_gnuplot(dir / "plot.gp",
                  "set terminal svg size 800,600\nset output 'ray.svg'\nset logscale xy\nset xlabel 'j'\n"
                  "set ylabel '-Cov(X_0, X_j)'\nplot 'ray.dat' u 1:2:3 w yerrorbars t 'estimate', '' u 1:4 w l t 'fit'\n");
  }
  std::vector<Check> checks;
  checks.push_back(make_check("staircase identity failures", static_cast<double>(r.staircase_failures), 0.0, 0.5,
                              "below", "telescoping identity"));
  checks.push_back(make_check("staircase identity evaluated", r.staircase_checks > 0 ? 1.0 : 0.0, 1.0, 0.0, "true",
                              "telescoping identity"));
  checks.push_back(make_check("tail log-log slope", free_fit.exponent, -4.0 / 3.0, kRaySlopeTol, "abs",
                              "ray covariance decay", free_fit.exponent_se));
  checks.push_back(make_check("sum of Cov(X_0, X_j) with fitted tail", total, 0.0, kRaySumSe, "se",
                              "ray covariances sum to 0", total_se));
  checks.push_back(make_check("partial sum |j| <= lag_max (no tail)", r.partial_sum.back(), 0.0, kRaySumSe, "se",
                              "ray covariances sum to 0", r.partial_sum_se.back(), false));
  const double v_char = (cfg.p - cfg.q) * (1.0 - 2.0 * cfg.rho);
  json summary{{"mean_x", r.mean_x},
               {"staircase_checks", r.staircase_checks},
               {"staircase_failures", r.staircase_failures},
               {"free_fit", report_json(free_fit)},
               {"fixed_fit", report_json(fixed_fit)},
               {"partial_sum", r.partial_sum.back()},
               {"tail_estimate", tail},
               {"total", total},
               {"total_se", total_se},
               {"characteristic_velocity", v_char}};
  return {checks, summary};
}

// ----------------------------------------------------------------- lpp-fluct

detail::Finalized finalize_lpp(const ExperimentConfig& cfg, const fs::path& dir) {
  const auto rows = ensemble_rows(cfg, dir, 2);
  std::vector<double> scaled;
  for (const auto& r : rows) scaled.push_back(r[3]);
  const References& ref = references();
  const double var = stats::variance(scaled), var_se = variance_se(scaled);
  const double mean = stats::mean(scaled), mean_se = stats::standard_error(scaled);
  double target = ref.var_gue;
  std::string name = "Var(xi_GUE)";
  if (cfg.geometry == "point-to-line") {
    target = std::pow(2.0, -4.0 / 3.0) * ref.var_goe;
    name = "2^{-4/3} Var(xi_GOE)";
  } else if (cfg.geometry == "stationary") {
    target = ref.var_br;
    name = "Var(xi_BR)";
  }
  std::vector<Check> checks;
  checks.push_back(make_check("scaled variance vs " + name, var, target, kVarRelTol, "rel", "Fredholm constants", var_se));
  if (cfg.geometry == "stationary")
    checks.push_back(make_check("stationary scaled mean", mean, 0.0, kLppMeanSe, "se", "xi_BR has mean zero", mean_se));
  {
    // Histogram of the scaled sample on [-6, 6].
    detail::PlotWriter p(dir / "histogram.dat", cfg, "bin_center density");
    const int bins = 60;
    std::vector<double> count(bins, 0.0);
    for (double s : scaled) {
      const int b = static_cast<int>(std::floor((s + 6.0) / 12.0 * bins));
      if (b >= 0 && b < bins) count[b] += 1.0;
    }
    for (int b = 0; b < bins; ++b)
      p.row({-6.0 + (b + 0.5) * 12.0 / bins, count[b] / (scaled.size() * 12.0 / bins)});
  }
  json summary{{"mean", mean}, {"mean_se", mean_se}, {"variance", var}, {"variance_se", var_se},
               {"variance_target", target}, {"n", cfg.n}, {"geometry", cfg.geometry}};
  return {checks, summary};
}

// ----------------------------------------------------------------- fredholm

detail::Finalized finalize_fredholm(const ExperimentConfig& cfg, const fs::path& dir, bool tables) {
  using namespace fredholm;
  const auto q = CheckedQuadrature::gate(60, 14.0);
  const auto q2 = CheckedQuadrature::gate(120, 18.0);
  const SGrid grid;
  const auto gue = tracy_widom_gue(grid, q), goe = tracy_widom_goe(grid, q), br = baik_rains_cdf(grid, q);
  const auto gue2 = tracy_widom_gue(grid, q2), goe2 = tracy_widom_goe(grid, q2);
  KpzOptions ko;
  ko.nodes = cfg.nodes;
  ko.w_max = cfg.w_max;
  const auto kpz = kpz_scaling_function(ko);
  const auto uc = universal_constants(gue, goe, br, kpz);

  if (tables) {
    const std::pair<const char*, const DistTable*> dists[] = {
        {"dist_gue.csv", &gue}, {"dist_goe.csv", &goe}, {"dist_br.csv", &br}};
    for (const auto& [name, d] : dists) {
      detail::CsvWriter csv(dir / name, cfg, {"s", "F", "density"});
      for (std::size_t i = 0; i < d->s.size(); ++i) csv.row({d->s[i], d->cdf[i], d->density[i]});
    }
    detail::CsvWriter f(dir / "fkpz.csv", cfg, {"w", "f_kpz", "variance", "flagged"});
    for (std::size_t i = 0; i < kpz.w.size(); ++i)
      f.row({kpz.w[i], kpz.f_kpz[i], kpz.variance[i], kpz.flagged[i] ? 1.0 : 0.0});
    write_gnuplot(dir / "plot.gp",
                  "set terminal svg size 800,600\nset datafile separator ','\nset output 'dist.svg'\n"
                  "set xlabel 's'\nplot 'dist_gue.csv' u 1:3 w l t 'GUE density', 'dist_goe.csv' u 1:3 w l t 'GOE "
                  "density', 'dist_br.csv' u 1:3 w l t 'BR density'\nset output 'fkpz.svg'\nset xlabel 'w'\n"
                  "plot 'fkpz.csv' u 1:2 w lp t 'f_KPZ'\n");
  }

  std::vector<Check> checks;
  checks.push_back(make_check("Var(xi_GUE)", uc.var_gue, 0.8132, kFredholmVarTol, "abs", "Tracy-Widom GUE"));
  checks.push_back(make_check("Var(xi_GUE) two-resolution change", std::fabs(gue2.variance - gue.variance), 0.0,
                              kFredholmVarTol, "below", "resolution robustness"));
  checks.push_back(make_check("Var(xi_GOE)", uc.var_goe, 1.6078, kFredholmVarTol, "abs", "Tracy-Widom GOE"));
  checks.push_back(make_check("Var(xi_GOE) two-resolution change", std::fabs(goe2.variance - goe.variance), 0.0,
                              kFredholmVarTol, "below", "resolution robustness"));
  checks.push_back(make_check("mean(xi_BR)", uc.mean_br, 0.0, kFredholmVarTol, "abs", "xi_BR has mean zero"));
  checks.push_back(make_check("c^step", uc.c_step, 0.707, kFredholmCTol, "abs", "c^step = 0.707"));
  checks.push_back(make_check("c^flat", uc.c_flat, 0.901, kFredholmCTol, "abs", "c^flat = 0.901"));
  checks.push_back(make_check("c0", uc.c0, 0.02013, kC0RelTol, "rel", "c0 = 0.02013"));
  checks.push_back(make_check("prefactor identity: 2^{8/3} Gamma^{2/3} chi int|x|f_KPZ vs Var(xi_BR)", uc.prefactor_lhs,
                              uc.var_br, kIdentityRelTol, "rel", "prefactor identity"));
  checks.push_back(make_check("int|w| f_KPZ vs Var(xi_BR)/2", uc.abs_moment_fkpz, 0.5 * uc.var_br, kIdentityRelTol,
                              "rel", "two-formula identity"));
  checks.push_back(make_check("int|w| f_KPZ vs quoted 0.287599", uc.abs_moment_fkpz, kQuotedAbsMoment,
                              kIdentityRelTol, "rel", "quoted value (factor-2 discrepancy)", 0.0, false));
  checks.push_back(make_check("int f_KPZ (normalization)", kpz.normalization, 1.0, 0.02, "rel", "normalization"));
  checks.push_back(make_check("min f_KPZ", *std::min_element(kpz.f_kpz.begin(), kpz.f_kpz.end()), 0.0, 1e-3, "abs",
                              "non-negativity slack", 0.0, false));
  checks.push_back(make_check("g(s,0) - g(s) max deviation", kpz.g_consistency, 0.0, 1e-6, "below", "g(s,0) = g(s)"));
  checks.push_back(make_check("CDF axioms (GUE, GOE, BR)",
                              satisfies_cdf_axioms(gue) && satisfies_cdf_axioms(goe) && satisfies_cdf_axioms(br) ? 1 : 0,
                              1.0, 0.0, "true", "CDF axioms"));

  {
    detail::CsvWriter csv(dir / "constants.csv", cfg, {"name", "value", "tolerance", "source"});
    auto row = [&](const std::string& name, double v, double tol, const std::string& src) {
      csv.text_row({name, detail::format_number(v), detail::format_number(tol), src});
    };
    row("var_gue", uc.var_gue, kFredholmVarTol, "Fredholm determinant (Airy kernel)");
    row("var_goe", uc.var_goe, kFredholmVarTol, "Fredholm determinant (Airy kernel)");
    row("var_br", uc.var_br, kFredholmVarTol, "d/ds F_GUE g");
    row("mean_gue", uc.mean_gue, kFredholmVarTol, "Fredholm determinant");
    row("mean_br", uc.mean_br, kFredholmVarTol, "d/ds F_GUE g");
    row("c_step", uc.c_step, kFredholmCTol, "Var(xi_BR)/(2 Var(xi_GUE))");
    row("c_flat", uc.c_flat, kFredholmCTol, "Var(xi_BR)/(2^{-1/3} Var(xi_GOE))");
    row("gamma", uc.gamma, 0.0, "adopted sqrt(2)");
    row("chi", uc.chi, 0.0, "rho(1-rho) at rho=1/2");
    row("abs_moment_fkpz", uc.abs_moment_fkpz, kIdentityRelTol * uc.abs_moment_fkpz, "f_KPZ table");
    row("c0", uc.c0, kC0RelTol * uc.c0, "(1/9) Gamma^{2/3} chi int|x| f_KPZ");
    row("prefactor_lhs", uc.prefactor_lhs, kIdentityRelTol * uc.var_br, "2^{8/3} Gamma^{2/3} chi int|x| f_KPZ");
  }

  json summary{{"var_gue", uc.var_gue},           {"var_goe", uc.var_goe},
               {"var_br", uc.var_br},             {"mean_gue", uc.mean_gue},
               {"mean_br", uc.mean_br},           {"c_step", uc.c_step},
               {"c_flat", uc.c_flat},             {"c0", uc.c0},
               {"abs_moment_fkpz", uc.abs_moment_fkpz}, {"half_var_br", 0.5 * uc.var_br},
               {"quoted_abs_moment", kQuotedAbsMoment}, {"prefactor_lhs", uc.prefactor_lhs},
               {"prefactor_rel_error", uc.prefactor_rel_error}, {"fkpz_normalization", kpz.normalization},
               {"var_gue_2x", gue2.variance},     {"var_goe_2x", goe2.variance}};
  return {checks, summary};
}

}  // namespace

const References& references() {
  static std::once_flag once;
  static References ref;
  std::call_once(once, [] {
    using namespace fredholm;
    const auto q = CheckedQuadrature::gate(60, 14.0);
    const SGrid grid;
    const auto gue = tracy_widom_gue(grid, q), goe = tracy_widom_goe(grid, q), br = baik_rains_cdf(grid, q);
    ref = {gue.variance,
           goe.variance,
           br.variance,
           br.mean,
           br.variance / (2.0 * gue.variance),
           br.variance / (std::pow(2.0, -1.0 / 3.0) * goe.variance)};
  });
  return ref;
}

double c0_reference() {
  static std::once_flag once;
  static double c0 = 0.0;
  std::call_once(once, [] {
    const auto kpz = fredholm::kpz_scaling_function();
    const double gamma = std::sqrt(2.0), chi = 0.25;
    c0 = std::pow(gamma, 2.0 / 3.0) * chi * kpz.abs_first_moment / 9.0;
  });
  return c0;
}

namespace detail {

Finalized finalize(const ExperimentConfig& cfg, const fs::path& dir) {
  switch (cfg.kind) {
    case Kind::CovarianceStep:
    case Kind::CovarianceFlat:
    case Kind::CovarianceStat:
      return finalize_covariance(cfg, dir);
    case Kind::CurrentCorr:
      return finalize_current(cfg, dir);
    case Kind::TwoPoint:
      return finalize_two_point(cfg, dir);
    case Kind::SumRule:
      return finalize_sum_rule(cfg, dir);
    case Kind::RayCurrent:
      return finalize_ray(cfg, dir);
    case Kind::LppFluct:
      return finalize_lpp(cfg, dir);
    case Kind::FredholmTables:
      return finalize_fredholm(cfg, dir, true);
    case Kind::Constants:
      return finalize_fredholm(cfg, dir, false);
  }
  throw std::logic_error("unhandled kind");
}

}  // namespace detail

}  // namespace kpz::exp

#include "kpz/fredholm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "kpz/airy.hpp"

namespace kpz::fredholm {

namespace {

// Below this det(I - K) the resolvent system is too ill-conditioned to trust.
constexpr double kConditioningFloor = 1e-14;

Eigen::VectorXd as_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// det(I - K W) and the LU used for resolvent solves.
struct Resolvent {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  double det;
};

Resolvent resolvent(const Eigen::MatrixXd& k, const Eigen::VectorXd& w) {
  const Eigen::Index n = k.rows();
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n) - k * w.asDiagonal();
  Resolvent r{Eigen::PartialPivLU<Eigen::MatrixXd>(m), 0.0};
  r.det = r.lu.determinant();
  return r;
}

std::vector<double> derivative4(const std::vector<double>& f, double h) {
  const std::size_t n = f.size();
  std::vector<double> d(n, 0.0);
  if (n < 5) throw std::invalid_argument("derivative4: need at least 5 points");
  for (std::size_t i = 2; i + 2 < n; ++i)
    d[i] = (-f[i + 2] + 8.0 * f[i + 1] - 8.0 * f[i - 1] + f[i - 2]) / (12.0 * h);
  auto fwd = [&](std::size_t i) {
    return (-25.0 * f[i] + 48.0 * f[i + 1] - 36.0 * f[i + 2] + 16.0 * f[i + 3] - 3.0 * f[i + 4]) / (12.0 * h);
  };
  auto bwd = [&](std::size_t i) {
    return (25.0 * f[i] - 48.0 * f[i - 1] + 36.0 * f[i - 2] - 16.0 * f[i - 3] + 3.0 * f[i - 4]) / (12.0 * h);
  };
  d[0] = fwd(0);
  d[1] = fwd(1);
  d[n - 1] = bwd(n - 1);
  d[n - 2] = bwd(n - 2);
  return d;
}

std::vector<double> grid_points(double lo, double step, std::size_t count) {
  std::vector<double> s(count);
  for (std::size_t i = 0; i < count; ++i) s[i] = lo + step * static_cast<double>(i);
  return s;
}

void finish_table(DistTable& t, double h) {
  t.max_decrease = 0.0;
  for (std::size_t i = 1; i < t.cdf.size(); ++i) t.max_decrease = std::max(t.max_decrease, t.cdf[i - 1] - t.cdf[i]);
  t.density_mass = simpson(t.density, h);
}

// Moments from a cdf table via integration by parts (no differentiation).
void moments_from_cdf(DistTable& t, double h) {
  const auto& s = t.s;
  const auto& f = t.cdf;
  std::vector<double> sf(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) sf[i] = s[i] * f[i];
  const double a = s.front(), b = s.back();
  const double m1 = b * f.back() - a * f.front() - simpson(f, h);
  const double m2 = b * b * f.back() - a * a * f.front() - 2.0 * simpson(sf, h);
  t.mean = m1;
  t.variance = m2 - m1 * m1;
}

// Moments of F = G' using G directly.
std::pair<double, double> moments_from_antiderivative(const std::vector<double>& s, const std::vector<double>& g,
                                                      const std::vector<double>& f, double h) {
  const double a = s.front(), b = s.back();
  const double m1 = b * f.back() - a * f.front() - (g.back() - g.front());
  const double m2 = b * b * f.back() - a * a * f.front() - 2.0 * (b * g.back() - a * g.front() - simpson(g, h));
  return {m1, m2};
}

std::size_t even_steps(double span, double step) {
  auto n = static_cast<std::size_t>(std::ceil(span / step - 1e-9));
  if (n % 2) ++n;
  return n;
}

}  // namespace

std::vector<double> SGrid::points() const {
  if (!(step > 0.0) || !(hi > lo)) throw std::invalid_argument("SGrid: need lo < hi and step > 0");
  return grid_points(lo, step, even_steps(hi - lo, step) + 1);
}

Eigen::MatrixXd airy_hankel(const Quadrature& q, double s) {
  const int n = q.size();
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) a(i, j) = a(j, i) = airy_ai_unchecked(q.nodes[i] + q.nodes[j] + s);
  return a;
}

Eigen::MatrixXd gue_kernel(const Quadrature& q, double s) {
  const Eigen::MatrixXd a = airy_hankel(q, s);
  return a * as_vector(q.weights).asDiagonal() * a;
}

double fredholm_det_raw(const KernelSpec& kernel, const Quadrature& q) {
  const Eigen::MatrixXd k = kernel.kind == KernelKind::GUE ? gue_kernel(q, kernel.s) : airy_hankel(q, kernel.s);
  const Eigen::VectorXd sw = as_vector(q.weights).cwiseSqrt();
  const Eigen::Index n = k.rows();
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n) - sw.asDiagonal() * k * sw.asDiagonal();
  return m.partialPivLu().determinant();
}

double fredholm_det(const KernelSpec& kernel, const CheckedQuadrature& q) {
  return fredholm_det_raw(kernel, q.rule());
}

bool satisfies_cdf_axioms(const DistTable& t, double slack) {
  if (t.cdf.empty()) return false;
  return t.max_decrease <= slack && t.cdf.front() < 1e-6 && t.cdf.back() > 1.0 - 1e-6 &&
         std::fabs(t.density_mass - 1.0) < 1e-4;
}

namespace {

DistTable determinant_table(const SGrid& grid, const CheckedQuadrature& q, KernelKind kind) {
  DistTable t;
  t.s = grid.points();
  t.cdf.resize(t.s.size());
  for (std::size_t i = 0; i < t.s.size(); ++i) t.cdf[i] = fredholm_det({kind, t.s[i]}, q);
  t.density = derivative4(t.cdf, grid.step);
  moments_from_cdf(t, grid.step);
  finish_table(t, grid.step);
  return t;
}

}  // namespace

DistTable tracy_widom_gue(const SGrid& grid, const CheckedQuadrature& q) {
  return determinant_table(grid, q, KernelKind::GUE);
}

DistTable tracy_widom_goe(const SGrid& grid, const CheckedQuadrature& q) {
  return determinant_table(grid, q, KernelKind::GOE);
}

double baik_rains_g(double s, const Quadrature& q) {
  const Eigen::VectorXd w = as_vector(q.weights);
  const Eigen::MatrixXd b = airy_hankel(q, s);
  const Eigen::MatrixXd k = b * w.asDiagonal() * b;
  const Eigen::VectorXd b1 = b * w;  // (B1)(x) = int Ai(x+y+s) dy
  const Eigen::VectorXd psi = Eigen::VectorXd::Ones(w.size()) - b1;
  const Eigen::VectorXd rho_psi = resolvent(k, w).lu.solve(psi);
  const Eigen::VectorXd b_psi = b * w.asDiagonal() * psi;
  return s + w.dot(b1) + (w.array() * b_psi.array() * rho_psi.array()).sum();
}

namespace {

struct KpzPoint {
  double det;
  double g;
};

KpzPoint kpz_point(double s, double w, const Quadrature& q) {
  const Eigen::Index n = q.size();
  const Eigen::VectorXd wt = as_vector(q.weights);
  const Eigen::VectorXd x = as_vector(q.nodes);
  const Eigen::MatrixXd a = airy_hankel(q, s);
  const Eigen::MatrixXd k = a * wt.asDiagonal() * a;
  const Eigen::VectorXd e = (w * x).array().exp();
  const double w3 = w * w * w / 3.0;

  // Lx_i = int_0^M e^{wz} Ai(z + x_i + s) dz
  const Eigen::VectorXd lx = a * (wt.array() * e.array()).matrix();
  Eigen::VectorXd psi(n), inner(n), ai_shift(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    psi(i) = std::exp(w3 - w * (x(i) + s)) - lx(i);
    inner(i) = std::exp(w3 - w * x(i)) - std::exp(w * s) * lx(i);
    ai_shift(i) = airy_ai_unchecked(x(i) + s);
  }
  const Eigen::VectorXd phi = a * (wt.array() * inner.array()).matrix();
  const double t1 =
      (s - w * w) + std::exp(w * s - w3) * (wt.array() * x.array() * e.array() * ai_shift.array()).sum();
  Resolvent r = resolvent(k, wt);
  const Eigen::VectorXd z = r.lu.solve(psi);
  return {r.det, t1 + std::exp(-w3) * (wt.array() * phi.array() * z.array()).sum()};
}

}  // namespace

double kpz_g(double s, double w, const Quadrature& q) {
  if (w < 0.0) throw std::invalid_argument("kpz_g: w must be non-negative");
  return kpz_point(s, w, q).g;
}

DistTable baik_rains_cdf(const SGrid& grid, const CheckedQuadrature& cq) {
  const Quadrature& q = cq.rule();
  DistTable t;
  t.s = grid.points();
  const std::size_t m = t.s.size();
  std::vector<double> g(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double det = fredholm_det({KernelKind::GUE, t.s[i]}, cq);
    if (det < kConditioningFloor) {
      g[i] = 0.0;
      t.left_truncated = true;
      t.truncated_below = t.s[i];
      continue;
    }
    g[i] = det * baik_rains_g(t.s[i], q);
  }
  t.cdf = derivative4(g, grid.step);
  t.density = derivative4(t.cdf, grid.step);
  auto [m1, m2] = moments_from_antiderivative(t.s, g, t.cdf, grid.step);
  t.mean = m1;
  t.variance = m2 - m1 * m1;
  finish_table(t, grid.step);
  return t;
}

double kpz_truncation(double w) { return 14.0 + w * w + 6.0 * w; }

namespace {

struct VPoint {
  double mean;
  double second;
  bool flagged;
};

VPoint kpz_variance_point(double w, const KpzOptions& opt, double extra_truncation = 0.0) {
  const Quadrature q = Quadrature::gauss_legendre(opt.nodes, kpz_truncation(w) + extra_truncation);
  const double lo = -10.0 - 3.0 * w;
  const double hi = 8.0 + 4.0 * w;
  const std::size_t steps = even_steps(hi - lo, opt.s_step);
  const std::vector<double> s = grid_points(lo, opt.s_step, steps + 1);
  std::vector<double> g(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const KpzPoint p = kpz_point(s[i] + w * w, w, q);
    g[i] = p.det < kConditioningFloor ? 0.0 : p.det * p.g;
  }
  const std::vector<double> f = derivative4(g, opt.s_step);
  bool flagged = false;
  for (std::size_t i = 1; i < f.size(); ++i)
    if (f[i] < f[i - 1] - opt.monotone_slack) flagged = true;
  if (f.front() > 1e-6 || f.back() < 1.0 - 1e-6) flagged = true;
  auto [m1, m2] = moments_from_antiderivative(s, g, f, opt.s_step);
  return {m1, m2, flagged};
}

// Trapezoid on the unflagged subset, Simpson when nothing is excluded.
double integrate_masked(const std::vector<double>& x, const std::vector<double>& y, const std::vector<bool>& bad,
                        double h) {
  if (std::none_of(bad.begin(), bad.end(), [](bool b) { return b; }) && y.size() % 2 == 1) return simpson(y, h);
  double acc = 0.0;
  int prev = -1;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (bad[i]) continue;
    if (prev >= 0) acc += 0.5 * (y[i] + y[prev]) * (x[i] - x[prev]);
    prev = static_cast<int>(i);
  }
  return acc;
}

}  // namespace

KpzMoments kpz_moments(double w, const KpzOptions& opt, double extra_truncation) {
  const VPoint p = kpz_variance_point(w, opt, extra_truncation);
  return {p.mean, p.second, p.flagged};
}

KpzScalingTable kpz_scaling_function(const KpzOptions& opt) {
  const double h = opt.w_step;
  const int k_max = static_cast<int>(std::lround(opt.w_max / h));
  if (std::fabs(k_max * h - opt.w_max) > 1e-12 || k_max < 2)
    throw std::invalid_argument("kpz_scaling_function: w_max must be a multiple of w_step");
  // V is needed two steps beyond w_max for the 5-point stencil; V(-w) = V(w).
  std::vector<VPoint> v(k_max + 3);
  for (int k = 0; k <= k_max + 2; ++k) v[k] = kpz_variance_point(k * h, opt);
  auto vat = [&](int k) { return v[std::abs(k)].second; };
  auto bad = [&](int k) { return v[std::abs(k)].flagged; };

  KpzScalingTable t;
  for (int k = 0; k <= k_max; ++k) {
    t.w.push_back(k * h);
    t.variance.push_back(vat(k));
    t.mean.push_back(v[k].mean);
    const double d2 = (-vat(k + 2) + 16.0 * vat(k + 1) - 30.0 * vat(k) + 16.0 * vat(k - 1) - vat(k - 2)) / (12.0 * h * h);
    t.f_kpz.push_back(0.25 * d2);
    t.flagged.push_back(bad(k - 2) || bad(k - 1) || bad(k) || bad(k + 1) || bad(k + 2));
  }
  std::vector<double> wf(t.w.size()), w2f(t.w.size());
  for (std::size_t i = 0; i < t.w.size(); ++i) {
    wf[i] = t.w[i] * t.f_kpz[i];
    w2f[i] = t.w[i] * t.w[i] * t.f_kpz[i];
  }
  // Even function: integrals over R are twice the half-line values.
  t.normalization = 2.0 * integrate_masked(t.w, t.f_kpz, t.flagged, h);
  t.abs_first_moment = 2.0 * integrate_masked(t.w, wf, t.flagged, h);
  t.second_moment = 2.0 * integrate_masked(t.w, w2f, t.flagged, h);

  // Both sides truncate differently at very negative s, so compare on a rule
  // that keeps x + y + s well inside the Airy decay for the whole grid.
  const SGrid sg{};
  const Quadrature q = Quadrature::gauss_legendre(80, 14.0 - sg.lo);
  for (double s : sg.points())
    t.g_consistency = std::max(t.g_consistency, std::fabs(kpz_g(s, 0.0, q) - baik_rains_g(s, q)));
  return t;
}

UniversalConstants universal_constants(const DistTable& gue, const DistTable& goe, const DistTable& br,
                                       const KpzScalingTable& kpz, double gamma, double chi) {
  UniversalConstants c;
  c.var_gue = gue.variance;
  c.var_goe = goe.variance;
  c.var_br = br.variance;
  c.mean_gue = gue.mean;
  c.mean_br = br.mean;
  c.c_step = br.variance / (2.0 * gue.variance);
  c.c_flat = br.variance / (std::pow(2.0, -1.0 / 3.0) * goe.variance);
  c.gamma = gamma;
  c.chi = chi;
  c.abs_moment_fkpz = kpz.abs_first_moment;
  const double g23 = std::pow(gamma, 2.0 / 3.0);
  c.c0 = g23 * chi * kpz.abs_first_moment / 9.0;
  c.prefactor_lhs = std::pow(2.0, 8.0 / 3.0) * g23 * chi * kpz.abs_first_moment;
  c.prefactor_rel_error = std::fabs(c.prefactor_lhs - br.variance) / br.variance;
  return c;
}

}  // namespace kpz::fredholm

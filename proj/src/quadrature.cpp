#include "kpz/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kpz/fredholm.hpp"

namespace kpz::fredholm {

Quadrature Quadrature::gauss_legendre(int n, double truncation) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: need at least one node");
  if (!(truncation > 0.0)) throw std::invalid_argument("gauss_legendre: truncation must be positive");
  Quadrature q;
  q.truncation = truncation;
  q.nodes.resize(n);
  q.weights.resize(n);
  const double half = 0.5 * truncation;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::fabs(dx) < 1e-16) break;
    }
    // recompute derivative at the converged root
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    if (n == 1) p0 = 1.0;
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    // ascending order on [0, M]
    q.nodes[i] = half * (1.0 - x);
    q.weights[i] = half * w;
    q.nodes[n - 1 - i] = half * (1.0 + x);
    q.weights[n - 1 - i] = half * w;
  }
  return q;
}

namespace {

constexpr double kProbeShifts[] = {-6.0, -4.0, -2.0, 0.0, 2.0, 4.0};

}  // namespace

GateReport CheckedQuadrature::probe(int n, double truncation, double tolerance) {
  const Quadrature coarse = Quadrature::gauss_legendre(n, truncation);
  const Quadrature fine = Quadrature::gauss_legendre(2 * n, truncation + 4.0);
  GateReport r;
  r.tolerance = tolerance;
  for (KernelKind kind : {KernelKind::GUE, KernelKind::GOE}) {
    for (double s : kProbeShifts) {
      const double d = std::fabs(fredholm_det_raw({kind, s}, coarse) - fredholm_det_raw({kind, s}, fine));
      if (!(d <= r.max_change)) {
        r.max_change = d;
        r.worst_s = s;
      }
    }
  }
  r.passed = r.max_change < tolerance;
  return r;
}

CheckedQuadrature CheckedQuadrature::gate(int n, double truncation, double tolerance) {
  GateReport r = probe(n, truncation, tolerance);
  if (!r.passed)
    throw ConvergenceError("quadrature n=" + std::to_string(n) + " M=" + std::to_string(truncation) +
                           " not converged: det changes by " + std::to_string(r.max_change) + " at s=" +
                           std::to_string(r.worst_s) + " under refinement (tolerance " +
                           std::to_string(tolerance) + ")");
  return CheckedQuadrature(Quadrature::gauss_legendre(n, truncation), r);
}

double simpson(std::span<const double> v, double h) {
  const std::size_t n = v.size();
  if (n < 3 || n % 2 == 0) throw std::invalid_argument("simpson: need an odd number of points >= 3");
  double odd = 0.0, even = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) (i % 2 ? odd : even) += v[i];
  return h / 3.0 * (v.front() + v.back() + 4.0 * odd + 2.0 * even);
}

}  // namespace kpz::fredholm

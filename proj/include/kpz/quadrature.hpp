#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kpz::fredholm {

/// Gauss-Legendre rule mapped to [0, M].
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
  double truncation = 0.0;

  static Quadrature gauss_legendre(int n, double truncation);
  int size() const { return static_cast<int>(nodes.size()); }
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GateReport {
  double max_change = 0.0;  // largest |det(n, M) - det(2n, M+4)| over the probes
  double worst_s = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// A quadrature that has passed the resolution gate: doubling the node count
/// and extending M by 4 moves det(I - K) at every probe shift by less than the
/// tolerance, for both Airy kernels. Only obtainable through `gate`.
class CheckedQuadrature {
 public:
  static CheckedQuadrature gate(int n, double truncation, double tolerance = 1e-8);
  /// Same as gate() but returns the report instead of throwing.
  static GateReport probe(int n, double truncation, double tolerance = 1e-8);

  const Quadrature& rule() const { return rule_; }
  const GateReport& report() const { return report_; }

 private:
  CheckedQuadrature(Quadrature q, GateReport r) : rule_(std::move(q)), report_(r) {}
  Quadrature rule_;
  GateReport report_;
};

/// Composite Simpson rule on a uniform grid with an odd number of points.
double simpson(std::span<const double> values, double step);

}  // namespace kpz::fredholm

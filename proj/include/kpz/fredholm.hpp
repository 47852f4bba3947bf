#pragma once

#include <Eigen/Dense>

#include <vector>

#include "kpz/quadrature.hpp"

namespace kpz::fredholm {

enum class KernelKind { GUE, GOE };

struct KernelSpec {
  KernelKind kind = KernelKind::GUE;
  double s = 0.0;
};

/// Airy Hankel matrix A_ij = Ai(x_i + x_j + s) on the quadrature nodes.
Eigen::MatrixXd airy_hankel(const Quadrature& q, double s);

/// Discretized K_{2,s}(x_i, x_j) = sum_k Ai(x_i+s+l_k) w_k Ai(l_k+x_j+s), a Gram product.
Eigen::MatrixXd gue_kernel(const Quadrature& q, double s);

/// det(I - K) on L^2(R_+) by the Nystrom method, unchecked resolution.
double fredholm_det_raw(const KernelSpec& kernel, const Quadrature& q);

/// det(I - K) on L^2(R_+) with a gated quadrature.
double fredholm_det(const KernelSpec& kernel, const CheckedQuadrature& q);

/// Uniform grid [lo, hi] with the given step.
struct SGrid {
  double lo = -8.0;
  double hi = 8.0;
  double step = 0.05;
  std::vector<double> points() const;
};

struct DistTable {
  std::vector<double> s;
  std::vector<double> cdf;
  std::vector<double> density;
  double mean = 0.0;
  double variance = 0.0;
  // Points where det(I - K) fell below the conditioning floor are set to 0.
  bool left_truncated = false;
  double truncated_below = 0.0;
  // Largest decrease between consecutive cdf values (0 for a monotone table).
  double max_decrease = 0.0;
  double density_mass = 0.0;
};

/// Checks monotonicity within `slack`, the tail limits and density mass.
bool satisfies_cdf_axioms(const DistTable& t, double slack = 1e-8);

DistTable tracy_widom_gue(const SGrid& grid, const CheckedQuadrature& q);
DistTable tracy_widom_goe(const SGrid& grid, const CheckedQuadrature& q);

/// g(s) of the stationary distribution: s + <1,B1> + <B Psi, (I - K_2)^{-1} Psi>
/// with B(x,y) = Ai(x+y+s) and Psi = 1 - B1.
double baik_rains_g(double s, const Quadrature& q);

/// g(s, w) for w >= 0. The half-line integrals over z < 0 are rewritten with
/// int_R e^{wz} Ai(z+c) dz = e^{w^3/3 - wc}, leaving e^{wz}-weighted integrals
/// over R_+ on the nodes of `q`.
double kpz_g(double s, double w, const Quadrature& q);

/// F_BR(s) = d/ds (F_GUE(s) g(s)) by 4th-order differences.
DistTable baik_rains_cdf(const SGrid& grid, const CheckedQuadrature& q);

struct KpzOptions {
  double w_max = 3.0;
  double w_step = 0.125;
  double s_step = 0.05;
  int nodes = 70;
  double monotone_slack = 1e-7;
};

struct KpzScalingTable {
  std::vector<double> w;
  std::vector<double> f_kpz;
  std::vector<double> variance;  // V(w) = second moment of F_w
  std::vector<double> mean;      // first moment of F_w, ~0
  std::vector<bool> flagged;     // F_w non-monotone beyond slack
  double normalization = 0.0;    // int_R f_KPZ
  double abs_first_moment = 0.0; // int_R |w| f_KPZ
  double second_moment = 0.0;    // int_R w^2 f_KPZ
  double g_consistency = 0.0;    // max |g(s,0) - g(s)| over the s grid
};

/// Truncation used for the w-dependent quadrature: the e^{wz} weighted Airy
/// integrands peak near z = w^2 - s and decay like exp(-2/3 z^{3/2}).
double kpz_truncation(double w);

KpzScalingTable kpz_scaling_function(const KpzOptions& opt = {});

struct KpzMoments {
  double mean = 0.0;
  double second = 0.0;  // V(w)
  bool flagged = false;
};

/// First and second moment of F_w for a single w, with the truncation
/// optionally extended (used for resolution checks).
KpzMoments kpz_moments(double w, const KpzOptions& opt = {}, double extra_truncation = 0.0);

struct UniversalConstants {
  double var_gue = 0.0;
  double var_goe = 0.0;
  double var_br = 0.0;
  double mean_gue = 0.0;
  double mean_br = 0.0;
  double c_step = 0.0;
  double c_flat = 0.0;
  double gamma = 0.0;
  double chi = 0.0;
  double abs_moment_fkpz = 0.0;
  double c0 = 0.0;
  double prefactor_lhs = 0.0;  // 2^{8/3} Gamma^{2/3} chi int|x| f_KPZ
  double prefactor_rel_error = 0.0;
};

UniversalConstants universal_constants(const DistTable& gue, const DistTable& goe, const DistTable& br,
                                       const KpzScalingTable& kpz, double gamma = 1.4142135623730951,
                                       double chi = 0.25);

}  // namespace kpz::fredholm

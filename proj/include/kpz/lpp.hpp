#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "kpz/rng.hpp"

namespace kpz::lpp {

struct Point {
  int i = 0;
  int j = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

enum class GeometryKind { PointToPoint, PointToLine, StationaryBoundary };

/// PointToPoint: cells [0,n]^2, source (0,0).
/// PointToLine: cells {-n <= i,j <= n, i+j >= 0}, source the antidiagonal i+j = 0.
/// StationaryBoundary: cells [-1,n]^2; corner (-1,-1) has weight 0, the row
/// j = -1 and column i = -1 carry boundary weights, source the corner.
struct Geometry {
  GeometryKind kind = GeometryKind::PointToPoint;
  int n = 1;
  double boundary_mean = 2.0;

  void validate() const;
};

struct SourceSet {
  enum class Kind { Point, Antidiagonal };
  Kind kind = Kind::Point;
  Point point;
  int diagonal = 0;  // i + j on the antidiagonal source

  static SourceSet at(Point p) { return {Kind::Point, p, 0}; }
  static SourceSet antidiagonal(int k) { return {Kind::Antidiagonal, {}, k}; }
  bool contains(Point p) const {
    return kind == Kind::Point ? p == point : p.i + p.j == diagonal;
  }
  /// Whether p can be reached from the source by an up-right path.
  bool reaches(Point p) const {
    return kind == Kind::Point ? (p.i >= point.i && p.j >= point.j) : p.i + p.j >= diagonal;
  }
};

/// Weight field on a rectangle [i0, i0+width) x [j0, j0+height), optionally
/// restricted to i + j >= min_diagonal. Cells outside the region do not exist.
class LppGrid {
 public:
  LppGrid() = default;
  LppGrid(int i0, int j0, int width, int height, std::optional<int> min_diagonal = std::nullopt);

  /// Crafted field: rows[j - j0][i - i0].
  static LppGrid from_rows(int i0, int j0, const std::vector<std::vector<double>>& rows);

  bool in_region(Point p) const {
    return p.i >= i0_ && p.i < i0_ + width_ && p.j >= j0_ && p.j < j0_ + height_ &&
           (!min_diagonal_ || p.i + p.j >= *min_diagonal_);
  }
  double weight(Point p) const { return w_[offset(p)]; }
  void set_weight(Point p, double v);

  int i0() const { return i0_; }
  int j0() const { return j0_; }
  int width() const { return width_; }
  int height() const { return height_; }
  std::optional<int> min_diagonal() const { return min_diagonal_; }
  std::size_t offset(Point p) const {
    return static_cast<std::size_t>(p.j - j0_) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(p.i - i0_);
  }

  std::optional<Geometry> geometry;
  std::optional<RngSeed> seed;

 private:
  int i0_ = 0, j0_ = 0, width_ = 0, height_ = 0;
  std::optional<int> min_diagonal_;
  std::vector<double> w_;
};

struct PassageResult {
  double value = 0.0;
  std::vector<Point> path;  // source point first, target last
};

/// Source set and default target of a geometry.
SourceSet default_source(const Geometry& g);
Point default_target(const Geometry& g);

/// Samples every cell of the geometry row by row (j outer, i inner).
LppGrid sample_grid(const Geometry& geom, const RngSeed& seed);

/// Passage times from the source to every cell (NaN where unreachable). The
/// source cells hold 0: their own weight is never counted.
std::vector<double> passage_table(const LppGrid& grid, const SourceSet& source);

/// Maximal weight over up-right paths from the source to the target,
/// excluding the starting point and including the target. Ties prefer the
/// predecessor below, (i, j-1). Throws std::domain_error if unreachable.
PassageResult last_passage(const LppGrid& grid, const SourceSet& source, Point target, bool with_path = true);

/// Path checks: up-right steps, starts in the source, ends at the target and
/// carries the stated value (exact summation in path order).
bool valid_maximizer(const LppGrid& grid, const SourceSet& source, Point target, const PassageResult& r);

struct DecompositionReport {
  double lhs = 0.0;           // L(source -> target)
  double rhs = 0.0;           // max_I over the antidiagonal, DP seeded with L(source -> I)
  double rhs_plain = 0.0;     // max_I of L(source -> I) + L(I -> target) as separate numbers
  double plain_discrepancy = 0.0;
  Point argmax;               // where the maximizer crosses the antidiagonal
  bool exact = false;         // lhs == rhs bitwise
};

/// Checks L(source -> target) = max_I [L(source -> I) + L(I -> target)] over the
/// points I of the antidiagonal i + j = k.
DecompositionReport antidiagonal_decompose(const LppGrid& grid, const SourceSet& source, Point target, int k);

/// Grid (m, n) is the (m+1)-th jump of particle n, which starts at site -n.
/// With offset d the checked event is {x_n(t) >= m - n + d} <=> {L(m,n) <= t},
/// and L includes the weight at (0,0) when include_source_weight is set.
struct CouplingConvention {
  int position_offset = 1;
  bool include_source_weight = true;
};

struct CouplingReport {
  bool passed = true;
  std::int64_t checks = 0;
  Point counterexample;
  double counterexample_time = 0.0;
};

class CouplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Jump times of the TASEP driven by the waiting-time field: a jump fires ω
/// after it becomes enabled. Simulated as a discrete-event particle system.
/// Result [n][m] is the time of particle n's (m+1)-th jump.
std::vector<std::vector<double>> tasep_jump_times(const LppGrid& grid);

/// Compares TASEP positions with passage times on a mesh of `mesh` times.
CouplingReport couple_tasep(const LppGrid& grid, CouplingConvention conv = {}, int mesh = 50);

/// Same as couple_tasep but throws CouplingError on the first counterexample.
CouplingReport require_coupling(const LppGrid& grid, CouplingConvention conv = {}, int mesh = 50);

/// Target used for the scaled sample: displacement (n, n) from the source.
Point scaled_target(const Geometry& g);

/// (L - 4n) / (2^{2/3} (4n)^{1/3}) for trial indices [first, first+trials).
/// Uses a row-streaming DP with weights drawn in sample_grid order, so each
/// value equals the one computed from sample_grid.
std::vector<double> scaled_passage_sample(const Geometry& geom, std::uint64_t first_trial, std::uint64_t trials,
                                          std::uint64_t master_seed);
double scaled_passage_value(const Geometry& geom, const RngSeed& seed);

/// Raw passage time from the source to scaled_target(geom), row-streamed.
double streamed_passage(const Geometry& geom, const RngSeed& seed);
/// (L - 4n) / (2^{2/3} (4n)^{1/3}).
double scale_passage(double L, int n);

}  // namespace kpz::lpp

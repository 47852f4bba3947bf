#include "kpz/lpp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>

namespace kpz::lpp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Region of a geometry as a rectangle plus optional diagonal cut.
struct Region {
  int i0, j0, width, height;
  std::optional<int> min_diagonal;
  bool contains(int i, int j) const {
    return i >= i0 && i < i0 + width && j >= j0 && j < j0 + height && (!min_diagonal || i + j >= *min_diagonal);
  }
  int row_begin(int j) const { return min_diagonal ? std::max(i0, *min_diagonal - j) : i0; }
};

Region region_of(const Geometry& g) {
  switch (g.kind) {
    case GeometryKind::PointToPoint:
      return {0, 0, g.n + 1, g.n + 1, std::nullopt};
    case GeometryKind::PointToLine:
      return {-g.n, -g.n, 2 * g.n + 1, 2 * g.n + 1, 0};
    case GeometryKind::StationaryBoundary:
      return {-1, -1, g.n + 2, g.n + 2, std::nullopt};
  }
  return {};
}

// Draws the weight of cell (i, j); the corner of the stationary geometry is
// fixed at 0 and consumes no randomness.
double draw_weight(const Geometry& g, int i, int j, RandomStream& rng) {
  if (g.kind == GeometryKind::StationaryBoundary) {
    if (i == -1 && j == -1) return 0.0;
    if (i == -1 || j == -1) return rng.exponential(1.0 / g.boundary_mean);
  }
  return rng.exponential(1.0);
}

}  // namespace

void Geometry::validate() const {
  if (n < 1) throw std::invalid_argument("geometry scale n must be >= 1");
  if (!(boundary_mean > 0.0)) throw std::invalid_argument("boundary weight mean must be positive");
}

LppGrid::LppGrid(int i0, int j0, int width, int height, std::optional<int> min_diagonal)
    : i0_(i0), j0_(j0), width_(width), height_(height), min_diagonal_(min_diagonal) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("grid dimensions must be positive");
  w_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0.0);
}

LppGrid LppGrid::from_rows(int i0, int j0, const std::vector<std::vector<double>>& rows) {
  if (rows.empty() || rows.front().empty()) throw std::invalid_argument("empty weight field");
  LppGrid g(i0, j0, static_cast<int>(rows.front().size()), static_cast<int>(rows.size()));
  for (int r = 0; r < g.height_; ++r) {
    if (static_cast<int>(rows[r].size()) != g.width_) throw std::invalid_argument("ragged weight field");
    for (int c = 0; c < g.width_; ++c) g.set_weight({i0 + c, j0 + r}, rows[r][c]);
  }
  return g;
}

void LppGrid::set_weight(Point p, double v) {
  if (!in_region(p)) throw std::out_of_range("cell outside grid region");
  if (!(v >= 0.0)) throw std::invalid_argument("weights must be non-negative");
  w_[offset(p)] = v;
}

SourceSet default_source(const Geometry& g) {
  switch (g.kind) {
    case GeometryKind::PointToPoint:
      return SourceSet::at({0, 0});
    case GeometryKind::PointToLine:
      return SourceSet::antidiagonal(0);
    case GeometryKind::StationaryBoundary:
      return SourceSet::at({-1, -1});
  }
  return {};
}

Point default_target(const Geometry& g) { return {g.n, g.n}; }

Point scaled_target(const Geometry& g) {
  // Displacement (n, n) from the source in every geometry; for the boundary
  // geometry the source is the corner (-1, -1).
  if (g.kind == GeometryKind::StationaryBoundary) return {g.n - 1, g.n - 1};
  return {g.n, g.n};
}

LppGrid sample_grid(const Geometry& geom, const RngSeed& seed) {
  geom.validate();
  const Region r = region_of(geom);
  LppGrid grid(r.i0, r.j0, r.width, r.height, r.min_diagonal);
  RandomStream rng(seed, StreamPurpose::LppWeights);
  for (int j = r.j0; j < r.j0 + r.height; ++j)
    for (int i = r.row_begin(j); i < r.i0 + r.width; ++i) grid.set_weight({i, j}, draw_weight(geom, i, j, rng));
  grid.geometry = geom;
  grid.seed = seed;
  return grid;
}

std::vector<double> passage_table(const LppGrid& g, const SourceSet& source) {
  std::vector<double> L(static_cast<std::size_t>(g.width()) * static_cast<std::size_t>(g.height()), kNaN);
  for (int j = g.j0(); j < g.j0() + g.height(); ++j) {
    for (int i = g.i0(); i < g.i0() + g.width(); ++i) {
      const Point p{i, j};
      if (!g.in_region(p) || !source.reaches(p)) continue;
      double& out = L[g.offset(p)];
      if (source.contains(p)) {
        out = 0.0;
        continue;
      }
      const Point below{i, j - 1}, left{i - 1, j};
      const double lb = g.in_region(below) ? L[g.offset(below)] : kNaN;
      const double ll = g.in_region(left) ? L[g.offset(left)] : kNaN;
      if (std::isnan(lb) && std::isnan(ll)) continue;
      const double best = std::isnan(ll) || (!std::isnan(lb) && lb >= ll) ? lb : ll;
      out = g.weight(p) + best;
    }
  }
  return L;
}

namespace {

std::vector<Point> backtrack(const LppGrid& g, const std::vector<double>& L, const SourceSet& source, Point target) {
  std::vector<Point> path{target};
  Point p = target;
  while (!source.contains(p)) {
    const Point below{p.i, p.j - 1}, left{p.i - 1, p.j};
    const double lb = g.in_region(below) ? L[g.offset(below)] : kNaN;
    const double ll = g.in_region(left) ? L[g.offset(left)] : kNaN;
    p = std::isnan(ll) || (!std::isnan(lb) && lb >= ll) ? below : left;
    path.push_back(p);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace

PassageResult last_passage(const LppGrid& g, const SourceSet& source, Point target, bool with_path) {
  if (!g.in_region(target)) throw std::domain_error("target outside grid region");
  const std::vector<double> L = passage_table(g, source);
  const double v = L[g.offset(target)];
  if (std::isnan(v))
    throw std::domain_error("target (" + std::to_string(target.i) + "," + std::to_string(target.j) +
                            ") unreachable from source");
  PassageResult r{v, {}};
  if (with_path) r.path = backtrack(g, L, source, target);
  return r;
}

bool valid_maximizer(const LppGrid& g, const SourceSet& source, Point target, const PassageResult& r) {
  if (r.path.empty() || !source.contains(r.path.front()) || !(r.path.back() == target)) return false;
  double acc = 0.0;
  for (std::size_t k = 1; k < r.path.size(); ++k) {
    const Point a = r.path[k - 1], b = r.path[k];
    const int di = b.i - a.i, dj = b.j - a.j;
    if (!((di == 1 && dj == 0) || (di == 0 && dj == 1))) return false;
    if (!g.in_region(b)) return false;
    acc += g.weight(b);
  }
  return acc == r.value;
}

namespace {

// DP on the rectangle [start, target] with L(start) = seed.
double seeded_passage(const LppGrid& g, Point start, Point target, double seed) {
  const int w = target.i - start.i + 1;
  const int h = target.j - start.j + 1;
  std::vector<double> row(static_cast<std::size_t>(w), kNaN);
  for (int dj = 0; dj < h; ++dj) {
    for (int di = 0; di < w; ++di) {
      const Point p{start.i + di, start.j + dj};
      if (di == 0 && dj == 0) {
        row[0] = seed;
        continue;
      }
      if (!g.in_region(p)) {
        row[di] = kNaN;
        continue;
      }
      const double lb = dj > 0 ? row[di] : kNaN;
      const double ll = di > 0 ? row[di - 1] : kNaN;
      if (std::isnan(lb) && std::isnan(ll)) {
        row[di] = kNaN;
        continue;
      }
      const double best = std::isnan(ll) || (!std::isnan(lb) && lb >= ll) ? lb : ll;
      row[di] = g.weight(p) + best;
    }
  }
  return row[static_cast<std::size_t>(w - 1)];
}

}  // namespace

DecompositionReport antidiagonal_decompose(const LppGrid& g, const SourceSet& source, Point target, int k) {
  const int lo = source.kind == SourceSet::Kind::Point ? source.point.i + source.point.j : source.diagonal;
  if (!(k > lo && k < target.i + target.j))
    throw std::invalid_argument("antidiagonal must lie strictly between source and target");
  const std::vector<double> L = passage_table(g, source);
  DecompositionReport rep;
  rep.lhs = L[g.offset(target)];
  if (std::isnan(rep.lhs)) throw std::domain_error("target unreachable from source");
  rep.rhs = -std::numeric_limits<double>::infinity();
  rep.rhs_plain = rep.rhs;
  for (int i = k - target.j; i <= target.i; ++i) {
    const Point p{i, k - i};
    if (!g.in_region(p) || p.j > target.j) continue;
    const double head = L[g.offset(p)];
    if (std::isnan(head)) continue;
    const double seeded = seeded_passage(g, p, target, head);
    const double tail = seeded_passage(g, p, target, 0.0);
    if (std::isnan(seeded)) continue;
    rep.rhs = std::max(rep.rhs, seeded);
    rep.rhs_plain = std::max(rep.rhs_plain, head + tail);
  }
  for (const Point& p : backtrack(g, L, source, target))
    if (p.i + p.j == k) rep.argmax = p;
  rep.plain_discrepancy = std::fabs(rep.rhs_plain - rep.lhs);
  rep.exact = rep.rhs == rep.lhs;
  return rep;
}

std::vector<std::vector<double>> tasep_jump_times(const LppGrid& g) {
  if (g.i0() != 0 || g.j0() != 0 || g.width() != g.height() || g.min_diagonal())
    throw std::invalid_argument("coupling needs a square point-to-point grid [0,N]^2");
  const int N = g.width() - 1;
  const int particles = N + 1;
  std::vector<std::int64_t> pos(particles);
  std::vector<int> done(particles, 0);
  std::vector<char> scheduled(particles, 0);
  std::vector<std::vector<double>> times(particles);
  for (int k = 0; k < particles; ++k) pos[k] = -k;

  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  auto try_schedule = [&](int k, double now) {
    if (k >= particles || scheduled[k] || done[k] > N) return;
    const bool free = k == 0 || pos[k - 1] > pos[k] + 1;
    if (!free) return;
    scheduled[k] = 1;
    queue.push({now + g.weight({done[k], k}), k});
  };
  try_schedule(0, 0.0);
  while (!queue.empty()) {
    const auto [t, k] = queue.top();
    queue.pop();
    scheduled[k] = 0;
    ++pos[k];
    ++done[k];
    times[k].push_back(t);
    try_schedule(k, t);
    try_schedule(k + 1, t);
  }
  return times;
}

CouplingReport couple_tasep(const LppGrid& g, CouplingConvention conv, int mesh) {
  const auto times = tasep_jump_times(g);
  const std::vector<double> L = passage_table(g, SourceSet::at({0, 0}));
  const int N = g.width() - 1;
  const double extra = conv.include_source_weight ? g.weight({0, 0}) : 0.0;
  double t_max = 0.0;
  for (double v : L) t_max = std::max(t_max, v + extra);
  CouplingReport rep;
  for (int s = 0; s < mesh; ++s) {
    const double t = (s + 0.5) / mesh * 1.05 * t_max;
    for (int n = 0; n <= N; ++n) {
      const auto& tn = times[n];
      const std::int64_t jumps = std::upper_bound(tn.begin(), tn.end(), t) - tn.begin();
      const std::int64_t x = -n + jumps;
      for (int m = 0; m <= N; ++m) {
        const bool lhs = x >= m - n + conv.position_offset;
        const bool rhs = L[g.offset({m, n})] + extra <= t;
        ++rep.checks;
        if (lhs != rhs) {
          rep.passed = false;
          rep.counterexample = {m, n};
          rep.counterexample_time = t;
          return rep;
        }
      }
    }
  }
  return rep;
}

CouplingReport require_coupling(const LppGrid& g, CouplingConvention conv, int mesh) {
  CouplingReport r = couple_tasep(g, conv, mesh);
  if (!r.passed)
    throw CouplingError("coupling identity fails at (m,n)=(" + std::to_string(r.counterexample.i) + "," +
                        std::to_string(r.counterexample.j) + ") t=" + std::to_string(r.counterexample_time));
  return r;
}

double streamed_passage(const Geometry& geom, const RngSeed& seed) {
  geom.validate();
  const Region r = region_of(geom);
  const SourceSet source = default_source(geom);
  const Point target = scaled_target(geom);
  RandomStream rng(seed, StreamPurpose::LppWeights);
  std::vector<double> row(static_cast<std::size_t>(r.width), kNaN);
  for (int j = r.j0; j <= target.j; ++j) {
    const int begin = r.row_begin(j);
    for (int i = r.i0; i < begin; ++i) row[i - r.i0] = kNaN;
    for (int i = begin; i < r.i0 + r.width; ++i) {
      const double w = draw_weight(geom, i, j, rng);
      if (i > target.i) continue;  // drawn to keep the sample_grid order, unused
      double& out = row[i - r.i0];
      const Point p{i, j};
      if (!source.reaches(p)) {
        out = kNaN;
        continue;
      }
      if (source.contains(p)) {
        out = 0.0;
        continue;
      }
      const double lb = r.contains(i, j - 1) ? out : kNaN;
      const double ll = r.contains(i - 1, j) ? row[i - 1 - r.i0] : kNaN;
      if (std::isnan(lb) && std::isnan(ll)) {
        out = kNaN;
        continue;
      }
      const double best = std::isnan(ll) || (!std::isnan(lb) && lb >= ll) ? lb : ll;
      out = w + best;
    }
  }
  return row[target.i - r.i0];
}

double scale_passage(double L, int n) {
  const double t = 4.0 * n;
  return (L - t) / (std::pow(2.0, 2.0 / 3.0) * std::cbrt(t));
}

double scaled_passage_value(const Geometry& geom, const RngSeed& seed) {
  return scale_passage(streamed_passage(geom, seed), geom.n);
}

std::vector<double> scaled_passage_sample(const Geometry& geom, std::uint64_t first_trial, std::uint64_t trials,
                                          std::uint64_t master_seed) {
  std::vector<double> out;
  out.reserve(trials);
  for (std::uint64_t k = 0; k < trials; ++k) out.push_back(scaled_passage_value(geom, {master_seed, first_trial + k}));
  return out;
}

}  // namespace kpz::lpp

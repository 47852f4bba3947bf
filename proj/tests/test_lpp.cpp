#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "kpz/lpp.hpp"
#include "kpz/stats.hpp"

using namespace kpz;
using namespace kpz::lpp;

namespace {
constexpr double kSigmas = 3.0;

// Brute force: enumerate every up-right path into `target` from any source cell.
double enumerate_best(const LppGrid& g, const SourceSet& src, Point target) {
  double best = -INFINITY;
  std::function<void(Point, double)> walk = [&](Point p, double acc) {
    if (src.contains(p)) {
      best = std::max(best, acc);
      return;
    }
    const double here = acc + g.weight(p);
    for (Point prev : {Point{p.i, p.j - 1}, Point{p.i - 1, p.j}})
      if (g.in_region(prev) && src.reaches(prev)) walk(prev, here);
  };
  walk(target, 0.0);
  return best;
}

LppGrid random_grid(int i0, int j0, int w, int h, std::optional<int> diag, RandomStream& r) {
  LppGrid g(i0, j0, w, h, diag);
  for (int j = j0; j < j0 + h; ++j)
    for (int i = i0; i < i0 + w; ++i)
      if (g.in_region({i, j})) g.set_weight({i, j}, r.exponential(1.0));
  return g;
}
}  // namespace

TEST_CASE("two by two example") {
  auto g = LppGrid::from_rows(0, 0, {{0.0, 3.0}, {2.0, 4.0}});
  auto r = last_passage(g, SourceSet::at({0, 0}), {1, 1});
  CHECK(r.value == 7.0);
  CHECK(r.path == std::vector<Point>{{0, 0}, {1, 0}, {1, 1}});
  CHECK(valid_maximizer(g, SourceSet::at({0, 0}), {1, 1}, r));

  auto d = antidiagonal_decompose(g, SourceSet::at({0, 0}), {1, 1}, 1);
  CHECK(d.exact);
  CHECK(d.lhs == 7.0);
  CHECK(d.rhs == 7.0);
  CHECK(d.argmax == Point{1, 0});
}

TEST_CASE("ties prefer the cell below") {
  auto g = LppGrid::from_rows(0, 0, {{0.0, 1.0}, {1.0, 1.0}});
  auto r = last_passage(g, SourceSet::at({0, 0}), {1, 1});
  CHECK(r.path[1] == Point{1, 0});
}

TEST_CASE("unreachable target") {
  auto g = LppGrid::from_rows(0, 0, {{1.0, 1.0}, {1.0, 1.0}});
  CHECK_THROWS_AS(last_passage(g, SourceSet::at({1, 1}), {0, 1}), std::domain_error);
  CHECK_THROWS_AS(g.set_weight({0, 0}, -1.0), std::invalid_argument);
}

TEST_CASE("dynamic programming matches enumeration") {
  RandomStream r({77, 0}, StreamPurpose::Synthetic);
  int cases = 0;
  for (int w = 1; w <= 4; ++w)
    for (int h = 1; h <= 4; ++h) {
      if (w * h > 12) continue;
      for (int rep = 0; rep < 25; ++rep) {
        auto g = random_grid(0, 0, w, h, std::nullopt, r);
        const Point t{w - 1, h - 1};
        auto res = last_passage(g, SourceSet::at({0, 0}), t);
        CHECK(std::fabs(res.value - enumerate_best(g, SourceSet::at({0, 0}), t)) < 1e-12);
        CHECK(valid_maximizer(g, SourceSet::at({0, 0}), t, res));
        ++cases;
      }
    }
  // line source
  for (int rep = 0; rep < 50; ++rep) {
    auto g = random_grid(-2, -2, 5, 5, 0, r);
    auto src = SourceSet::antidiagonal(0);
    for (Point t : {Point{2, 2}, Point{1, 0}, Point{-1, 2}}) {
      auto res = last_passage(g, src, t);
      CHECK(std::fabs(res.value - enumerate_best(g, src, t)) < 1e-12);
      CHECK(valid_maximizer(g, src, t, res));
    }
  }
  CHECK(cases > 100);
}

TEST_CASE("antidiagonal decomposition is exact") {
  for (std::uint64_t k = 0; k < 50; ++k) {
    Geometry geom{GeometryKind::PointToPoint, 12, 2.0};
    auto g = sample_grid(geom, {5, k});
    for (int diag = 1; diag < 24; diag += 3) {
      auto d = antidiagonal_decompose(g, SourceSet::at({0, 0}), {12, 12}, diag);
      CHECK(d.exact);
    }
  }
  Geometry line{GeometryKind::PointToLine, 8, 2.0};
  auto g = sample_grid(line, {5, 99});
  CHECK(antidiagonal_decompose(g, default_source(line), {8, 8}, 7).exact);
}

TEST_CASE("weight means") {
  std::vector<double> bulk, boundary;
  for (std::uint64_t k = 0; k < 10000; ++k) {
    auto g = sample_grid({GeometryKind::StationaryBoundary, 10, 2.0}, {9, k});
    double sb = 0, sw = 0;
    for (int i = 0; i <= 10; ++i) {
      sb += g.weight({i, -1}) + g.weight({-1, i});
      for (int j = 0; j <= 10; ++j) sw += g.weight({i, j});
    }
    boundary.push_back(sb / 22.0);
    bulk.push_back(sw / 121.0);
    CHECK(g.weight({-1, -1}) == 0.0);
  }
  CHECK(std::fabs(stats::mean(bulk) - 1.0) < kSigmas * stats::standard_error(bulk));
  CHECK(std::fabs(stats::mean(boundary) - 2.0) < kSigmas * stats::standard_error(boundary));

  std::vector<double> p2p;
  for (std::uint64_t k = 0; k < 10000; ++k) {
    auto g = sample_grid({GeometryKind::PointToPoint, 9, 2.0}, {10, k});
    double s = 0;
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) s += g.weight({i, j});
    p2p.push_back(s / 100.0);
  }
  CHECK(std::fabs(stats::mean(p2p) - 1.0) < kSigmas * stats::standard_error(p2p));
}

TEST_CASE("sampling is deterministic") {
  Geometry geom{GeometryKind::PointToLine, 15, 2.0};
  auto a = sample_grid(geom, {4, 4}), b = sample_grid(geom, {4, 4}), c = sample_grid(geom, {4, 5});
  bool same = true, differ = false;
  for (int i = -15; i <= 15; ++i)
    for (int j = -15; j <= 15; ++j)
      if (a.in_region({i, j})) {
        same = same && a.weight({i, j}) == b.weight({i, j});
        differ = differ || a.weight({i, j}) != c.weight({i, j});
      }
  CHECK(same);
  CHECK(differ);
}

TEST_CASE("streamed passage equals the full grid") {
  for (auto kind : {GeometryKind::PointToPoint, GeometryKind::PointToLine, GeometryKind::StationaryBoundary}) {
    Geometry geom{kind, 30, 2.0};
    for (std::uint64_t k = 0; k < 5; ++k) {
      auto g = sample_grid(geom, {3, k});
      double full = last_passage(g, default_source(geom), scaled_target(geom), false).value;
      CHECK(streamed_passage(geom, {3, k}) == full);
    }
  }
}

TEST_CASE("two step expectation") {
  std::vector<double> v;
  for (std::uint64_t k = 0; k < 100000; ++k) {
    RandomStream r({17, k}, StreamPurpose::Synthetic);
    auto g = random_grid(0, 0, 2, 2, std::nullopt, r);
    v.push_back(last_passage(g, SourceSet::at({0, 0}), {1, 1}, false).value);
  }
  CHECK(std::fabs(stats::mean(v) - 2.5) < kSigmas * stats::standard_error(v));
}

TEST_CASE("time constant") {
  std::vector<double> v;
  for (std::uint64_t k = 0; k < 20; ++k) v.push_back(streamed_passage({GeometryKind::PointToPoint, 200, 2.0}, {6, k}));
  CHECK(std::fabs(stats::mean(v) / 200.0 - 4.0) < 0.05 * 4.0);
}

TEST_CASE("transversal fluctuations of the maximizer") {
  const int n = 100;
  std::vector<double> u;
  for (std::uint64_t k = 0; k < 200; ++k) {
    auto g = sample_grid({GeometryKind::PointToPoint, n, 2.0}, {8, k});
    auto d = antidiagonal_decompose(g, SourceSet::at({0, 0}), {n, n}, n);
    u.push_back(std::fabs(d.argmax.i - d.argmax.j) / 2.0);
  }
  std::sort(u.begin(), u.end());
  const double scale = std::pow(n, 2.0 / 3.0);
  CHECK(u[u.size() * 9 / 10] < 3.0 * scale);
  CHECK(u.back() < n / 2.0);
}

TEST_CASE("tasep coupling") {
  auto one = LppGrid::from_rows(0, 0, {{1.7}});
  CHECK(tasep_jump_times(one)[0][0] == 1.7);
  RandomStream r({19, 0}, StreamPurpose::Synthetic);
  for (int rep = 0; rep < 300; ++rep) {
    const int N = 1 + static_cast<int>(r.below(20));
    auto g = random_grid(0, 0, N, N, std::nullopt, r);
    auto rep_ok = couple_tasep(g);
    CHECK(rep_ok.passed);
  }
  // another offset fails somewhere
  RandomStream r2({19, 1}, StreamPurpose::Synthetic);
  auto g = random_grid(0, 0, 6, 6, std::nullopt, r2);
  CHECK_FALSE(couple_tasep(g, {0, true}).passed);
  CHECK_THROWS_AS(require_coupling(g, {0, true}), CouplingError);
  CHECK_FALSE(couple_tasep(g, {1, false}).passed);
}

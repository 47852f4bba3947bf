#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "kpz/exclusion.hpp"
#include "kpz/stats.hpp"

using namespace kpz;
using namespace kpz::sim;

namespace {
constexpr double kSigmas = 3.0;
constexpr double kDensityTol = 0.002;

std::vector<std::uint8_t> occupations(const OccupancyField& f) {
  std::vector<std::uint8_t> v;
  for (std::int64_t j = f.domain().first_site(); j < f.domain().first_site() + f.domain().site_count(); ++j)
    v.push_back(static_cast<std::uint8_t>(f.occupied(j)));
  return v;
}
}  // namespace

TEST_CASE("initial conditions") {
  auto step = init_configuration(InitialCondition::step(), Domain::window(4), {1, 0});
  CHECK(occupations(step) == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0, 0});
  auto flat = init_configuration(InitialCondition::flat(), Domain::ring(6), {1, 0});
  CHECK(occupations(flat) == std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0});
  CHECK(flat.particle_count() == 3);

  auto bern = init_configuration(InitialCondition::bernoulli(0.5), Domain::ring(1000000), {5, 2});
  CHECK(std::fabs(bern.particle_count() / 1e6 - 0.5) < kDensityTol);

  CHECK_THROWS_AS(init_configuration(InitialCondition::explicit_sites({1, 0, 1}), Domain::ring(4), {1, 0}),
                  ConfigurationError);
  CHECK_THROWS_AS(init_configuration(InitialCondition::step(), Domain::ring(4), {1, 0}), ConfigurationError);
  CHECK_THROWS_AS(init_configuration(InitialCondition::bernoulli(1.5), Domain::ring(4), {1, 0}), ConfigurationError);
}

TEST_CASE("heights at time zero") {
  auto step = init_configuration(InitialCondition::step(), Domain::window(20), {1, 0});
  for (int j = -20; j <= 20; ++j) CHECK(height_at(step, j) == std::abs(j) / 2.0);
  auto flat = init_configuration(InitialCondition::flat(), Domain::ring(20), {1, 0});
  for (int k = -4; k <= 4; ++k) {
    CHECK(height_at(flat, 2 * k) == 0.0);
    CHECK(height_at(flat, 2 * k + 1) == 0.5);
  }
}

TEST_CASE("height at origin is the current") {
  ExclusionProcess p(ModelSpec::tasep(), init_configuration(InitialCondition::step(), Domain::window_for_time(30), {2, 0}),
                     {2, 0});
  p.advance_to(30.0);
  CHECK(height_at(p.state(), 0) == static_cast<double>(p.state().bond_count(0)));
  CHECK(p.state().bond_count(0) > 0);
}

TEST_CASE("free particle is poisson") {
  const int trials = 10000;
  const double t = 1000.0;
  std::vector<std::uint8_t> one(100, 0);
  one[0] = 1;
  std::vector<double> d;
  for (int k = 0; k < trials; ++k) {
    RngSeed s{11, static_cast<std::uint64_t>(k)};
    ExclusionProcess p(ModelSpec::tasep(), init_configuration(InitialCondition::explicit_sites(one), Domain::ring(100), s), s);
    p.advance_to(t);
    d.push_back(static_cast<double>(p.events()));
  }
  const double m = stats::mean(d), v = stats::variance(d);
  CHECK(std::fabs(m - t) < kSigmas * std::sqrt(t / trials));
  // Var of the sample variance of a Poisson(t): (mu4 - s^4)/n with mu4 = 3t^2 + t
  CHECK(std::fabs(v - t) < kSigmas * std::sqrt((2.0 * t * t + t) / trials));
}

TEST_CASE("stationary event rate per bond") {
  const std::int64_t L = 1000;
  const double T = 100.0;
  std::vector<double> rate;
  for (int k = 0; k < 30; ++k) {
    RngSeed s{12, static_cast<std::uint64_t>(k)};
    ExclusionProcess p(ModelSpec::tasep(), init_configuration(InitialCondition::bernoulli(0.5), Domain::ring(L), s), s);
    p.advance_to(T);
    rate.push_back(p.events() / (T * L));
  }
  CHECK(std::fabs(stats::mean(rate) - 0.25) < kSigmas * stats::standard_error(rate));
}

TEST_CASE("packed ring is frozen") {
  ExclusionProcess p(ModelSpec::tasep(),
                     init_configuration(InitialCondition::explicit_sites(std::vector<std::uint8_t>(50, 1)), Domain::ring(50), {1, 0}),
                     {1, 0});
  p.advance_to(1e6);
  CHECK(p.events() == 0);
  CHECK(p.total_rate() == 0.0);
}

TEST_CASE("conservation law holds at every event") {
  for (auto model : {ModelSpec::tasep(), ModelSpec::ssep(), ModelSpec{0.7, 0.3}}) {
    RngSeed s{3, 9};
    auto init = init_configuration(InitialCondition::bernoulli(0.4), Domain::ring(64), s);
    ExclusionProcess p(model, init, s);
    std::int64_t bad = 0;
    p.set_observer([&](const JumpEvent&) {
      const auto& f = p.state();
      for (std::int64_t j = 0; j < 64; ++j)
        if (f.occupied(j) - f.initially_occupied(j) != f.bond_count(j - 1) - f.bond_count(j)) ++bad;
    });
    p.advance_to(20.0);
    CHECK(p.events() > 100);
    CHECK(bad == 0);
  }
}

TEST_CASE("labels keep their order") {
  RngSeed s{4, 1};
  auto init = init_configuration(InitialCondition::step(), Domain::window_for_time(40), s);
  init.enable_labels();
  ExclusionProcess p(ModelSpec::tasep(), init, s);
  p.advance_to(40.0);
  const auto& f = p.state();
  int last = -1;
  bool ordered = true;
  for (std::int64_t j = f.domain().first_site(); j < f.domain().first_site() + f.domain().site_count(); ++j)
    if (f.label(j) >= 0) {
      ordered = ordered && f.label(j) == last + 1;
      last = f.label(j);
    }
  CHECK(ordered);
}

TEST_CASE("window horizon") {
  auto dom = Domain::window_for_time(50.0);
  CHECK(dom.horizon(ModelSpec::tasep()) >= 50.0);
  ExclusionProcess p(ModelSpec::tasep(), init_configuration(InitialCondition::step(), dom, {1, 0}), {1, 0});
  CHECK_NOTHROW(p.advance_to(50.0));
  CHECK_THROWS_AS(p.advance_to(dom.horizon(ModelSpec::tasep()) + 1.0), RangeError);
  CHECK(Domain::ring(10).horizon(ModelSpec::tasep()) == INFINITY);
}

TEST_CASE("larger window gives the same trajectory near the origin") {
  RngSeed s{8, 5};
  ExclusionProcess a(ModelSpec::tasep(), init_configuration(InitialCondition::step(), Domain::window_for_time(60), s), s);
  ExclusionProcess b(ModelSpec::tasep(), init_configuration(InitialCondition::step(), Domain::window(400), s), s);
  a.advance_to(60.0);
  b.advance_to(60.0);
  CHECK(a.events() == b.events());
  for (int j = -20; j <= 20; ++j) CHECK(a.state().bond_count(j) == b.state().bond_count(j));
}

TEST_CASE("integrated current windows") {
  RngSeed s{6, 0};
  auto init = init_configuration(InitialCondition::bernoulli(0.5), Domain::ring(200), s);
  init.enable_event_log_all();
  ExclusionProcess p(ModelSpec::tasep(), init, s);
  p.advance_to(500.0);
  const auto& f = p.state();
  std::int64_t prev = 0;
  for (double t1 = 0.0; t1 <= 500.0; t1 += 5.0) {
    auto c = integrated_current(f, 7, 0.0, t1);
    CHECK(c >= prev);
    prev = c;
  }
  CHECK(prev == f.bond_count(7));
  CHECK(integrated_current(f, 7, 120.0, 120.0) == 0);
  CHECK_THROWS_AS(integrated_current(f, 7, 0.0, 600.0), RangeError);
  CHECK_THROWS_AS(integrated_current(f, 7, 10.0, 5.0), RangeError);

  auto partial = init_configuration(InitialCondition::bernoulli(0.5), Domain::ring(200), s);
  partial.enable_event_log({3});
  CHECK_THROWS_AS(partial.event_log(4), RangeError);
}

TEST_CASE("stationary current over a long window") {
  RngSeed s{13, 0};
  const std::int64_t L = 400;
  const double T = 1e4;
  auto init = init_configuration(InitialCondition::bernoulli(0.5), Domain::ring(L), s);
  ExclusionProcess p(ModelSpec::tasep(), init, s);
  p.advance_to(T);
  // bond averages are correlated; use the particle-number spread as a floor on the SE
  std::vector<double> per_bond;
  for (std::int64_t b = 0; b < L; ++b) per_bond.push_back(p.state().bond_count(b) / T);
  const double N = static_cast<double>(p.state().particle_count());
  const double exact = N * (L - N) / (L * (L - 1.0));
  CHECK(std::fabs(stats::mean(per_bond) - exact) < kSigmas * std::sqrt(exact / (T * L)) + 1e-12);
  CHECK(std::fabs(exact - 0.25) < kSigmas * 0.5 / std::sqrt(static_cast<double>(L)));
}

TEST_CASE("determinism and split invariance") {
  RngSeed s{21, 4};
  auto run = [&](std::vector<double> stops) {
    auto init = init_configuration(InitialCondition::bernoulli(0.5), Domain::ring(128), s);
    init.enable_event_log_all();
    ExclusionProcess p(ModelSpec{0.75, 0.25}, init, s);
    for (double t : stops) p.advance_to(t);
    std::vector<double> times;
    for (std::int64_t b = 0; b < 128; ++b)
      for (const auto& e : p.state().event_log(b)) times.push_back(e.time * e.direction + static_cast<double>(b));
    return times;
  };
  auto a = run({30.0});
  CHECK(a == run({30.0}));
  CHECK(a == run({1.0, 7.5, 7.5, 29.0, 30.0}));
}

TEST_CASE("bernoulli start stays stationary") {
  const std::int64_t L = 2000;
  std::vector<double> d0, d1;
  for (int k = 0; k < 10; ++k) {
    RngSeed s{31, static_cast<std::uint64_t>(k)};
    ExclusionProcess p(ModelSpec::tasep(), init_configuration(InitialCondition::bernoulli(0.3), Domain::ring(L), s), s);
    auto pair_density = [&] {
      int c = 0;
      for (std::int64_t j = 0; j < L; ++j) c += p.state().occupied(j) && !p.state().occupied(j + 1);
      return c / static_cast<double>(L);
    };
    d0.push_back(pair_density());
    p.advance_to(200.0);
    d1.push_back(pair_density());
  }
  std::vector<double> diff;
  for (std::size_t i = 0; i < d0.size(); ++i) diff.push_back(d1[i] - d0[i]);
  CHECK(std::fabs(stats::mean(d1) - 0.21) < 0.01);
  CHECK(std::fabs(stats::mean(diff)) < kSigmas * stats::standard_error(diff) + 1e-3);
}

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kpz/experiments.hpp"
#include "kpz/observables.hpp"

namespace kpz::exp {

using nlohmann::json;

namespace {

const std::pair<Kind, const char*> kKindNames[] = {
    {Kind::CovarianceStep, "covariance-step"}, {Kind::CovarianceFlat, "covariance-flat"},
    {Kind::CovarianceStat, "covariance-stat"}, {Kind::CurrentCorr, "current-corr"},
    {Kind::TwoPoint, "two-point"},             {Kind::SumRule, "sum-rule"},
    {Kind::RayCurrent, "ray-current"},         {Kind::LppFluct, "lpp-fluct"},
    {Kind::FredholmTables, "fredholm-tables"}, {Kind::Constants, "constants"},
};

// FNV-1a, 64 bit.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

std::string kind_name(Kind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  return "unknown";
}

Kind parse_kind(const std::string& s) {
  for (const auto& [kind, name] : kKindNames)
    if (s == name) return kind;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

bool is_ensemble_kind(Kind k) {
  return k == Kind::CovarianceStep || k == Kind::CovarianceFlat || k == Kind::CovarianceStat ||
         k == Kind::LppFluct || k == Kind::SumRule;
}

ExperimentConfig ExperimentConfig::defaults(Kind k) {
  ExperimentConfig c;
  c.kind = k;
  c.tau = obs::default_tau_grid(100);
  switch (k) {
    case Kind::CovarianceStep:
    case Kind::CovarianceFlat:
    case Kind::CovarianceStat:
      break;
    case Kind::CurrentCorr:
      c.trials = 1;
      break;
    case Kind::TwoPoint:
      c.times = {0.0, 64.0, 256.0};
      c.ring_size = 564;
      c.j_max = 250;
      c.origins = 5;
      c.origin_spacing = 256.0;
      c.trials = 4000;
      break;
    case Kind::SumRule:
      c.times = {0.0, 1.0, 5.0, 10.0};
      c.ring_size = 128;
      c.j_max = 40;
      c.origins = 4;
      c.origin_spacing = 10.0;
      c.trials = 100000;
      break;
    case Kind::RayCurrent:
      c.rho = 0.25;
      c.velocity = 0.5;
      c.ring_size = 400;
      c.y_max = 200;
      c.lag_max = 60;
      c.fit_lo = 6.0;
      c.fit_hi = 60.0;
      c.trials = 4000;
      break;
    case Kind::LppFluct:
      c.n = 1000;
      break;
    case Kind::FredholmTables:
    case Kind::Constants:
      c.trials = 1;
      break;
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("kind")) throw ConfigError("config is missing 'kind'");
  std::string kind;
  read_opt(j, "kind", kind);
  ExperimentConfig c = defaults(parse_kind(kind));
  read_opt(j, "p", c.p);
  read_opt(j, "q", c.q);
  read_opt(j, "rho", c.rho);
  read_opt(j, "t_max", c.t_max);
  if (j.contains("tau") && j.contains("tau_points")) throw ConfigError("give either 'tau' or 'tau_points', not both");
  read_opt(j, "tau", c.tau);
  if (j.contains("tau_points")) {
    int n = 0;
    read_opt(j, "tau_points", n);
    if (n < 1) throw ConfigError("tau_points must be >= 1");
    c.tau = obs::default_tau_grid(n);
  }
  if (j.contains("trials")) {
    if (!j.at("trials").is_number_integer() || j.at("trials").get<long long>() < 1)
      throw ConfigError("trials must be an integer >= 1");
    c.trials = j.at("trials").get<std::uint64_t>();
  }
  read_opt(j, "master_seed", c.master_seed);
  read_opt(j, "workers", c.workers);
  read_opt(j, "ring_size", c.ring_size);
  read_opt(j, "total_time", c.total_time);
  read_opt(j, "max_lag", c.max_lag);
  read_opt(j, "bin_width", c.bin_width);
  read_opt(j, "fit_lo", c.fit_lo);
  read_opt(j, "fit_hi", c.fit_hi);
  read_opt(j, "times", c.times);
  read_opt(j, "j_max", c.j_max);
  read_opt(j, "origins", c.origins);
  read_opt(j, "origin_spacing", c.origin_spacing);
  read_opt(j, "window_factor", c.window_factor);
  read_opt(j, "velocity", c.velocity);
  read_opt(j, "y_max", c.y_max);
  read_opt(j, "lag_max", c.lag_max);
  read_opt(j, "geometry", c.geometry);
  read_opt(j, "n", c.n);
  read_opt(j, "boundary_mean", c.boundary_mean);
  read_opt(j, "horizon_check_stride", c.horizon_check_stride);
  read_opt(j, "nodes", c.nodes);
  read_opt(j, "w_max", c.w_max);
  static const char* known[] = {"kind", "p", "q", "rho", "t_max", "tau", "tau_points", "trials", "master_seed",
                                "workers", "ring_size", "total_time", "max_lag", "bin_width", "fit_lo", "fit_hi",
                                "times", "j_max", "origins", "origin_spacing", "window_factor", "velocity", "y_max",
                                "lag_max", "geometry", "n", "boundary_mean", "horizon_check_stride", "nodes",
                                "w_max", "out"};
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["kind"] = kind_name(kind);
  j["p"] = p;
  j["q"] = q;
  j["rho"] = rho;
  j["t_max"] = t_max;
  j["tau"] = tau;
  j["trials"] = trials;
  j["master_seed"] = master_seed;
  j["workers"] = workers;
  j["ring_size"] = ring_size;
  j["total_time"] = total_time;
  j["max_lag"] = max_lag;
  j["bin_width"] = bin_width;
  j["fit_lo"] = fit_lo;
  j["fit_hi"] = fit_hi;
  j["times"] = times;
  j["j_max"] = j_max;
  j["origins"] = origins;
  j["origin_spacing"] = origin_spacing;
  j["window_factor"] = window_factor;
  j["velocity"] = velocity;
  j["y_max"] = y_max;
  j["lag_max"] = lag_max;
  j["geometry"] = geometry;
  j["n"] = n;
  j["boundary_mean"] = boundary_mean;
  j["horizon_check_stride"] = horizon_check_stride;
  j["nodes"] = nodes;
  j["w_max"] = w_max;
  return j;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (trials < 1) fail("trial count must be >= 1");
  if (workers < 1) fail("workers must be >= 1");
  if (!(p >= 0.0 && q >= 0.0 && p + q > 0.0)) fail("rates need p, q >= 0 and p + q > 0");
  if (!(rho >= 0.0 && rho <= 1.0)) fail("rho must lie in [0, 1]");
  switch (kind) {
    case Kind::CovarianceStep:
    case Kind::CovarianceFlat:
    case Kind::CovarianceStat: {
      if (!(t_max > 0.0)) fail("t_max must be positive");
      if (tau.empty()) fail("tau grid is empty");
      for (std::size_t k = 0; k < tau.size(); ++k) {
        if (!(tau[k] > 0.0 && tau[k] <= 1.0)) fail("tau grid must lie in (0, 1]");
        if (k && !(tau[k] > tau[k - 1])) fail("tau grid must be sorted strictly increasing");
      }
      if (tau.back() != 1.0) fail("tau grid must contain 1");
      if (trials < 2) fail("covariance needs at least 2 trials");
      break;
    }
    case Kind::CurrentCorr:
      if (ring_size < 2) fail("ring_size must be >= 2");
      if (total_time < 2.0 * max_lag) fail("total_time must be at least twice max_lag");
      if (!(bin_width > 0.0)) fail("bin_width must be positive");
      if (!(fit_lo > 0.0 && fit_hi > fit_lo)) fail("fit window must satisfy 0 < fit_lo < fit_hi");
      break;
    case Kind::TwoPoint:
    case Kind::SumRule:
      if (times.size() < 2) fail("times needs at least two entries");
      if (times.front() != 0.0) fail("times must start at 0");
      for (std::size_t k = 1; k < times.size(); ++k)
        if (!(times[k] > times[k - 1])) fail("times must be strictly increasing");
      if (2 * j_max + 1 > ring_size) fail("ring_size must be at least 2 j_max + 1");
      if (origins < 1) fail("origins must be >= 1");
      if (trials < 2) fail("two-point estimation needs at least 2 rings");
      if (kind == Kind::SumRule && trials < 200) fail("sum-rule needs at least 200 trials");
      break;
    case Kind::RayCurrent:
      if (!(velocity > 0.0)) fail("velocity must be positive");
      if (lag_max >= y_max) fail("lag_max must be below y_max");
      if (y_max + 1 > ring_size) fail("ring_size must exceed y_max");
      if (trials < 2) fail("ray-current needs at least 2 rings");
      break;
    case Kind::LppFluct:
      if (geometry != "point-to-point" && geometry != "point-to-line" && geometry != "stationary")
        fail("geometry must be point-to-point, point-to-line or stationary");
      if (n < 1) fail("n must be >= 1");
      if (trials < 2) fail("variance needs at least 2 trials");
      if (!(boundary_mean > 0.0)) fail("boundary_mean must be positive");
      break;
    case Kind::FredholmTables:
    case Kind::Constants:
      if (nodes < 20) fail("nodes must be >= 20");
      if (!(w_max > 0.0 && w_max <= 3.25)) fail("w_max must lie in (0, 3.25]");
      break;
  }
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("trials");
  j.erase("workers");
  j["code_version"] = kCodeVersion;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

Check make_check(std::string name, double value, double target, double tol, std::string rule, std::string source,
                 double se, bool gating) {
  Check c{std::move(name), value, target, tol, se, std::move(rule), std::move(source), gating, false};
  if (c.rule == "abs") c.passed = std::fabs(value - target) <= tol;
  else if (c.rule == "rel") c.passed = std::fabs(value - target) <= tol * std::fabs(target);
  else if (c.rule == "below") c.passed = value < tol;
  else if (c.rule == "se") c.passed = std::fabs(value - target) <= tol * se;
  else if (c.rule == "true") c.passed = value != 0.0;
  else throw std::invalid_argument("unknown check rule " + c.rule);
  if (!std::isfinite(value)) c.passed = false;
  return c;
}

bool RunResult::all_passed() const {
  for (const auto& c : checks)
    if (c.gating && !c.passed) return false;
  return true;
}

ExitCode RunResult::exit_code() const {
  if (!complete) return ExitCode::Success;
  return all_passed() ? ExitCode::Success : ExitCode::ToleranceFailure;
}

json Manifest::to_json() const {
  return json{{"config_hash", config_hash}, {"code_version", code_version}, {"config", config},
              {"completed", completed},     {"offsets", offsets},           {"ensemble_bytes", ensemble_bytes},
              {"finished", finished}};
}

Manifest Manifest::load(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IntegrityError("no manifest at " + path.string());
  Manifest m;
  try {
    json j;
    in >> j;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.code_version = j.at("code_version").get<std::string>();
    m.config = j.at("config");
    m.completed = j.at("completed").get<std::uint64_t>();
    m.offsets = j.at("offsets").get<std::vector<std::uint64_t>>();
    m.ensemble_bytes = j.at("ensemble_bytes").get<std::uint64_t>();
    m.finished = j.at("finished").get<bool>();
  } catch (const json::exception& e) {
    throw IntegrityError("corrupt manifest " + path.string() + ": " + e.what());
  }
  if (m.offsets.size() != m.completed) throw IntegrityError("manifest offsets do not match completed count");
  for (std::size_t i = 1; i < m.offsets.size(); ++i)
    if (m.offsets[i] <= m.offsets[i - 1]) throw IntegrityError("manifest offsets are not increasing");
  if (!m.offsets.empty() && m.offsets.back() >= m.ensemble_bytes)
    throw IntegrityError("manifest offsets exceed recorded ensemble size");
  return m;
}

void Manifest::save(const std::filesystem::path& dir) const {
  const auto tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << to_json().dump(1) << '\n';
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, dir / "manifest.json");
}

}  // namespace kpz::exp

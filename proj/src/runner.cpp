#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "experiments_detail.hpp"
#include "kpz/exclusion.hpp"
#include "kpz/lpp.hpp"

namespace kpz::exp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace detail {

std::string provenance(const ExperimentConfig& cfg) {
  return "# kind=" + kind_name(cfg.kind) + " config_hash=" + cfg.hash() +
         " master_seed=" + std::to_string(cfg.master_seed) + " code_version=" + kCodeVersion;
}

std::vector<std::string> ensemble_columns(const ExperimentConfig& cfg) {
  std::vector<std::string> cols;
  switch (cfg.kind) {
    case Kind::CovarianceStep:
    case Kind::CovarianceFlat:
    case Kind::CovarianceStat:
      for (std::size_t k = 1; k <= cfg.tau.size(); ++k) cols.push_back("h_tau_" + std::to_string(k));
      break;
    case Kind::LppFluct:
      cols = {"passage_time", "scaled"};
      break;
    case Kind::SumRule:
      for (std::size_t k = 1; k <= cfg.times.size(); ++k) cols.push_back("J_t_" + std::to_string(k));
      break;
    default:
      break;
  }
  return cols;
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const fs::path& path, const ExperimentConfig& cfg, const std::vector<std::string>& header)
    : out_(path, std::ios::trunc | std::ios::binary) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  out_ << provenance(cfg) << '\n';
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

void CsvWriter::row(const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_number(values[i]);
  out_ << '\n';
}

void CsvWriter::text_row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
  out_ << '\n';
}

PlotWriter::PlotWriter(const fs::path& path, const ExperimentConfig& cfg, const std::string& columns)
    : out_(path, std::ios::trunc | std::ios::binary) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  out_ << provenance(cfg) << "\n# " << columns << '\n';
}

void PlotWriter::row(const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? " " : "") << format_number(values[i]);
  out_ << '\n';
}

json check_to_json(const Check& c) {
  return json{{"name", c.name},       {"value", c.value},   {"target", c.target}, {"tolerance", c.tolerance},
              {"se", c.se},           {"rule", c.rule},     {"source", c.source}, {"gating", c.gating},
              {"passed", c.passed}};
}

Check check_from_json(const json& j) {
  Check c;
  c.name = j.at("name").get<std::string>();
  c.value = j.at("value").is_number() ? j.at("value").get<double>() : NAN;
  c.target = j.at("target").is_number() ? j.at("target").get<double>() : NAN;
  c.tolerance = j.at("tolerance").get<double>();
  c.se = j.at("se").is_number() ? j.at("se").get<double>() : NAN;
  c.rule = j.at("rule").get<std::string>();
  c.source = j.at("source").get<std::string>();
  c.gating = j.at("gating").get<bool>();
  c.passed = j.at("passed").get<bool>();
  return c;
}

}  // namespace detail

std::vector<double> covariance_trial(const ExperimentConfig& cfg, std::uint64_t trial, std::uint64_t* events) {
  const RngSeed seed{cfg.master_seed, trial};
  const sim::ModelSpec model{cfg.p, cfg.q};
  sim::Domain dom = sim::Domain::window_for_time(cfg.t_max);
  sim::InitialCondition ic = sim::InitialCondition::step();
  if (cfg.kind == Kind::CovarianceFlat) {
    ic = sim::InitialCondition::flat();
  } else if (cfg.kind == Kind::CovarianceStat) {
    dom = sim::Domain::ring_for_time(cfg.t_max);
    ic = sim::InitialCondition::bernoulli(cfg.rho);
  } else if (cfg.kind != Kind::CovarianceStep) {
    throw std::invalid_argument("covariance_trial: not a covariance experiment");
  }
  sim::ExclusionProcess proc(model, sim::init_configuration(ic, dom, seed), seed);
  std::vector<double> row;
  row.reserve(cfg.tau.size());
  for (double tau : cfg.tau) {
    proc.advance_to(tau * cfg.t_max);
    row.push_back(sim::height_at(proc.state(), 0));
  }
  if (events) *events = proc.events();
  return row;
}

std::vector<double> covariance_trial_wide(const ExperimentConfig& cfg, std::uint64_t trial) {
  if (cfg.kind != Kind::CovarianceStep && cfg.kind != Kind::CovarianceFlat)
    throw std::invalid_argument("horizon validation applies to window domains only");
  const RngSeed seed{cfg.master_seed, trial};
  const sim::Domain dom = sim::Domain::window(2 * sim::Domain::window_for_time(cfg.t_max).size);
  const auto ic = cfg.kind == Kind::CovarianceFlat ? sim::InitialCondition::flat() : sim::InitialCondition::step();
  sim::ExclusionProcess proc(sim::ModelSpec{cfg.p, cfg.q}, sim::init_configuration(ic, dom, seed), seed);
  std::vector<double> row;
  for (double tau : cfg.tau) {
    proc.advance_to(tau * cfg.t_max);
    row.push_back(sim::height_at(proc.state(), 0));
  }
  return row;
}

namespace {

lpp::Geometry lpp_geometry(const ExperimentConfig& cfg) {
  lpp::Geometry g;
  g.kind = cfg.geometry == "point-to-line"  ? lpp::GeometryKind::PointToLine
           : cfg.geometry == "stationary" ? lpp::GeometryKind::StationaryBoundary
                                          : lpp::GeometryKind::PointToPoint;
  g.n = cfg.n;
  g.boundary_mean = cfg.boundary_mean;
  return g;
}

}  // namespace

std::vector<double> lpp_trial(const ExperimentConfig& cfg, std::uint64_t trial) {
  const double L = lpp::streamed_passage(lpp_geometry(cfg), RngSeed{cfg.master_seed, trial});
  return {L, lpp::scale_passage(L, cfg.n)};
}

std::vector<double> current_trial(const ExperimentConfig& cfg, std::uint64_t trial, std::uint64_t* events) {
  const RngSeed seed{cfg.master_seed, trial};
  sim::ExclusionProcess proc(
      sim::ModelSpec{cfg.p, cfg.q},
      sim::init_configuration(sim::InitialCondition::bernoulli(cfg.rho), sim::Domain::ring(cfg.ring_size), seed),
      seed);
  std::vector<double> row;
  for (double t : cfg.times) {
    proc.advance_to(t);
    row.push_back(sim::height_at(proc.state(), 0));
  }
  if (events) *events = proc.events();
  return row;
}

std::vector<std::vector<double>> read_ensemble(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IntegrityError("cannot read ensemble " + file.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      if (line.rfind("trial_index", 0) == 0) continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw IntegrityError("malformed ensemble cell '" + cell + "' in " + file.string());
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

using RowFn = std::function<std::vector<double>(std::uint64_t, std::uint64_t*)>;

RowFn row_function(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case Kind::CovarianceStep:
    case Kind::CovarianceFlat:
    case Kind::CovarianceStat:
      return [&cfg](std::uint64_t i, std::uint64_t* ev) { return covariance_trial(cfg, i, ev); };
    case Kind::LppFluct:
      return [&cfg](std::uint64_t i, std::uint64_t*) { return lpp_trial(cfg, i); };
    case Kind::SumRule:
      return [&cfg](std::uint64_t i, std::uint64_t* ev) { return current_trial(cfg, i, ev); };
    default:
      throw std::logic_error("not an ensemble kind");
  }
}

const char* kOutputs[] = {"ensemble.csv", "manifest.json", "results.json", "timing.json", "report.md"};

void clear_outputs(const fs::path& dir) {
  for (const char* f : kOutputs) fs::remove(dir / f);
}

// Verifies the ensemble file against the manifest and cuts rows written after
// the last checkpoint.
void reconcile_ensemble(const fs::path& file, Manifest& m) {
  if (m.ensemble_bytes == 0) return;
  if (!fs::exists(file)) throw IntegrityError("manifest records rows but " + file.string() + " is missing");
  const auto size = fs::file_size(file);
  if (size < m.ensemble_bytes)
    throw IntegrityError("ensemble file shorter than the manifest records (" + std::to_string(size) + " < " +
                         std::to_string(m.ensemble_bytes) + ")");
  if (size > m.ensemble_bytes) fs::resize_file(file, m.ensemble_bytes);
  if (m.completed > 0) {
    std::ifstream in(file, std::ios::binary);
    in.seekg(static_cast<std::streamoff>(m.offsets.back()));
    std::string line;
    std::getline(in, line);
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.substr(0, comma) != std::to_string(m.completed - 1))
      throw IntegrityError("last recorded ensemble row does not start with trial " + std::to_string(m.completed - 1));
  }
}

struct PoolStats {
  std::uint64_t computed = 0;
  std::uint64_t events = 0;
};

PoolStats run_pool(const ExperimentConfig& cfg, const fs::path& dir, Manifest& m, std::uint64_t end, int workers,
                   bool quiet) {
  const fs::path file = dir / "ensemble.csv";
  if (m.completed == 0) {
    std::ofstream out(file, std::ios::trunc | std::ios::binary);
    out << detail::provenance(cfg) << "\ntrial_index,seed";
    for (const auto& c : detail::ensemble_columns(cfg)) out << ',' << c;
    out << '\n';
    out.flush();
    m.ensemble_bytes = static_cast<std::uint64_t>(out.tellp());
    m.offsets.clear();
  }
  std::ofstream out(file, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot append to " + file.string());

  const RowFn fn = row_function(cfg);
  const std::uint64_t start = m.completed;
  std::atomic<std::uint64_t> next{start};
  std::atomic<bool> stop{false};
  std::mutex mu;
  std::map<std::uint64_t, std::string> pending;
  std::exception_ptr error;
  PoolStats st;
  const std::uint64_t checkpoint = 100;
  auto last_note = std::chrono::steady_clock::now();

  auto worker = [&]() {
    while (!stop) {
      const std::uint64_t i = next++;
      if (i >= end) break;
      std::uint64_t ev = 0;
      std::vector<double> row;
      try {
        row = fn(i, &ev);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
        stop = true;
        break;
      }
      std::string line = std::to_string(i) + ',' + std::to_string(cfg.master_seed);
      for (double v : row) line += ',' + detail::format_number(v);
      line += '\n';
      std::lock_guard<std::mutex> lock(mu);
      pending.emplace(i, std::move(line));
      st.events += ev;
      // Rows are appended strictly in trial order.
      for (auto it = pending.begin(); it != pending.end() && it->first == m.completed; it = pending.erase(it)) {
        out << it->second;
        m.offsets.push_back(m.ensemble_bytes);
        m.ensemble_bytes += it->second.size();
        ++m.completed;
        ++st.computed;
        if (m.completed % checkpoint == 0) {
          out.flush();
          if (!out) {
            if (!error) error = std::make_exception_ptr(std::runtime_error("write error on " + file.string()));
            stop = true;
          }
          m.save(dir);
        }
      }
      if (!quiet && std::chrono::steady_clock::now() - last_note > std::chrono::seconds(30)) {
        last_note = std::chrono::steady_clock::now();
        std::cerr << kind_name(cfg.kind) << ": " << m.completed << "/" << end << " trials\n";
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(std::max<std::uint64_t>(1, end - start))));
  for (int w = 0; w < n; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  out.flush();
  m.save(dir);
  if (error) std::rethrow_exception(error);
  return st;
}

void write_results(const ExperimentConfig& cfg, const fs::path& dir, const detail::Finalized& f) {
  json j;
  j["kind"] = kind_name(cfg.kind);
  j["config_hash"] = cfg.hash();
  j["master_seed"] = cfg.master_seed;
  j["trials"] = cfg.trials;
  j["code_version"] = kCodeVersion;
  j["checks"] = json::array();
  for (const auto& c : f.checks) j["checks"].push_back(detail::check_to_json(c));
  j["summary"] = f.summary;
  std::ofstream out(dir / "results.json", std::ios::trunc);
  out << j.dump(1) << '\n';
}

RunResult load_results(const ExperimentConfig& cfg, const fs::path& dir) {
  RunResult r;
  r.kind = cfg.kind;
  r.out_dir = dir;
  r.config_hash = cfg.hash();
  std::ifstream in(dir / "results.json");
  if (!in) throw IntegrityError("finished run without results.json in " + dir.string());
  json j;
  try {
    in >> j;
    for (const auto& c : j.at("checks")) r.checks.push_back(detail::check_from_json(c));
    r.summary = j.at("summary");
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("corrupt results.json: ") + e.what());
  }
  r.complete = true;
  return r;
}

RunResult execute(const ExperimentConfig& cfg, Manifest& m, const fs::path& dir, const RunOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const int workers = opt.workers.value_or(cfg.workers);
  if (workers < 1) throw ConfigError("workers must be >= 1");
  m.config = cfg.to_json();
  {
    std::ofstream c(dir / "config.json", std::ios::trunc);
    c << m.config.dump(1) << '\n';
  }
  RunResult r;
  r.kind = cfg.kind;
  r.out_dir = dir;
  r.config_hash = cfg.hash();
  r.trials_total = cfg.trials;
  PoolStats st;
  if (is_ensemble_kind(cfg.kind)) {
    reconcile_ensemble(dir / "ensemble.csv", m);
    std::uint64_t end = cfg.trials;
    if (opt.stop_after) end = std::min(end, m.completed + *opt.stop_after);
    if (m.completed < end) st = run_pool(cfg, dir, m, end, workers, opt.quiet);
    r.trials_done = std::min(m.completed, cfg.trials);
    r.trials_computed = st.computed;
    if (m.completed < cfg.trials) {
      m.finished = false;
      m.save(dir);
      r.complete = false;
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return r;
    }
  } else if (m.finished && fs::exists(dir / "results.json")) {
    RunResult done = load_results(cfg, dir);
    done.trials_total = done.trials_done = cfg.trials;
    return done;
  }
  const auto f = detail::finalize(cfg, dir);
  m.finished = true;
  m.save(dir);
  write_results(cfg, dir, f);
  r.complete = true;
  r.trials_done = cfg.trials;
  if (!is_ensemble_kind(cfg.kind)) r.trials_computed = cfg.trials;
  r.checks = f.checks;
  r.summary = f.summary;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (f.summary.contains("events")) st.events += f.summary["events"].get<std::uint64_t>();
  r.events_per_second = r.seconds > 0.0 ? static_cast<double>(st.events) / r.seconds : 0.0;
  std::ofstream timing(dir / "timing.json", std::ios::trunc);
  timing << json{{"seconds", r.seconds}, {"events", st.events}, {"events_per_second", r.events_per_second},
                 {"workers", workers}}
                .dump(1)
         << '\n';
  return r;
}

}  // namespace

RunResult run(const ExperimentConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  if (opt.out_dir.empty()) throw ConfigError("an output directory is required");
  const fs::path dir = opt.out_dir;
  fs::create_directories(dir);
  Manifest m;
  const bool existing = fs::exists(dir / "manifest.json");
  if (existing && !opt.force) {
    m = Manifest::load(dir);
    if (m.config_hash != cfg.hash())
      throw ConfigError("output directory " + dir.string() + " holds a run with config hash " + m.config_hash +
                        ", this config hashes to " + cfg.hash() + "; use --force to discard it");
  } else {
    clear_outputs(dir);
    m.config_hash = cfg.hash();
    m.code_version = kCodeVersion;
    m.save(dir);
  }
  return execute(cfg, m, dir, opt);
}

RunResult resume(const fs::path& out_dir, const std::optional<ExperimentConfig>& cfg_opt, const RunOptions& opt) {
  Manifest m = Manifest::load(out_dir);
  ExperimentConfig cfg;
  if (cfg_opt) {
    cfg = *cfg_opt;
    cfg.validate();
    if (cfg.hash() != m.config_hash)
      throw ConfigError("config hash " + cfg.hash() + " does not match the run's " + m.config_hash);
  } else {
    try {
      cfg = ExperimentConfig::from_json(m.config);
    } catch (const ConfigError& e) {
      throw IntegrityError(std::string("manifest config unreadable: ") + e.what());
    }
    if (cfg.hash() != m.config_hash) throw IntegrityError("manifest config does not hash to the recorded hash");
  }
  if (m.code_version != kCodeVersion)
    throw IntegrityError("run was produced by " + m.code_version + ", this is " + kCodeVersion);
  return execute(cfg, m, out_dir, opt);
}

}  // namespace kpz::exp

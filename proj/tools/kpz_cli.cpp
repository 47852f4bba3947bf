#include <iostream>

#include <CLI11.hpp>

#include "kpz/experiments.hpp"
#include "kpz/observables.hpp"

namespace ex = kpz::exp;

namespace {

int finish(const ex::RunResult& r) {
  if (!r.complete) {
    std::cout << ex::kind_name(r.kind) << ": " << r.trials_done << "/" << r.trials_total
              << " trials stored; continue with `resume --out " << r.out_dir.string() << "`\n";
    return static_cast<int>(ex::ExitCode::Success);
  }
  std::cout << ex::kind_name(r.kind) << " (" << r.config_hash << "): " << r.trials_computed << " trials computed, "
            << r.seconds << " s";
  if (r.events_per_second > 0.0) std::cout << ", " << r.events_per_second << " events/s";
  std::cout << "\n";
  for (const auto& c : r.checks)
    std::cout << "  [" << (c.passed ? "pass" : c.gating ? "FAIL" : "info") << "] " << c.name << " = " << c.value
              << (c.se > 0.0 ? " +- " + std::to_string(c.se) : "") << "\n";
  const auto rep = ex::report(r.out_dir);
  std::cout << "report: " << rep.document.string() << "\n";
  return static_cast<int>(r.exit_code());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KPZ two-time correlation experiments"};
  app.require_subcommand(1);

  std::string config, out;
  int workers = 0;
  bool force = false;
  std::uint64_t stop_after = 0;

  auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "output directory")->required();
  run->add_option("--workers", workers, "worker threads (default: config value)")->check(CLI::PositiveNumber);
  run->add_flag("--force", force, "discard a previous run with a different config");
  run->add_option("--stop-after", stop_after, "stop after this many new trials");

  auto* resume = app.add_subcommand("resume", "complete the missing trials of a run");
  resume->add_option("--out", out, "output directory of the run")->required()->check(CLI::ExistingDirectory);
  resume->add_option("--config", config, "config with the same hash (may raise the trial count)")
      ->check(CLI::ExistingFile);
  resume->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  resume->add_option("--stop-after", stop_after, "stop after this many new trials");

  auto* report = app.add_subcommand("report", "write report documents for an output directory");
  report->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    ex::RunOptions opt;
    opt.out_dir = out;
    opt.force = force;
    opt.quiet = false;
    if (workers > 0) opt.workers = workers;
    if (stop_after > 0) opt.stop_after = stop_after;
    if (run->parsed()) return finish(ex::run(ex::ExperimentConfig::load(config), opt));
    if (resume->parsed()) {
      std::optional<ex::ExperimentConfig> cfg;
      if (!config.empty()) cfg = ex::ExperimentConfig::load(config);
      return finish(ex::resume(out, cfg, opt));
    }
    const auto rep = ex::report(out);
    for (const auto& m : rep.missing) std::cout << "missing: " << m << "\n";
    std::cout << "report: " << rep.document.string() << "\n";
    return static_cast<int>(rep.code);
  } catch (const ex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
  } catch (const ex::IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
  } catch (const kpz::obs::EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
  }
  return static_cast<int>(ex::ExitCode::ConfigError);
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace kpz::exp {

inline constexpr const char* kCodeVersion = "kpz-1.0";

enum class ExitCode : int { Success = 0, ToleranceFailure = 2, ConfigError = 3 };

/// Invalid configuration or a run directory that does not match it.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corrupt or inconsistent manifest / ensemble files.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kind {
  CovarianceStep,
  CovarianceFlat,
  CovarianceStat,
  CurrentCorr,
  TwoPoint,
  SumRule,
  RayCurrent,
  LppFluct,
  FredholmTables,
  Constants,
};

std::string kind_name(Kind k);
Kind parse_kind(const std::string& s);
/// Kinds that persist one ensemble row per trial and support partial resume.
bool is_ensemble_kind(Kind k);

/// JSON schema (all keys except "kind" optional, defaults per kind):
///   kind, p, q, rho, t_max, tau | tau_points, trials, master_seed, workers,
///   ring_size, total_time, max_lag, bin_width, fit_lo, fit_hi, times, j_max,
///   origins, origin_spacing, velocity, y_max, lag_max, geometry, n,
///   boundary_mean, window_factor, horizon_check_stride, nodes, w_max.
struct ExperimentConfig {
  Kind kind = Kind::CovarianceStep;
  double p = 1.0;
  double q = 0.0;
  double rho = 0.5;
  double t_max = 1000.0;
  std::vector<double> tau;
  std::uint64_t trials = 10000;
  std::uint64_t master_seed = 1;
  int workers = 1;

  // current-corr
  std::int64_t ring_size = 2000;
  double total_time = 2e5;
  double max_lag = 50.0;
  double bin_width = 0.25;
  double fit_lo = 10.0;
  double fit_hi = 40.0;

  // two-point / sum-rule
  std::vector<double> times;
  std::int64_t j_max = 250;
  int origins = 5;
  double origin_spacing = 0.0;
  double window_factor = 6.0;

  // ray-current
  double velocity = 0.5;
  std::int64_t y_max = 200;
  std::int64_t lag_max = 60;

  // lpp-fluct
  std::string geometry = "point-to-point";
  int n = 1000;
  double boundary_mean = 2.0;

  // covariance-step/flat: every k-th trial is rerun on a doubled window.
  std::uint64_t horizon_check_stride = 100;

  // fredholm-tables
  int nodes = 70;
  double w_max = 3.0;

  static ExperimentConfig defaults(Kind k);
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  /// Throws ConfigError.
  void validate() const;
  /// Hash of every field that influences a trial row. Excludes trials and
  /// workers so a run can be extended or re-parallelized.
  std::string hash() const;
};

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<int> workers;
  bool force = false;
  /// Stop after this many newly completed trials (simulated interruption).
  std::optional<std::uint64_t> stop_after;
  bool quiet = true;
};

/// One comparison against a target. Rules: "abs" |v - target| <= tol,
/// "rel" |v - target| <= tol |target|, "below" v < tol, "se" |v - target| <= tol * se.
struct Check {
  std::string name;
  double value = 0.0;
  double target = 0.0;
  double tolerance = 0.0;
  double se = 0.0;
  std::string rule = "abs";
  std::string source;
  bool gating = true;
  bool passed = false;
};

Check make_check(std::string name, double value, double target, double tol, std::string rule, std::string source,
                 double se = 0.0, bool gating = true);

struct RunResult {
  Kind kind = Kind::CovarianceStep;
  std::filesystem::path out_dir;
  std::string config_hash;
  bool complete = false;
  std::uint64_t trials_done = 0;
  std::uint64_t trials_total = 0;
  std::uint64_t trials_computed = 0;  // in this invocation
  double events_per_second = 0.0;
  double seconds = 0.0;
  std::vector<Check> checks;
  nlohmann::json summary;

  bool all_passed() const;
  ExitCode exit_code() const;
};

struct Manifest {
  std::string config_hash;
  std::string code_version;
  nlohmann::json config;
  std::uint64_t completed = 0;
  std::vector<std::uint64_t> offsets;  // byte offset of each completed row
  std::uint64_t ensemble_bytes = 0;
  bool finished = false;

  static Manifest load(const std::filesystem::path& dir);  // IntegrityError
  void save(const std::filesystem::path& dir) const;       // atomic rename
  nlohmann::json to_json() const;
};

/// Reference values computed by the Fredholm module (cached per process).
struct References {
  double var_gue, var_goe, var_br, mean_br, c_step, c_flat;
};
const References& references();
/// c0 = (1/9) Gamma^{2/3} chi int|x| f_KPZ at Gamma = sqrt(2), chi = 1/4 (needs the f_KPZ table).
double c0_reference();

/// Per-trial ensemble row for the covariance kinds: h(0, tau_k t_max).
std::vector<double> covariance_trial(const ExperimentConfig& cfg, std::uint64_t trial, std::uint64_t* events = nullptr);
/// Same trial on a window of twice the radius (horizon validation).
std::vector<double> covariance_trial_wide(const ExperimentConfig& cfg, std::uint64_t trial);
/// Per-trial row for lpp-fluct: raw passage time and its scaled value.
std::vector<double> lpp_trial(const ExperimentConfig& cfg, std::uint64_t trial);
/// Per-trial row for sum-rule: J(t) through bond (0,1) at each configured time.
std::vector<double> current_trial(const ExperimentConfig& cfg, std::uint64_t trial, std::uint64_t* events = nullptr);

/// Reads ensemble.csv rows [trial_index, seed, values...]; skips '#' lines.
std::vector<std::vector<double>> read_ensemble(const std::filesystem::path& file);

RunResult run(const ExperimentConfig& cfg, const RunOptions& opt);
/// Continues a run from its manifest. An optional config must hash-match;
/// it may change the trial count.
RunResult resume(const std::filesystem::path& out_dir, const std::optional<ExperimentConfig>& cfg,
                 const RunOptions& opt);

struct ReportResult {
  ExitCode code = ExitCode::Success;
  std::vector<std::string> missing;
  std::filesystem::path document;
};
/// Writes report.md in every experiment directory found in out_dir (itself
/// or its immediate children) plus an index report.md in out_dir.
ReportResult report(const std::filesystem::path& out_dir);

}  // namespace kpz::exp

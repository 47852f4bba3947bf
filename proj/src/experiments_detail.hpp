#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kpz/experiments.hpp"

namespace kpz::exp::detail {

namespace fs = std::filesystem;

/// "# kind=... config_hash=... master_seed=... code_version=..." line.
std::string provenance(const ExperimentConfig& cfg);

/// Column names after trial_index,seed for an ensemble kind.
std::vector<std::string> ensemble_columns(const ExperimentConfig& cfg);

std::string format_number(double v);

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const ExperimentConfig& cfg, const std::vector<std::string>& header);
  void row(const std::vector<double>& values);
  void text_row(const std::vector<std::string>& cells);

 private:
  std::ofstream out_;
};

/// Plain whitespace-separated plot data with a provenance comment.
class PlotWriter {
 public:
  PlotWriter(const fs::path& path, const ExperimentConfig& cfg, const std::string& columns);
  void row(const std::vector<double>& values);

 private:
  std::ofstream out_;
};

struct Finalized {
  std::vector<Check> checks;
  nlohmann::json summary;
};

/// Builds every artifact of the experiment in `dir`. Ensemble kinds read
/// ensemble.csv; the other kinds compute their result here.
Finalized finalize(const ExperimentConfig& cfg, const fs::path& dir);

nlohmann::json check_to_json(const Check& c);
Check check_from_json(const nlohmann::json& j);

}  // namespace kpz::exp::detail

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "experiments_detail.hpp"

namespace kpz::exp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string rule_text(const Check& c) {
  if (c.rule == "abs") return "abs(v - " + num(c.target) + ") <= " + num(c.tolerance);
  if (c.rule == "rel") return "abs(v - " + num(c.target) + ") <= " + num(c.tolerance * 100.0) + "%";
  if (c.rule == "below") return "v < " + num(c.tolerance);
  if (c.rule == "se") return "abs(v - " + num(c.target) + ") <= " + num(c.tolerance) + " SE";
  return "holds";
}

// Artifacts each kind is expected to leave behind.
std::vector<std::string> expected_files(Kind k) {
  switch (k) {
    case Kind::CovarianceStep:
    case Kind::CovarianceFlat:
    case Kind::CovarianceStat:
      return {"ensemble.csv", "covariance.csv", "covariance.dat", "inset_zero.dat", "inset_one.dat", "plot.gp"};
    case Kind::CurrentCorr:
      return {"hcorr.csv", "hcorr.dat", "plot.gp"};
    case Kind::TwoPoint:
      return {"twopoint.csv", "collapse.dat", "plot.gp"};
    case Kind::SumRule:
      return {"ensemble.csv", "sumrule.csv"};
    case Kind::RayCurrent:
      return {"ray.csv", "ray.dat", "plot.gp"};
    case Kind::LppFluct:
      return {"ensemble.csv", "histogram.dat"};
    case Kind::FredholmTables:
      return {"dist_gue.csv", "dist_goe.csv", "dist_br.csv", "fkpz.csv", "constants.csv", "plot.gp"};
    case Kind::Constants:
      return {"constants.csv"};
  }
  return {};
}

struct DirStatus {
  std::string name;
  bool complete = false;
  bool passed = false;
  std::vector<std::string> missing;
};

DirStatus report_one(const fs::path& dir) {
  DirStatus st;
  st.name = dir.filename().string();
  std::ofstream doc(dir / "report.md", std::ios::trunc);
  Manifest m;
  try {
    m = Manifest::load(dir);
  } catch (const IntegrityError& e) {
    st.missing.push_back((dir / "manifest.json").string());
    doc << "# Report: " << st.name << "\n\nStatus: INTEGRITY ERROR (" << e.what() << ")\n";
    return st;
  }
  const std::string kind = m.config.value("kind", std::string("unknown"));
  doc << "# Report: " << kind << "\n\n";
  doc << "- directory: `" << dir.string() << "`\n- config hash: `" << m.config_hash << "`\n- master seed: "
      << m.config.value("master_seed", 0ull) << "\n- code version: " << m.code_version << "\n";
  if (m.config.contains("trials")) doc << "- trials completed: " << m.completed << " / " << m.config["trials"] << "\n";
  Kind k{};
  try {
    k = parse_kind(kind);
  } catch (const ConfigError&) {
    st.missing.push_back("valid kind in manifest");
  }
  for (const auto& f : expected_files(k))
    if (!fs::exists(dir / f)) st.missing.push_back((dir / f).string());
  std::ifstream in(dir / "results.json");
  if (!in) {
    st.missing.push_back((dir / "results.json").string());
    doc << "\nStatus: INCOMPLETE (no results; run `resume`)\n";
  } else {
    json j;
    in >> j;
    std::vector<Check> checks;
    for (const auto& c : j.at("checks")) checks.push_back(detail::check_from_json(c));
    st.complete = true;
    st.passed = std::all_of(checks.begin(), checks.end(), [](const Check& c) { return !c.gating || c.passed; });
    doc << "\nStatus: " << (st.passed ? "PASS" : "FAIL") << "\n\n";
    doc << "| check | value | SE | criterion | result | reference |\n|---|---|---|---|---|---|\n";
    for (const auto& c : checks)
      doc << "| " << c.name << " | " << num(c.value) << " | " << (c.se > 0.0 ? num(c.se) : "") << " | "
          << rule_text(c) << " | " << (c.passed ? "pass" : "FAIL") << (c.gating ? "" : " (info)") << " | "
          << c.source << " |\n";
    doc << "\n## Summary\n\n```json\n" << j.at("summary").dump(1) << "\n```\n";
    if (fs::exists(dir / "timing.json")) {
      std::ifstream t(dir / "timing.json");
      json tj;
      t >> tj;
      doc << "\nRuntime " << num(tj.value("seconds", 0.0)) << " s, " << num(tj.value("events_per_second", 0.0))
          << " events/s.\n";
    }
  }
  if (!st.missing.empty()) {
    doc << "\n## Missing artifacts\n\n";
    for (const auto& f : st.missing) doc << "- " << f << "\n";
  }
  doc << "\n## Plot data\n\n";
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".dat" || e.path().extension() == ".gp") doc << "- " << e.path().filename().string() << "\n";
  return st;
}

}  // namespace

ReportResult report(const fs::path& out_dir) {
  ReportResult res;
  if (!fs::is_directory(out_dir)) {
    res.code = ExitCode::ConfigError;
    res.missing.push_back(out_dir.string());
    return res;
  }
  std::vector<fs::path> dirs;
  if (fs::exists(out_dir / "manifest.json")) dirs.push_back(out_dir);
  for (const auto& e : fs::directory_iterator(out_dir))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());

  std::vector<DirStatus> all;
  for (const auto& d : dirs) all.push_back(report_one(d));
  bool any_fail = false, incomplete = dirs.empty();
  for (const auto& s : all) {
    for (const auto& m : s.missing) res.missing.push_back(m);
    incomplete = incomplete || !s.complete || !s.missing.empty();
    any_fail = any_fail || (s.complete && !s.passed);
  }
  res.document = out_dir / (dirs.size() == 1 && dirs[0] == out_dir ? "report.md" : "index.md");
  if (!(dirs.size() == 1 && dirs[0] == out_dir)) {
    std::ofstream idx(res.document, std::ios::trunc);
    idx << "# Experiment index\n\n";
    if (dirs.empty()) idx << "No experiment artifacts found: every experiment is missing.\n";
    for (const auto& s : all)
      idx << "- " << s.name << ": " << (!s.complete ? "INCOMPLETE" : s.passed ? "PASS" : "FAIL") << " (see "
          << s.name << "/report.md)\n";
  }
  res.code = incomplete ? ExitCode::ConfigError : any_fail ? ExitCode::ToleranceFailure : ExitCode::Success;
  return res;
}

}  // namespace kpz::exp

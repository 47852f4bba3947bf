#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "kpz/rng.hpp"

namespace kpz::sim {

class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct ModelSpec {
  double p = 1.0;  // right-jump rate
  double q = 0.0;  // left-jump rate

  static ModelSpec tasep() { return {1.0, 0.0}; }
  static ModelSpec ssep() { return {0.5, 0.5}; }
  bool is_tasep() const { return q == 0.0; }
  void validate() const;
};

struct InitialCondition {
  enum class Kind { Step, Flat, Bernoulli, Explicit };
  Kind kind = Kind::Step;
  double rho = 0.5;
  std::vector<std::uint8_t> sites;  // Explicit only, one entry per domain site

  static InitialCondition step() { return {Kind::Step, 0.5, {}}; }
  static InitialCondition flat() { return {Kind::Flat, 0.5, {}}; }
  static InitialCondition bernoulli(double rho) { return {Kind::Bernoulli, rho, {}}; }
  static InitialCondition explicit_sites(std::vector<std::uint8_t> s) { return {Kind::Explicit, 0.5, std::move(s)}; }
};

/// Ring(L): sites 0..L-1, bond b joins b and b+1 mod L.
/// Window(R): sites -R..R with closed ends, bond between j and j+1 for -R <= j < R.
struct Domain {
  enum class Kind { Ring, Window };
  Kind kind = Kind::Ring;
  std::int64_t size = 0;  // L or R
  std::optional<double> horizon_override;

  static Domain ring(std::int64_t L) { return {Kind::Ring, L, std::nullopt}; }
  static Domain window(std::int64_t R) { return {Kind::Window, R, std::nullopt}; }
  static Domain window(std::int64_t R, double horizon) { return {Kind::Window, R, horizon}; }
  /// Radius used for observations at the origin up to time t.
  static Domain window_for_time(double t);
  /// Even ring length used for stationary runs up to time t.
  static Domain ring_for_time(double t);

  std::int64_t site_count() const { return kind == Kind::Ring ? size : 2 * size + 1; }
  std::int64_t bond_count() const { return kind == Kind::Ring ? size : 2 * size; }
  std::int64_t first_site() const { return kind == Kind::Ring ? 0 : -size; }
  /// Latest time for which observables at the origin are exact (infinite on a ring).
  double horizon(const ModelSpec& model) const;
};

struct JumpEvent {
  double time;
  std::int64_t bond;  // left site of the bond, in lattice coordinates
  int direction;      // +1 right, -1 left
};

/// Occupation state with integrated bond currents and clock.
class OccupancyField {
 public:
  OccupancyField() = default;
  OccupancyField(Domain dom, std::vector<std::uint8_t> occupation);

  const Domain& domain() const { return domain_; }
  double time() const { return time_; }
  /// Occupation of lattice site j (ring sites are taken mod L).
  int occupied(std::int64_t j) const { return occupation_[index(j)]; }
  int initially_occupied(std::int64_t j) const { return initial_[index(j)]; }
  /// Signed integrated current across the bond (j, j+1) since time 0.
  std::int64_t bond_count(std::int64_t j) const { return bond_counts_[bond_index(j)]; }
  std::int64_t particle_count() const;
  const std::vector<std::uint8_t>& raw_occupation() const { return occupation_; }
  const std::vector<std::uint8_t>& raw_initial() const { return initial_; }
  const std::vector<std::int64_t>& raw_bond_counts() const { return bond_counts_; }

  /// Particle label at site j, -1 if empty. Labels are assigned left to right at
  /// construction when tracking is enabled.
  void enable_labels();
  int label(std::int64_t j) const { return labels_.empty() ? -1 : labels_[index(j)]; }
  bool labels_enabled() const { return !labels_.empty(); }

  /// Retain jump events on the given bonds (lattice coordinates).
  void enable_event_log(const std::vector<std::int64_t>& bonds);
  void enable_event_log_all();
  bool logs_bond(std::int64_t j) const;
  const std::vector<JumpEvent>& event_log(std::int64_t j) const;

  std::int64_t index(std::int64_t j) const;
  std::int64_t bond_index(std::int64_t j) const;
  std::int64_t site_of_index(std::int64_t i) const { return i + domain_.first_site(); }

 private:
  friend class ExclusionProcess;

  Domain domain_;
  double time_ = 0.0;
  std::vector<std::uint8_t> occupation_;
  std::vector<std::uint8_t> initial_;
  std::vector<std::int64_t> bond_counts_;
  std::vector<int> labels_;
  std::vector<std::int32_t> log_slot_;  // per bond, index into logs_ or -1
  std::vector<std::vector<JumpEvent>> logs_;
};

OccupancyField init_configuration(const InitialCondition& ic, const Domain& dom, const RngSeed& seed);

/// h(j, t): J(t) plus the half-unit density profile, J the current across (0,1).
double height_at(const OccupancyField& state, std::int64_t j);

/// (#right - #left) jumps across bond (j, j+1) with event time in (t0, t1].
std::int64_t integrated_current(const OccupancyField& state, std::int64_t bond, double t0, double t1);

/// Rejection-free continuous-time simulation. The pending next-event time is
/// part of the state, so the trajectory does not depend on how the time axis
/// is split into advance_to calls.
class ExclusionProcess {
 public:
  using Observer = std::function<void(const JumpEvent&)>;

  ExclusionProcess(ModelSpec model, OccupancyField state, RngSeed seed);

  void advance_to(double t_end);
  const OccupancyField& state() const { return state_; }
  const ModelSpec& model() const { return model_; }
  std::uint64_t events() const { return events_; }
  double total_rate() const;
  /// Called after every applied jump.
  void set_observer(Observer obs) { observer_ = std::move(obs); }

 private:
  void refresh_bond(std::int64_t b);
  void set_member(std::vector<std::int64_t>& list, std::vector<std::int32_t>& pos, std::int64_t b, bool on);
  void draw_next();
  std::int64_t right_site(std::int64_t b) const;

  ModelSpec model_;
  OccupancyField state_;
  RandomStream rng_;
  double horizon_;
  double next_time_ = 0.0;
  std::uint64_t events_ = 0;
  std::vector<std::int64_t> right_enabled_, left_enabled_;  // bond indices
  std::vector<std::int32_t> right_pos_, left_pos_;
  Observer observer_;
};

/// Convenience wrapper matching the process interface.
inline void advance_to(ExclusionProcess& proc, double t_end) { proc.advance_to(t_end); }

}  // namespace kpz::sim

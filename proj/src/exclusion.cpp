#include "kpz/exclusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace kpz::sim {

void ModelSpec::validate() const {
  if (!(p >= 0.0) || !(q >= 0.0) || !(p + q > 0.0))
    throw ConfigurationError("model rates must satisfy p, q >= 0 and p + q > 0");
}

Domain Domain::window_for_time(double t) {
  return window(static_cast<std::int64_t>(std::ceil(1.2 * t)) + 100);
}

Domain Domain::ring_for_time(double t) {
  return ring(2 * static_cast<std::int64_t>(std::ceil(1.1 * t)));
}

double Domain::horizon(const ModelSpec& model) const {
  if (kind == Kind::Ring) return std::numeric_limits<double>::infinity();
  if (horizon_override) return *horizon_override;
  // Discrepancies from the closed ends travel at most one site per clock ring.
  return std::max(0.0, (static_cast<double>(size) - 100.0) / (1.2 * (model.p + model.q)));
}

OccupancyField::OccupancyField(Domain dom, std::vector<std::uint8_t> occupation)
    : domain_(dom), occupation_(std::move(occupation)) {
  if (domain_.size <= 0) throw ConfigurationError("domain size must be positive");
  if (static_cast<std::int64_t>(occupation_.size()) != domain_.site_count())
    throw ConfigurationError("occupation length " + std::to_string(occupation_.size()) +
                             " does not match domain site count " + std::to_string(domain_.site_count()));
  for (auto& v : occupation_) v = v ? 1 : 0;
  initial_ = occupation_;
  bond_counts_.assign(static_cast<std::size_t>(domain_.bond_count()), 0);
  log_slot_.assign(bond_counts_.size(), -1);
}

std::int64_t OccupancyField::index(std::int64_t j) const {
  if (domain_.kind == Domain::Kind::Ring) {
    const std::int64_t L = domain_.size;
    return ((j % L) + L) % L;
  }
  const std::int64_t i = j + domain_.size;
  if (i < 0 || i >= domain_.site_count()) throw RangeError("site " + std::to_string(j) + " outside window");
  return i;
}

std::int64_t OccupancyField::bond_index(std::int64_t j) const {
  if (domain_.kind == Domain::Kind::Ring) return index(j);
  const std::int64_t i = j + domain_.size;
  if (i < 0 || i >= domain_.bond_count()) throw RangeError("bond " + std::to_string(j) + " outside window");
  return i;
}

std::int64_t OccupancyField::particle_count() const {
  std::int64_t n = 0;
  for (auto v : occupation_) n += v;
  return n;
}

void OccupancyField::enable_labels() {
  labels_.assign(occupation_.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < occupation_.size(); ++i)
    if (occupation_[i]) labels_[i] = next++;
}

void OccupancyField::enable_event_log(const std::vector<std::int64_t>& bonds) {
  for (std::int64_t j : bonds) {
    const std::int64_t b = bond_index(j);
    if (log_slot_[b] < 0) {
      log_slot_[b] = static_cast<std::int32_t>(logs_.size());
      logs_.emplace_back();
    }
  }
}

void OccupancyField::enable_event_log_all() {
  std::vector<std::int64_t> all(bond_counts_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = site_of_index(static_cast<std::int64_t>(i));
  enable_event_log(all);
}

bool OccupancyField::logs_bond(std::int64_t j) const { return log_slot_[bond_index(j)] >= 0; }

const std::vector<JumpEvent>& OccupancyField::event_log(std::int64_t j) const {
  const auto slot = log_slot_[bond_index(j)];
  if (slot < 0) throw RangeError("bond " + std::to_string(j) + " is not logged");
  return logs_[slot];
}

OccupancyField init_configuration(const InitialCondition& ic, const Domain& dom, const RngSeed& seed) {
  if (dom.size <= 0) throw ConfigurationError("domain size must be positive");
  const std::int64_t n = dom.site_count();
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(n), 0);
  auto site = [&](std::int64_t i) { return i + dom.first_site(); };
  switch (ic.kind) {
    case InitialCondition::Kind::Step:
      if (dom.kind == Domain::Kind::Ring) throw ConfigurationError("step initial condition needs a window domain");
      for (std::int64_t i = 0; i < n; ++i) occ[i] = site(i) <= 0;
      break;
    case InitialCondition::Kind::Flat:
      if (dom.kind == Domain::Kind::Ring && dom.size % 2) throw ConfigurationError("flat on a ring needs even L");
      for (std::int64_t i = 0; i < n; ++i) occ[i] = (site(i) % 2 == 0);
      break;
    case InitialCondition::Kind::Bernoulli: {
      if (!(ic.rho >= 0.0 && ic.rho <= 1.0)) throw ConfigurationError("Bernoulli density must lie in [0, 1]");
      RandomStream rng(seed, StreamPurpose::InitialCondition);
      for (std::int64_t i = 0; i < n; ++i) occ[i] = rng.bernoulli(ic.rho);
      break;
    }
    case InitialCondition::Kind::Explicit:
      if (static_cast<std::int64_t>(ic.sites.size()) != n)
        throw ConfigurationError("explicit configuration has " + std::to_string(ic.sites.size()) +
                                 " sites, domain has " + std::to_string(n));
      occ = ic.sites;
      break;
  }
  return OccupancyField(dom, std::move(occ));
}

double height_at(const OccupancyField& s, std::int64_t j) {
  double h = static_cast<double>(s.bond_count(0));
  if (j >= 1) {
    for (std::int64_t i = 1; i <= j; ++i) h += 0.5 * (1 - 2 * s.occupied(i));
  } else if (j <= -1) {
    for (std::int64_t i = j + 1; i <= 0; ++i) h -= 0.5 * (1 - 2 * s.occupied(i));
  }
  return h;
}

std::int64_t integrated_current(const OccupancyField& s, std::int64_t bond, double t0, double t1) {
  if (t1 < t0) throw RangeError("integrated_current: window end before start");
  if (t1 > s.time()) throw RangeError("integrated_current: window extends past the simulated time");
  const auto& log = s.event_log(bond);
  auto cmp = [](const JumpEvent& e, double t) { return e.time <= t; };
  auto lo = std::lower_bound(log.begin(), log.end(), t0, cmp);
  auto hi = std::lower_bound(lo, log.end(), t1, cmp);
  std::int64_t c = 0;
  for (auto it = lo; it != hi; ++it) c += it->direction;
  return c;
}

ExclusionProcess::ExclusionProcess(ModelSpec model, OccupancyField state, RngSeed seed)
    : model_(model), state_(std::move(state)), rng_(seed, StreamPurpose::Dynamics) {
  model_.validate();
  horizon_ = state_.domain().horizon(model_);
  const std::size_t nb = state_.bond_counts_.size();
  right_pos_.assign(nb, -1);
  left_pos_.assign(nb, -1);
  for (std::size_t b = 0; b < nb; ++b) refresh_bond(static_cast<std::int64_t>(b));
  next_time_ = state_.time_;
  draw_next();
}

std::int64_t ExclusionProcess::right_site(std::int64_t b) const {
  const std::int64_t n = static_cast<std::int64_t>(state_.occupation_.size());
  return b + 1 == n ? 0 : b + 1;
}

void ExclusionProcess::set_member(std::vector<std::int64_t>& list, std::vector<std::int32_t>& pos, std::int64_t b,
                                  bool on) {
  const bool present = pos[b] >= 0;
  if (on == present) return;
  if (on) {
    pos[b] = static_cast<std::int32_t>(list.size());
    list.push_back(b);
  } else {
    const std::int32_t k = pos[b];
    const std::int64_t last = list.back();
    list[k] = last;
    pos[last] = k;
    list.pop_back();
    pos[b] = -1;
  }
}

void ExclusionProcess::refresh_bond(std::int64_t b) {
  const auto& occ = state_.occupation_;
  const int a = occ[b], c = occ[right_site(b)];
  if (model_.p > 0.0) set_member(right_enabled_, right_pos_, b, a == 1 && c == 0);
  if (model_.q > 0.0) set_member(left_enabled_, left_pos_, b, a == 0 && c == 1);
}

double ExclusionProcess::total_rate() const {
  return model_.p * static_cast<double>(right_enabled_.size()) + model_.q * static_cast<double>(left_enabled_.size());
}

void ExclusionProcess::draw_next() {
  const double rate = total_rate();
  next_time_ = rate > 0.0 ? next_time_ + rng_.exponential(rate) : std::numeric_limits<double>::infinity();
}

void ExclusionProcess::advance_to(double t_end) {
  if (t_end < state_.time_) throw RangeError("advance_to: target time precedes current time");
  if (t_end > horizon_)
    throw RangeError("advance_to: t=" + std::to_string(t_end) + " beyond window horizon " + std::to_string(horizon_));
  auto& occ = state_.occupation_;
  const bool is_ring = state_.domain_.kind == Domain::Kind::Ring;
  const std::int64_t nb = static_cast<std::int64_t>(state_.bond_counts_.size());
  while (next_time_ <= t_end) {
    const double right_rate = model_.p * static_cast<double>(right_enabled_.size());
    const double rate = right_rate + model_.q * static_cast<double>(left_enabled_.size());
    std::int64_t b;
    int dir;
    if (model_.q == 0.0 || rng_.uniform() * rate < right_rate) {
      b = right_enabled_[rng_.below(right_enabled_.size())];
      dir = 1;
    } else {
      b = left_enabled_[rng_.below(left_enabled_.size())];
      dir = -1;
    }
    const std::int64_t r = right_site(b);
    std::swap(occ[b], occ[r]);
    if (!state_.labels_.empty()) std::swap(state_.labels_[b], state_.labels_[r]);
    state_.bond_counts_[b] += dir;
    state_.time_ = next_time_;
    ++events_;
    refresh_bond(b);
    if (is_ring || b > 0) refresh_bond(b == 0 ? nb - 1 : b - 1);
    if (is_ring || b + 1 < nb) refresh_bond(b + 1 == nb ? 0 : b + 1);
    const JumpEvent ev{next_time_, state_.site_of_index(b), dir};
    if (state_.log_slot_[b] >= 0) state_.logs_[state_.log_slot_[b]].push_back(ev);
    if (observer_) observer_(ev);
    draw_next();
  }
  state_.time_ = t_end;
}

}  // namespace kpz::sim

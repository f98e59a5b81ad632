#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <variant>
#include <vector>

#include "apm/common.hpp"

namespace apm {

// Groups are dense indices [0, group_count).
using GroupId = int;

struct DiscreteAgent {
  double score = 0;  // in [0,1]
  GroupId group = 0;
};

// Finite agent list with integer capacity. Scores must be pairwise distinct;
// ingest raw data through jitter_scores() first if ties are possible.
struct DiscreteEconomy {
  std::vector<DiscreteAgent> agents;
  int capacity = 0;
  int group_count = 0;

  void validate() const {
    if (capacity <= 0) throw ValidationError("discrete economy: capacity must be positive");
    if (capacity > static_cast<int>(agents.size()))
      throw ValidationError("discrete economy: capacity exceeds agent count");
    if (group_count <= 0) throw ValidationError("discrete economy: no groups");
    std::vector<double> s;
    s.reserve(agents.size());
    for (const auto& a : agents) {
      if (a.score < 0 || a.score > 1) throw ValidationError("discrete economy: score outside [0,1]");
      if (a.group < 0 || a.group >= group_count)
        throw ValidationError("discrete economy: group index out of range");
      s.push_back(a.score);
    }
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end())
      throw ValidationError("discrete economy: tied scores (jitter the data first)");
  }
};

// Deterministic tie-breaking jitter for raw data: magnitude 1e-12, driven by
// the seed and the agent's position so reruns are bit-identical.
inline void jitter_scores(std::vector<DiscreteAgent>& agents, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& a : agents) a.score = clamp01(a.score + (rng.uniform() - 0.5) * 1e-12);
}

// Piecewise-constant density on a uniform grid of `bins` cells over [0,1].
// density[g][i] is the per-unit-score density of group g on cell i.
struct ContinuumEconomy {
  int bins = 0;
  std::vector<std::vector<double>> density;  // [group][cell]
  double capacity = 0;

  int group_count() const { return static_cast<int>(density.size()); }
  double cell_width() const { return 1.0 / bins; }

  double group_mass(GroupId g) const {
    double m = 0;
    for (double d : density[g]) m += d;
    return m / bins;
  }
  double total_mass() const {
    double m = 0;
    for (int g = 0; g < group_count(); ++g) m += group_mass(g);
    return m;
  }

  void validate() const {
    if (bins <= 0) throw ValidationError("continuum economy: bins must be positive");
    if (density.empty()) throw ValidationError("continuum economy: no groups");
    for (const auto& row : density) {
      if (static_cast<int>(row.size()) != bins)
        throw ValidationError("continuum economy: density row size != bins");
      for (double d : row)
        if (!(d >= 0) || !std::isfinite(d))
          throw ValidationError("continuum economy: density must be finite and >= 0");
    }
    if (!(capacity > 0)) throw ValidationError("continuum economy: capacity must be positive");
    if (capacity > total_mass() + 1e-12)
      throw ValidationError("continuum economy: capacity exceeds total mass");
  }
};

using Economy = std::variant<DiscreteEconomy, ContinuumEconomy>;

inline int group_count(const Economy& e) {
  if (std::holds_alternative<DiscreteEconomy>(e)) return std::get<DiscreteEconomy>(e).group_count;
  return std::get<ContinuumEconomy>(e).group_count();
}

inline double capacity_of(const Economy& e) {
  if (std::holds_alternative<DiscreteEconomy>(e))
    return static_cast<double>(std::get<DiscreteEconomy>(e).capacity);
  return std::get<ContinuumEconomy>(e).capacity;
}

// Tail measure of one group above a cutoff: full cells plus a linearly
// interpolated share of the cutoff's cell. Monotone nonincreasing in cutoff.
inline double mass_above(const ContinuumEconomy& e, GroupId g, double cutoff) {
  cutoff = clamp01(cutoff);
  const double w = e.cell_width();
  const auto& row = e.density[g];
  int i = std::min(static_cast<int>(cutoff * e.bins), e.bins - 1);
  double m = (( (i + 1) * w) - cutoff) * row[i];
  for (int k = i + 1; k < e.bins; ++k) m += row[k] * w;
  return m;
}

// Same tail but weighted by h(score); the partial cell uses the midpoint of
// the admitted sub-interval, matching the allocation engine's quadrature.
inline double h_mass_above(const ContinuumEconomy& e, GroupId g, double cutoff,
                           const std::function<double(double)>& h) {
  cutoff = clamp01(cutoff);
  const double w = e.cell_width();
  const auto& row = e.density[g];
  int i = std::min(static_cast<int>(cutoff * e.bins), e.bins - 1);
  const double right = (i + 1) * w;
  double m = (right - cutoff) * row[i] * h(0.5 * (cutoff + right));
  for (int k = i + 1; k < e.bins; ++k) m += row[k] * w * h((k + 0.5) * w);
  return m;
}

// Discrete tails. marginal_fraction applies to the agent sitting exactly at
// the cutoff score (rationing surrogate for the uniform lottery).
inline double mass_above(const DiscreteEconomy& e, GroupId g, double cutoff,
                         double marginal_fraction = 0.0) {
  double m = 0;
  for (const auto& a : e.agents) {
    if (a.group != g) continue;
    if (a.score > cutoff) m += 1;
    else if (a.score == cutoff) m += marginal_fraction;
  }
  return m;
}

inline double h_mass_above(const DiscreteEconomy& e, GroupId g, double cutoff,
                           const std::function<double(double)>& h,
                           double marginal_fraction = 0.0) {
  double m = 0;
  for (const auto& a : e.agents) {
    if (a.group != g) continue;
    if (a.score > cutoff) m += h(a.score);
    else if (a.score == cutoff) m += marginal_fraction * h(a.score);
  }
  return m;
}

// One group's slice of an allocation. `cutoff` is the admission threshold
// (already interpolated inside the marginal cell for grid economies);
// `marginal_fraction` is the admitted share of the marginal cell/agent.
struct GroupCut {
  double cutoff = 1.0;
  double marginal_fraction = 0.0;
  double admitted = 0.0;  // x_m
};

struct CutoffAllocation {
  std::vector<GroupCut> groups;
  double marginal_rank = -kInf;  // bar R̄ of the producing fill, if any
  std::optional<double> score_index;  // s̄_h when the producer knew h

  double total() const {
    double t = 0;
    for (const auto& g : groups) t += g.admitted;
    return t;
  }
  std::vector<double> measures() const {
    std::vector<double> x;
    x.reserve(groups.size());
    for (const auto& g : groups) x.push_back(g.admitted);
    return x;
  }
};

// Weighted score segment used by every allocation routine. A continuum cell
// contributes lo < hi with uniform density inside; a discrete agent is a
// point atom (lo == hi) of its weight.
struct Atom {
  GroupId group = 0;
  double lo = 0;
  double hi = 0;
  double mass = 0;

  double mid() const { return 0.5 * (lo + hi); }
  bool is_point() const { return lo == hi; }
};

// Per-group atom lists, each sorted by descending score.
struct Pool {
  std::vector<std::vector<Atom>> groups;

  int group_count() const { return static_cast<int>(groups.size()); }
  double total_mass() const {
    double m = 0;
    for (const auto& g : groups)
      for (const auto& a : g) m += a.mass;
    return m;
  }
  double group_mass(GroupId g) const {
    double m = 0;
    for (const auto& a : groups[g]) m += a.mass;
    return m;
  }
};

inline Pool to_pool(const ContinuumEconomy& e) {
  Pool p;
  p.groups.resize(e.group_count());
  const double w = e.cell_width();
  for (int g = 0; g < e.group_count(); ++g) {
    for (int i = e.bins - 1; i >= 0; --i) {
      double d = e.density[g][i];
      if (d <= 0) continue;
      p.groups[g].push_back(Atom{g, i * w, (i + 1) * w, d * w});
    }
  }
  return p;
}

inline Pool to_pool(const DiscreteEconomy& e) {
  Pool p;
  p.groups.resize(e.group_count);
  for (const auto& a : e.agents) p.groups[a.group].push_back(Atom{a.group, a.score, a.score, 1.0});
  for (auto& g : p.groups)
    std::sort(g.begin(), g.end(), [](const Atom& a, const Atom& b) { return a.lo > b.lo; });
  return p;
}

inline Pool to_pool(const Economy& e) {
  if (std::holds_alternative<DiscreteEconomy>(e)) return to_pool(std::get<DiscreteEconomy>(e));
  return to_pool(std::get<ContinuumEconomy>(e));
}

// Finite-support belief over economies.
struct Belief {
  struct State {
    double weight = 0;
    Economy economy;
  };
  std::vector<State> states;
  bool heterogeneous = false;  // set to allow differing capacities/groups

  void validate() const {
    if (states.empty()) throw ValidationError("belief: no states");
    double sum = 0;
    for (const auto& s : states) {
      if (!(s.weight > 0)) throw ValidationError("belief: weights must be positive");
      sum += s.weight;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ValidationError("belief: weights must sum to 1");
    if (!heterogeneous) {
      int gc = group_count(states[0].economy);
      double q = capacity_of(states[0].economy);
      for (const auto& s : states) {
        if (group_count(s.economy) != gc)
          throw ValidationError("belief: states disagree on group set");
        if (std::abs(capacity_of(s.economy) - q) > 1e-12)
          throw ValidationError("belief: states disagree on capacity");
      }
    }
  }
};

}  // namespace apm

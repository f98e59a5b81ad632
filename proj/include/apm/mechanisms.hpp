#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "apm/common.hpp"
#include "apm/economy.hpp"
#include "apm/preferences.hpp"

namespace apm {

// ---------------------------------------------------------------------------
// Rank-and-fill engine shared by APM, priority, and quota mechanisms.
// ---------------------------------------------------------------------------

struct Fill {
  std::vector<std::vector<double>> fraction;  // admitted share per pool atom
  CutoffAllocation alloc;
  double bar = -kInf;  // rank of the marginal class
};

namespace detail {

inline GroupCut cut_from_fractions(const std::vector<Atom>& atoms,
                                   const std::vector<double>& frac) {
  GroupCut c;
  c.cutoff = 1.0;
  c.marginal_fraction = 0.0;
  double x = 0;
  int deepest = -1;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    if (frac[i] <= 0) continue;
    x += frac[i] * atoms[i].mass;
    deepest = static_cast<int>(i);
  }
  c.admitted = x;
  if (deepest >= 0) {
    const Atom& a = atoms[deepest];
    double f = frac[deepest];
    if (a.is_point()) {
      c.cutoff = a.lo;
      c.marginal_fraction = f;
    } else {
      c.cutoff = a.hi - f * (a.hi - a.lo);
      c.marginal_fraction = f;
    }
  }
  return c;
}

}  // namespace detail

// Admits atoms in descending rank until capacity q is filled. The marginal
// rank class is rationed proportionally across groups (deterministic stand-in
// for uniform tie-breaking); inside a group the rationed mass is taken in
// descending score order so the admitted set stays an upper score set.
// Within each group, ranks must be nonincreasing down the score order.
inline Fill fill_by_rank(const Pool& pool, const std::vector<std::vector<double>>& ranks,
                         double q) {
  const int M = pool.group_count();
  for (int g = 0; g < M; ++g) {
    for (std::size_t i = 0; i < pool.groups[g].size(); ++i) {
      double r = ranks[g][i];
      if (std::isnan(r)) throw ValidationError("fill_by_rank: NaN rank");
      if (i > 0 && r > ranks[g][i - 1] + 1e-9)
        throw IntegrityError("fill_by_rank: ranks increase down the score order (group " +
                             std::to_string(g) + ")");
    }
  }
  double total = pool.total_mass();
  if (total < q - 1e-12)
    throw ValidationError("fill_by_rank: infeasible, total mass " + std::to_string(total) +
                          " short of capacity " + std::to_string(q) + " by " +
                          std::to_string(q - total));

  struct Ref {
    double rank;
    int g;
    int i;
  };
  std::vector<Ref> order;
  for (int g = 0; g < M; ++g)
    for (std::size_t i = 0; i < pool.groups[g].size(); ++i)
      order.push_back({ranks[g][i], g, static_cast<int>(i)});
  std::sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) {
    if (a.rank != b.rank) return a.rank > b.rank;
    if (a.g != b.g) return a.g < b.g;
    return a.i < b.i;
  });

  Fill out;
  out.fraction.resize(M);
  for (int g = 0; g < M; ++g) out.fraction[g].assign(pool.groups[g].size(), 0.0);

  const double eps = 1e-12 * std::max(1.0, q);
  double cum = 0;
  std::size_t k = 0;
  while (k < order.size() && cum < q - eps) {
    // rank class [k, k2)
    std::size_t k2 = k;
    double class_mass = 0;
    while (k2 < order.size() && order[k2].rank == order[k].rank) {
      class_mass += pool.groups[order[k2].g][order[k2].i].mass;
      ++k2;
    }
    out.bar = order[k].rank;
    if (cum + class_mass <= q + eps) {
      for (std::size_t j = k; j < k2; ++j) out.fraction[order[j].g][order[j].i] = 1.0;
      cum += class_mass;
    } else {
      double remaining = q - cum;
      std::vector<double> class_mass_g(M, 0.0);
      for (std::size_t j = k; j < k2; ++j)
        class_mass_g[order[j].g] += pool.groups[order[j].g][order[j].i].mass;
      for (int g = 0; g < M; ++g) {
        if (class_mass_g[g] <= 0) continue;
        double take = remaining * class_mass_g[g] / class_mass;
        for (std::size_t j = k; j < k2 && take > 0; ++j) {
          if (order[j].g != g) continue;
          const Atom& a = pool.groups[g][order[j].i];
          double f = std::min(1.0, take / a.mass);
          out.fraction[g][order[j].i] = f;
          take -= f * a.mass;
        }
      }
      cum = q;
    }
    k = k2;
  }

  out.alloc.groups.resize(M);
  for (int g = 0; g < M; ++g)
    out.alloc.groups[g] = detail::cut_from_fractions(pool.groups[g], out.fraction[g]);
  out.alloc.marginal_rank = out.bar;
  return out;
}

// ---------------------------------------------------------------------------
// Adaptive priority mechanisms.
// ---------------------------------------------------------------------------

// Per-group priority map A_m(y, s): y is the same-group admitted measure (or
// count), s the score. Values are ordinal; the optimal APM keeps them in
// transformed space h(s) + u'_m(y) so they may exceed the raw score range.
struct AdaptivePriority {
  std::vector<std::function<double(double y, double s)>> value;
  bool monotone = false;
  std::string family = "custom";

  int group_count() const { return static_cast<int>(value.size()); }

  // Sampled monotonicity: decreasing in y, strictly increasing in s (64x64).
  bool verify_monotone(double y_max, int grid = 64) const {
    for (const auto& A : value) {
      for (int i = 0; i < grid; ++i) {
        double y = y_max * i / (grid - 1);
        double prev = A(y, 0.0);
        for (int j = 1; j < grid; ++j) {
          double s = static_cast<double>(j) / (grid - 1);
          double v = A(y, s);
          if (std::isfinite(prev) && !(v > prev)) return false;
          prev = v;
        }
      }
      for (int j = 0; j < grid; ++j) {
        double s = static_cast<double>(j) / (grid - 1);
        double prev = A(0.0, s);
        for (int i = 1; i < grid; ++i) {
          double y = y_max * i / (grid - 1);
          double v = A(y, s);
          if (v > prev + 1e-12 && std::isfinite(prev)) return false;
          prev = v;
        }
      }
    }
    return true;
  }

  // Raw-space boost families for user policies.
  static AdaptivePriority linear_boost(std::vector<double> base, std::vector<double> slope) {
    AdaptivePriority a;
    a.family = "boost-linear";
    bool ok = true;
    for (std::size_t g = 0; g < base.size(); ++g) {
      double b = base[g], m = slope[g];
      if (m < 0) ok = false;
      a.value.push_back([b, m](double y, double s) { return s + b - m * y; });
    }
    a.monotone = ok;
    return a;
  }

  // Step boosts: boost levels[k] while y <= thresholds[k], last level beyond.
  static AdaptivePriority step_boost(std::vector<std::vector<double>> thresholds,
                                     std::vector<std::vector<double>> levels) {
    AdaptivePriority a;
    a.family = "boost-step";
    a.monotone = true;
    for (std::size_t g = 0; g < thresholds.size(); ++g) {
      auto th = thresholds[g];
      auto lv = levels[g];
      if (lv.size() != th.size() + 1) throw ValidationError("step_boost: need one more level than thresholds");
      for (std::size_t k = 1; k < lv.size(); ++k)
        if (lv[k] > lv[k - 1]) a.monotone = false;
      a.value.push_back([th, lv](double y, double s) {
        std::size_t k = 0;
        while (k < th.size() && y > th[k]) ++k;
        return s + lv[k];
      });
    }
    return a;
  }

  // Per-group (y, s) grids with bilinear interpolation.
  static AdaptivePriority tabulated(std::vector<std::vector<double>> ygrid,
                                    std::vector<std::vector<double>> sgrid,
                                    std::vector<std::vector<std::vector<double>>> values,
                                    double y_max) {
    AdaptivePriority a;
    a.family = "tabulated";
    for (std::size_t g = 0; g < ygrid.size(); ++g) {
      auto yg = ygrid[g];
      auto sg = sgrid[g];
      auto vv = values[g];
      a.value.push_back([yg, sg, vv](double y, double s) {
        auto locate = [](const std::vector<double>& grid, double x) {
          std::size_t i = 0;
          while (i + 2 < grid.size() && x >= grid[i + 1]) ++i;
          double t = (x - grid[i]) / (grid[i + 1] - grid[i]);
          return std::make_pair(i, std::min(1.0, std::max(0.0, t)));
        };
        auto [iy, ty] = locate(yg, y);
        auto [is, ts] = locate(sg, s);
        double v00 = vv[iy][is], v01 = vv[iy][is + 1];
        double v10 = vv[iy + 1][is], v11 = vv[iy + 1][is + 1];
        return (1 - ty) * ((1 - ts) * v00 + ts * v01) + ty * ((1 - ts) * v10 + ts * v11);
      });
    }
    a.monotone = a.verify_monotone(y_max);
    return a;
  }
};

// The first-best adaptive priority: rank h(s) + u'_m(y), compared in
// transformed space (h^-1 is applied only for display).
inline AdaptivePriority optimal_apm(const Preferences& prefs, double y_max = 1.0) {
  AdaptivePriority a;
  a.family = "optimal";
  a.monotone = true;
  for (int g = 0; g < prefs.group_count(); ++g) {
    const auto& d = prefs.diversity[g];
    if (!d.du_nonincreasing(y_max))
      throw ValidationError("optimal_apm: non-concave diversity utility for group " +
                            std::to_string(g) + " (use the brute-force oracle instead)");
    auto h = prefs.h;
    a.value.push_back([h, d](double y, double s) { return h(s) + d.du(y); });
  }
  return a;
}

// Display form of an adaptive priority value for a given preference's h:
// clamps to [0,1] when the transformed value escapes h's range.
inline HInverse apm_display_score(const Preferences& prefs, const AdaptivePriority& apm, int g,
                                  double y, double s) {
  return h_inverse(prefs.h, apm.value[g](y, s));
}

// Greedy implementation of a monotone APM on an atom pool (Algorithm-style:
// rank every atom at the same-group mass above it, admit down the ranking).
inline Fill run_apm_greedy_fill(const AdaptivePriority& apm, const Pool& pool, double q) {
  if (!apm.monotone)
    throw ValidationError("run_apm_greedy: adaptive priority is not monotone; "
                          "enumerate fixed points instead");
  const int M = pool.group_count();
  if (apm.group_count() != M) throw ValidationError("run_apm_greedy: group count mismatch");
  std::vector<std::vector<double>> ranks(M);
  for (int g = 0; g < M; ++g) {
    double above = 0;
    ranks[g].reserve(pool.groups[g].size());
    for (const auto& a : pool.groups[g]) {
      ranks[g].push_back(apm.value[g](above, a.mid()));
      above += a.mass;
    }
  }
  Fill f = fill_by_rank(pool, ranks, q);

  // Fixed-point property at the final allocation: admitted atoms re-evaluated
  // at the final x outrank every rejected atom evaluated at the measure that
  // would include it (its same-group mass above), up to cell granularity.
  std::vector<double> x = f.alloc.measures();
  double admitted_min = kInf, rejected_max = -kInf;
  for (int g = 0; g < M; ++g) {
    for (std::size_t i = 0; i < pool.groups[g].size(); ++i) {
      double fr = f.fraction[g][i];
      if (fr > 0 && fr < 1) continue;  // marginal atom straddles the bar
      bool boundary = (i + 1 < pool.groups[g].size() && f.fraction[g][i + 1] != fr) ||
                      (i > 0 && f.fraction[g][i - 1] != fr);
      if (boundary) continue;
      if (fr == 1.0)
        admitted_min = std::min(admitted_min, apm.value[g](x[g], pool.groups[g][i].mid()));
      else
        rejected_max = std::max(rejected_max, ranks[g][i]);
    }
  }
  if (admitted_min < rejected_max - 1e-7)
    throw IntegrityError("run_apm_greedy: fixed-point check failed");
  return f;
}

inline CutoffAllocation run_apm_greedy(const AdaptivePriority& apm, const Economy& economy) {
  Pool pool = to_pool(economy);
  return run_apm_greedy_fill(apm, pool, capacity_of(economy)).alloc;
}

// ---------------------------------------------------------------------------
// Priority mechanisms.
// ---------------------------------------------------------------------------

struct PriorityPolicy {
  std::function<double(double s, int m)> value;
  bool monotone_in_score = false;
  std::string family = "custom";
  std::vector<double> boosts;  // populated for boost families

  static PriorityPolicy merit() {
    PriorityPolicy p;
    p.family = "merit";
    p.monotone_in_score = true;
    p.value = [](double s, int) { return s; };
    return p;
  }
  static PriorityPolicy additive_boost(std::vector<double> boosts) {
    PriorityPolicy p;
    p.family = "additive-boost";
    p.monotone_in_score = true;
    p.boosts = boosts;
    p.value = [boosts](double s, int m) { return s + boosts[m]; };
    return p;
  }
  // h(s) + b_m: ordering-equivalent to h^-1(h(s)+b_m).
  static PriorityPolicy transformed_boost(const ScalarMap& h, std::vector<double> boosts) {
    PriorityPolicy p;
    p.family = "transformed-boost";
    p.monotone_in_score = true;
    p.boosts = boosts;
    p.value = [h, boosts](double s, int m) { return h(s) + boosts[m]; };
    return p;
  }
  static PriorityPolicy group_constant(std::vector<double> levels) {
    PriorityPolicy p;
    p.family = "group-constant";
    p.monotone_in_score = true;  // weakly
    p.boosts = levels;
    p.value = [levels](double, int m) { return levels[m]; };
    return p;
  }

  bool verify_monotone(int groups, int samples = 256) const {
    for (int m = 0; m < groups; ++m) {
      double prev = value(0.0, m);
      for (int j = 1; j <= samples; ++j) {
        double s = static_cast<double>(j) / samples;
        double v = value(s, m);
        if (v < prev - 1e-12) return false;
        prev = v;
      }
    }
    return true;
  }
};

namespace detail {

// Cursor over one group's descending atoms supporting fractional consumption.
struct GroupCursor {
  const std::vector<Atom>* atoms;
  std::size_t idx = 0;
  double used = 0;  // mass already taken from atoms[idx]

  bool done() const { return idx >= atoms->size(); }
  const Atom& head() const { return (*atoms)[idx]; }
  double head_sup() const {
    const Atom& a = head();
    if (a.is_point()) return a.lo;
    return a.hi - (a.hi - a.lo) * (used / a.mass);
  }
  double remaining() const { return head().mass - used; }
};

// Consumes atom mass in descending order of a (weakly) score-monotone value.
// Segments are consumed continuously: the marginal cell is entered only as
// far as the value ordering allows, so cutoffs interpolate exactly. At a tied
// value, point atoms go first (their mass sits exactly at the tie score while
// a segment's mass lies below it); remaining ties split proportionally.
struct ValueConsumer {
  const Pool* pool;
  std::vector<std::vector<double>>* fraction;
  std::vector<GroupCursor> cur;

  explicit ValueConsumer(const Pool& p, std::vector<std::vector<double>>* frac)
      : pool(&p), fraction(frac), cur(p.group_count()) {
    for (int g = 0; g < p.group_count(); ++g) cur[g].atoms = &p.groups[g];
  }

  double take_from_head(int g, double amount) {
    double take = std::min(amount, cur[g].remaining());
    const Atom& a = cur[g].head();
    cur[g].used += take;
    (*fraction)[g][cur[g].idx] += take / a.mass;
    if (cur[g].used >= a.mass * (1 - 1e-15)) {
      (*fraction)[g][cur[g].idx] = std::min(1.0, (*fraction)[g][cur[g].idx]);
      cur[g].used = 0;
      ++cur[g].idx;
    }
    return take;
  }

  // Top scores of one group, ignoring other groups (reserve rounds).
  double consume_group(int g, double amount) {
    double left = amount;
    while (left > 1e-15 && !cur[g].done()) left -= take_from_head(g, left);
    return amount - left;
  }

  // value(g, s) must be nondecreasing in s within each group.
  double consume_by_value(const std::function<double(int, double)>& value, double amount) {
    double left = amount;
    const double eps = 1e-15 * std::max(1.0, amount);
    while (left > eps) {
      double best = -kInf;
      for (std::size_t g = 0; g < cur.size(); ++g)
        if (!cur[g].done()) best = std::max(best, value(g, cur[g].head_sup()));
      if (best == -kInf) break;

      std::vector<int> tied_points, tied_segs;
      double next = -kInf;
      for (std::size_t g = 0; g < cur.size(); ++g) {
        if (cur[g].done()) continue;
        double v = value(g, cur[g].head_sup());
        if (v == best) {
          if (cur[g].head().is_point()) tied_points.push_back(g);
          else tied_segs.push_back(g);
        } else {
          next = std::max(next, v);
        }
      }

      if (!tied_points.empty()) {
        double pool_mass = 0;
        for (int g : tied_points) pool_mass += cur[g].remaining();
        double take = std::min(left, pool_mass);
        for (int g : tied_points) take_from_head(g, take * cur[g].remaining() / pool_mass);
        left -= take;
        continue;
      }

      // segment heads: consume down to where the value reaches `next`
      double cap = 0;
      std::vector<double> step(tied_segs.size(), 0.0);
      for (std::size_t t = 0; t < tied_segs.size(); ++t) {
        int g = tied_segs[t];
        const Atom& a = cur[g].head();
        double sup = cur[g].head_sup();
        double floor_s = a.lo;
        if (value(g, a.lo) < next) {  // invert within [lo, sup]
          double lo = a.lo, hi = sup;
          for (int it = 0; it < 80 && hi - lo > 1e-15; ++it) {
            double mid = 0.5 * (lo + hi);
            if (value(g, mid) < next) lo = mid; else hi = mid;
          }
          floor_s = 0.5 * (lo + hi);
        }
        double density = a.mass / (a.hi - a.lo);
        step[t] = std::min(cur[g].remaining(), std::max(0.0, (sup - floor_s) * density));
        cap += step[t];
      }
      if (cap <= 0) {  // flat values: lump the whole tied remainder
        for (std::size_t t = 0; t < tied_segs.size(); ++t) {
          step[t] = cur[tied_segs[t]].remaining();
          cap += step[t];
        }
      }
      if (cap <= 1e-18) break;
      double take = std::min(left, cap);
      for (std::size_t t = 0; t < tied_segs.size(); ++t)
        take_from_head(tied_segs[t], take * step[t] / cap);
      left -= take;
    }
    return amount - left;
  }
};

}  // namespace detail

// Admits in descending priority with continuous consumption, so the marginal
// cell is split exactly where the bar falls; ties ration proportionally.
inline Fill run_priority_fill(const PriorityPolicy& policy, const Pool& pool, double q) {
  if (!policy.monotone_in_score)
    throw ValidationError("run_priority: policy must be (weakly) monotone in score");
  if (pool.total_mass() < q - 1e-12)
    throw ValidationError("run_priority: infeasible capacity");
  const int M = pool.group_count();
  Fill out;
  out.fraction.resize(M);
  for (int g = 0; g < M; ++g) out.fraction[g].assign(pool.groups[g].size(), 0.0);
  detail::ValueConsumer consumer(pool, &out.fraction);
  consumer.consume_by_value([&](int g, double s) { return policy.value(s, g); }, q);
  out.alloc.groups.resize(M);
  for (int g = 0; g < M; ++g)
    out.alloc.groups[g] = detail::cut_from_fractions(pool.groups[g], out.fraction[g]);
  return out;
}

inline CutoffAllocation run_priority(const PriorityPolicy& policy, const Economy& economy) {
  Pool pool = to_pool(economy);
  return run_priority_fill(policy, pool, capacity_of(economy)).alloc;
}

// ---------------------------------------------------------------------------
// Quota mechanisms.
// ---------------------------------------------------------------------------

struct QuotaPolicy {
  static constexpr int kResidual = -1;
  std::vector<double> quotas;   // reserved measure per group
  std::vector<int> precedence;  // permutation of {0..M-1} plus kResidual

  static QuotaPolicy quota_first(std::vector<double> quotas) {
    QuotaPolicy p;
    p.quotas = std::move(quotas);
    for (int g = 0; g < static_cast<int>(p.quotas.size()); ++g) p.precedence.push_back(g);
    p.precedence.push_back(kResidual);
    return p;
  }
  static QuotaPolicy quota_second(std::vector<double> quotas) {
    QuotaPolicy p;
    p.quotas = std::move(quotas);
    p.precedence.push_back(kResidual);
    for (int g = 0; g < static_cast<int>(p.quotas.size()); ++g) p.precedence.push_back(g);
    return p;
  }

  void validate(double q) const {
    double sum = 0;
    for (double v : quotas) {
      if (v < 0) throw ValidationError("quota policy: negative reserve");
      sum += v;
    }
    if (sum > q + 1e-9) throw ValidationError("quota policy: reserves exceed capacity");
    const int M = static_cast<int>(quotas.size());
    if (static_cast<int>(precedence.size()) != M + 1)
      throw ValidationError("quota policy: precedence must list every group plus the residual round");
    std::vector<bool> seen(M, false);
    bool residual = false;
    for (int v : precedence) {
      if (v == kResidual) {
        if (residual) throw ValidationError("quota policy: duplicate residual round");
        residual = true;
      } else {
        if (v < 0 || v >= M || seen[v]) throw ValidationError("quota policy: precedence not a bijection");
        seen[v] = true;
      }
    }
    if (!residual) throw ValidationError("quota policy: precedence missing residual round");
  }
};

// Processes reserve rounds in precedence order; each group round fills from
// the group's top scores, the residual round fills by raw score over all
// remaining agents. Shortfalls of already-processed reserves enlarge the
// residual; a final top-up keeps the resource fully allocated.
inline Fill run_quota_fill(const QuotaPolicy& policy, const Pool& pool, double q) {
  policy.validate(q);
  const int M = pool.group_count();
  if (static_cast<int>(policy.quotas.size()) != M)
    throw ValidationError("run_quota: group count mismatch");
  if (pool.total_mass() < q - 1e-12)
    throw ValidationError("run_quota: infeasible capacity");

  Fill out;
  out.fraction.resize(M);
  for (int g = 0; g < M; ++g) out.fraction[g].assign(pool.groups[g].size(), 0.0);
  detail::ValueConsumer consumer(pool, &out.fraction);
  auto raw_score = [](int, double s) { return s; };

  double admitted = 0;
  double reserved_later = 0;
  for (int v : policy.precedence)
    if (v != QuotaPolicy::kResidual) reserved_later += policy.quotas[v];

  for (int v : policy.precedence) {
    if (v == QuotaPolicy::kResidual) {
      double cap = q - reserved_later - admitted;
      if (cap > 0) admitted += consumer.consume_by_value(raw_score, cap);
    } else {
      reserved_later -= policy.quotas[v];
      admitted += consumer.consume_group(v, std::min(policy.quotas[v], q - admitted));
    }
  }
  if (admitted < q - 1e-12)  // reserve shortfalls reopen the merit round
    admitted += consumer.consume_by_value(raw_score, q - admitted);

  out.alloc.groups.resize(M);
  for (int g = 0; g < M; ++g)
    out.alloc.groups[g] = detail::cut_from_fractions(pool.groups[g], out.fraction[g]);
  return out;
}

inline CutoffAllocation run_quota(const QuotaPolicy& policy, const Economy& economy) {
  Pool pool = to_pool(economy);
  return run_quota_fill(policy, pool, capacity_of(economy)).alloc;
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

// Recomputes (x, s̄_h) from the stored cutoffs and checks them against the
// allocation's stored measures.
struct Measures {
  std::vector<double> x;
  double score_index = 0;
};

inline Measures measures_and_score_index(const Economy& economy, const CutoffAllocation& alloc,
                                         const Preferences& prefs) {
  Measures m;
  const int M = group_count(economy);
  if (static_cast<int>(alloc.groups.size()) != M)
    throw ValidationError("measures_and_score_index: group count mismatch");
  auto h = [&](double s) { return prefs.h(s); };
  for (int g = 0; g < M; ++g) {
    const auto& cut = alloc.groups[g];
    double x, sh;
    if (std::holds_alternative<ContinuumEconomy>(economy)) {
      const auto& e = std::get<ContinuumEconomy>(economy);
      x = cut.admitted > 0 ? mass_above(e, g, cut.cutoff) : 0.0;
      sh = cut.admitted > 0 ? h_mass_above(e, g, cut.cutoff, h) : 0.0;
    } else {
      const auto& e = std::get<DiscreteEconomy>(economy);
      x = mass_above(e, g, cut.cutoff, cut.marginal_fraction);
      sh = h_mass_above(e, g, cut.cutoff, h, cut.marginal_fraction);
    }
    if (std::abs(x - cut.admitted) > 1e-9)
      throw IntegrityError("allocation integrity: recomputed x differs for group " +
                           std::to_string(g) + " by " + std::to_string(x - cut.admitted));
    m.x.push_back(x);
    m.score_index += sh;
  }
  return m;
}

using Mechanism = std::function<CutoffAllocation(const Economy&)>;

inline Mechanism mech_apm(AdaptivePriority apm) {
  return [apm](const Economy& e) { return run_apm_greedy(apm, e); };
}
inline Mechanism mech_priority(PriorityPolicy p) {
  return [p](const Economy& e) { return run_priority(p, e); };
}
inline Mechanism mech_quota(QuotaPolicy p) {
  return [p](const Economy& e) { return run_quota(p, e); };
}

// Σ_ω Λ(ω) g(s̄_h + Σ u_m(x_m)) for the mechanism's allocation in each state.
inline double expected_utility(const Mechanism& mech, const Belief& belief,
                               const Preferences& prefs) {
  belief.validate();
  double total = 0;
  for (std::size_t i = 0; i < belief.states.size(); ++i) {
    try {
      CutoffAllocation alloc = mech(belief.states[i].economy);
      Measures m = measures_and_score_index(belief.states[i].economy, alloc, prefs);
      total += belief.states[i].weight * prefs.utility(m.score_index, m.x);
    } catch (const std::exception& ex) {
      throw ValidationError("expected_utility: state " + std::to_string(i) + ": " + ex.what());
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Discrete-economy mechanisms.
// ---------------------------------------------------------------------------

struct DiscreteAllocation {
  std::vector<int> counts;             // per group
  std::vector<std::vector<int>> admitted;  // agent indices per group, score-descending
  double utility = 0;
  bool tie_encountered = false;
};

namespace detail {

struct SortedGroups {
  // agent indices per group, sorted by descending score
  std::vector<std::vector<int>> idx;
  std::vector<std::vector<double>> h_prefix;  // h-mass of top-k agents
};

inline SortedGroups sort_groups(const DiscreteEconomy& e, const ScalarMap& h) {
  SortedGroups s;
  s.idx.resize(e.group_count);
  for (int i = 0; i < static_cast<int>(e.agents.size()); ++i)
    s.idx[e.agents[i].group].push_back(i);
  for (auto& v : s.idx)
    std::sort(v.begin(), v.end(), [&](int a, int b) { return e.agents[a].score > e.agents[b].score; });
  s.h_prefix.resize(e.group_count);
  for (int g = 0; g < e.group_count; ++g) {
    s.h_prefix[g].assign(s.idx[g].size() + 1, 0.0);
    for (std::size_t k = 0; k < s.idx[g].size(); ++k)
      s.h_prefix[g][k + 1] = s.h_prefix[g][k] + h(e.agents[s.idx[g][k]].score);
  }
  return s;
}

}  // namespace detail

// Utility of admitting each group's top counts[g] agents. Shared by the
// oracle and the greedy so equal compositions give bit-equal utilities.
inline double discrete_utility(const DiscreteEconomy& e, const Preferences& prefs,
                               const std::vector<int>& counts) {
  auto s = detail::sort_groups(e, prefs.h);
  double sbar = 0;
  std::vector<double> x;
  for (int g = 0; g < e.group_count; ++g) {
    sbar += s.h_prefix[g][counts[g]];
    x.push_back(counts[g]);
  }
  return prefs.utility(sbar, x);
}

// Exact optimum by enumerating composition vectors (within a group only
// score-descending prefixes can be optimal since h is increasing).
inline DiscreteAllocation brute_force_optimum(const DiscreteEconomy& e, const Preferences& prefs,
                                              long max_compositions = 2000000) {
  e.validate();
  const int M = e.group_count;
  auto s = detail::sort_groups(e, prefs.h);

  long combos = 1;
  for (int g = 0; g < M - 1; ++g) {
    combos *= (static_cast<long>(std::min<std::size_t>(s.idx[g].size(), e.capacity)) + 1);
    if (combos > max_compositions)
      throw ValidationError("brute_force_optimum: instance too large");
  }

  std::vector<int> counts(M, 0), best(M, 0);
  double best_val = -kInf;
  std::function<void(int, int)> rec = [&](int g, int left) {
    if (g == M - 1) {
      if (left > static_cast<int>(s.idx[g].size())) return;
      counts[g] = left;
      double sbar = 0;
      std::vector<double> x(M);
      for (int k = 0; k < M; ++k) {
        sbar += s.h_prefix[k][counts[k]];
        x[k] = counts[k];
      }
      double v = prefs.utility(sbar, x);
      if (v > best_val) {
        best_val = v;
        best = counts;
      }
      return;
    }
    int hi = std::min<int>(static_cast<int>(s.idx[g].size()), left);
    for (int c = 0; c <= hi; ++c) {
      counts[g] = c;
      rec(g + 1, left - c);
    }
  };
  rec(0, e.capacity);
  if (best_val == -kInf) throw ValidationError("brute_force_optimum: infeasible");

  DiscreteAllocation out;
  out.counts = best;
  out.admitted.resize(M);
  for (int g = 0; g < M; ++g)
    out.admitted[g].assign(s.idx[g].begin(), s.idx[g].begin() + best[g]);
  out.utility = discrete_utility(e, prefs, best);
  return out;
}

// Discrete adaptive priority: A_m(y, s) with y the count including the
// candidate. The optimal one is h(s) + u_m(y) - u_m(y-1).
struct DiscreteApm {
  std::function<double(int g, int y, double s)> value;
  bool monotone = false;
};

inline DiscreteApm optimal_apm_discrete(const Preferences& prefs, int q_max = 64) {
  for (int g = 0; g < prefs.group_count(); ++g) {
    const auto& u = prefs.diversity[g];
    double prev = kInf;
    for (int y = 1; y <= q_max; ++y) {
      double inc = u.u(y) - u.u(y - 1);
      if (inc > prev + 1e-12)
        throw ValidationError("optimal_apm_discrete: non-concave increments for group " +
                              std::to_string(g));
      prev = inc;
    }
  }
  DiscreteApm a;
  a.monotone = true;
  auto h = prefs.h;
  auto div = prefs.diversity;
  a.value = [h, div](int g, int y, double s) { return h(s) + div[g].u(y) - div[g].u(y - 1); };
  return a;
}

// Greedy: q rounds, each admitting the candidate with the highest marginal
// priority at the current counts; then verifies the swap conditions.
inline DiscreteAllocation run_apm_discrete(const DiscreteApm& apm, const DiscreteEconomy& e,
                                           const Preferences& prefs) {
  e.validate();
  if (!apm.monotone) throw ValidationError("run_apm_discrete: adaptive priority not monotone");
  const int M = e.group_count;
  auto s = detail::sort_groups(e, prefs.h);

  std::vector<int> counts(M, 0);
  bool tie = false;
  for (int step = 0; step < e.capacity; ++step) {
    int best_g = -1;
    double best_v = -kInf;
    for (int g = 0; g < M; ++g) {
      if (counts[g] >= static_cast<int>(s.idx[g].size())) continue;
      double score = e.agents[s.idx[g][counts[g]]].score;
      double v = apm.value(g, counts[g] + 1, score);
      if (v > best_v + 1e-15) {
        best_v = v;
        best_g = g;
      } else if (best_g >= 0 && std::abs(v - best_v) <= 1e-15) {
        tie = true;
      }
    }
    if (best_g < 0) throw ValidationError("run_apm_discrete: capacity exceeds agents");
    ++counts[best_g];
  }

  // Swap conditions on the final allocation: no rejected agent has strictly
  // higher priority (at counts+1) than an admitted agent (at counts).
  for (int g = 0; g < M; ++g) {
    if (counts[g] == 0) continue;
    double lowest_admitted = e.agents[s.idx[g][counts[g] - 1]].score;
    double vg = apm.value(g, counts[g], lowest_admitted);
    for (int g2 = 0; g2 < M; ++g2) {
      if (g2 == g || counts[g2] >= static_cast<int>(s.idx[g2].size())) continue;
      double top_rejected = e.agents[s.idx[g2][counts[g2]]].score;
      double vg2 = apm.value(g2, counts[g2] + 1, top_rejected);
      if (vg2 > vg + 1e-9)
        throw IntegrityError("run_apm_discrete: swap condition violated between groups " +
                             std::to_string(g) + " and " + std::to_string(g2));
    }
  }

  DiscreteAllocation out;
  out.counts = counts;
  out.admitted.resize(M);
  for (int g = 0; g < M; ++g)
    out.admitted[g].assign(s.idx[g].begin(), s.idx[g].begin() + counts[g]);
  out.utility = discrete_utility(e, prefs, counts);
  out.tie_encountered = tie;
  return out;
}

// ---------------------------------------------------------------------------
// Rationalization (when do priorities / quotas match the first-best).
// ---------------------------------------------------------------------------

template <typename PolicyT>
struct Rationalization {
  bool ok = false;
  PolicyT policy;
  std::string detail;
};

// First-best priority exists iff every group's diversity utility is linear;
// then P(s,m) = h(s) + u'_m in transformed space.
inline Rationalization<PriorityPolicy> rationalizing_priority(const Preferences& prefs) {
  Rationalization<PriorityPolicy> r;
  std::vector<double> slopes;
  for (int g = 0; g < prefs.group_count(); ++g) {
    const auto& d = prefs.diversity[g];
    if (!d.is_linear()) {
      r.detail = "group " + std::to_string(g) + " has non-linear diversity utility (" +
                 d.kind() + "); no first-best priority policy exists";
      return r;
    }
    slopes.push_back(d.du(0.0));
  }
  r.ok = true;
  r.policy = PriorityPolicy::transformed_boost(prefs.h, slopes);
  r.detail = "risk-neutral over diversity: constant marginal boosts";
  return r;
}

// First-best quota exists iff preferences are extreme-target with feasible
// targets; then Q_m = x_m^tar with the residual round processed last.
inline Rationalization<QuotaPolicy> rationalizing_quota(const Preferences& prefs, double q) {
  Rationalization<QuotaPolicy> r;
  std::vector<double> targets;
  if (!is_extreme_target(prefs, q, &targets)) {
    r.detail = "preferences are not extreme-target (per-group targets with dominant "
               "marginal value and feasible sum); no first-best quota policy exists";
    for (int g = 0; g < prefs.group_count(); ++g)
      if (prefs.diversity[g].kind() != "extreme-target")
        r.detail += " [group " + std::to_string(g) + ": " + prefs.diversity[g].kind() + "]";
    return r;
  }
  r.ok = true;
  r.policy = QuotaPolicy::quota_first(targets);  // residual processed last
  r.detail = "extremely risk-averse: quotas at the target levels, open slots last";
  return r;
}

// ---------------------------------------------------------------------------
// No-uncertainty equivalents and the cutoff-shift priority construction.
// ---------------------------------------------------------------------------

// Priority that reproduces a cutoff allocation: boost max_m h(S_m) - h(S_m)
// puts every group's cutoff at a common bar.
inline PriorityPolicy priority_from_cutoffs(const ScalarMap& h,
                                            const std::vector<double>& cutoffs) {
  double bar = -kInf;
  for (double s : cutoffs) bar = std::max(bar, h(s));
  std::vector<double> boosts;
  for (double s : cutoffs) boosts.push_back(bar - h(s));
  return PriorityPolicy::transformed_boost(h, boosts);
}

struct NoUncertaintyEquivalents {
  PriorityPolicy priority;
  QuotaPolicy quota;
  CutoffAllocation base;  // the optimal-APM allocation both policies reproduce
};

inline NoUncertaintyEquivalents no_uncertainty_equivalents(const Economy& economy,
                                                           const Preferences& prefs) {
  AdaptivePriority apm = optimal_apm(prefs, capacity_of(economy));
  CutoffAllocation base = run_apm_greedy(apm, economy);
  std::vector<double> cutoffs;
  for (const auto& g : base.groups) cutoffs.push_back(g.cutoff);
  NoUncertaintyEquivalents out{priority_from_cutoffs(prefs.h, cutoffs),
                               QuotaPolicy::quota_first(base.measures()), base};
  return out;
}

// ---------------------------------------------------------------------------
// Equivalent-subsidy diagnostic for precedence orders under a uniform lottery.
// ---------------------------------------------------------------------------

// Uniform lottery numbers on [0,100]; reserve-eligible applicants shifted to
// [alpha, 100+alpha]. Solves the market clearing for the subsidy alpha that
// reproduces the observed number of eligible admissions. Closed form.
inline double equivalent_subsidy(double n_general, double n_eligible, double visas,
                                 double eligible_admitted) {
  if (!(n_general > 0) || !(n_eligible > 0) || !(visas > 0))
    throw ValidationError("equivalent_subsidy: counts must be positive");
  if (eligible_admitted < 0 || eligible_admitted > std::min(n_eligible, visas))
    throw ValidationError("equivalent_subsidy: eligible admissions out of range");
  double general_admitted = visas - eligible_admitted;
  if (general_admitted < 0 || general_admitted > n_general)
    throw ValidationError("equivalent_subsidy: infeasible general admissions");
  double cutoff = 100.0 * (1.0 - general_admitted / n_general);
  if (cutoff < 0 || cutoff > 100)
    throw ValidationError("equivalent_subsidy: cutoff outside the lottery range");
  return 100.0 * eligible_admitted / n_eligible - 100.0 + cutoff;
}

// ---------------------------------------------------------------------------
// Non-monotone adaptive priorities: full fixed-point enumeration.
// ---------------------------------------------------------------------------

// Scans composition vectors on a grid and reports every allocation the APM
// implements (ordering + full-allocation conditions hold within tol). The
// caller, not this function, decides what to do with multiple fixed points.
inline std::vector<std::vector<double>> apm_fixed_points(const AdaptivePriority& apm,
                                                         const Pool& pool, double q,
                                                         int steps = 50, double tol = 1e-9) {
  const int M = pool.group_count();
  std::vector<double> gmass(M);
  for (int g = 0; g < M; ++g) gmass[g] = pool.group_mass(g);

  std::vector<std::vector<double>> found;
  std::vector<double> x(M, 0.0);

  // cutoff score for admitting mass x from the top of group g
  auto cutoff_at = [&](int g, double want) {
    double above = 0;
    for (const auto& a : pool.groups[g]) {
      if (above + a.mass >= want - 1e-15) {
        double f = (want - above) / a.mass;
        return a.is_point() ? a.lo : a.hi - f * (a.hi - a.lo);
      }
      above += a.mass;
    }
    return 0.0;
  };

  std::function<void(int, double)> rec = [&](int g, double left) {
    if (g == M - 1) {
      if (left > gmass[g] + 1e-12) return;
      x[g] = left;
      double admitted_min = kInf, rejected_max = -kInf;
      for (int k = 0; k < M; ++k) {
        double cut = x[k] > 0 ? cutoff_at(k, x[k]) : 1.0;
        for (const auto& a : pool.groups[k]) {
          double v = apm.value[k](x[k], a.mid());
          if (a.mid() >= cut && x[k] > 0) admitted_min = std::min(admitted_min, v);
          else rejected_max = std::max(rejected_max, v);
        }
      }
      if (admitted_min >= rejected_max - tol) found.push_back(x);
      return;
    }
    for (int i = 0; i <= steps; ++i) {
      double xi = std::min(gmass[g], q * i / steps);
      x[g] = xi;
      if (xi <= left + 1e-12) rec(g + 1, left - std::min(xi, left));
    }
  };
  rec(0, q);
  return found;
}

}  // namespace apm

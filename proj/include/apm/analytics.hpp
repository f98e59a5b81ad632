#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "apm/common.hpp"
#include "apm/economy.hpp"
#include "apm/mechanisms.hpp"
#include "apm/preferences.hpp"

namespace apm {

// ---------------------------------------------------------------------------
// The two-group school example with linear-quadratic preferences: minority
// mass kappa with uniform scores, majority mass 1-kappa all at the common
// score omega, capacity q. Group 0 is the minority throughout.
// ---------------------------------------------------------------------------

struct WeitzmanSetting {
  double kappa = 0.3;  // minority mass (and score density)
  double gamma = 1.0;  // diversity weight
  double beta = 1.0;   // risk aversion over minority admissions
  double q = 0.5;      // capacity
  std::vector<double> omegas;   // support of the majority score
  std::vector<double> weights;  // probabilities

  double mean_omega() const {
    double m = 0;
    for (std::size_t i = 0; i < omegas.size(); ++i) m += weights[i] * omegas[i];
    return m;
  }
  double var_omega() const {
    double m = mean_omega(), v = 0;
    for (std::size_t i = 0; i < omegas.size(); ++i)
      v += weights[i] * (omegas[i] - m) * (omegas[i] - m);
    return v;
  }
  double omega_lo() const { return *std::min_element(omegas.begin(), omegas.end()); }
  double omega_hi() const { return *std::max_element(omegas.begin(), omegas.end()); }

  // Interiority: affirmative action neither fills all slots nor vanishes in
  // any state.
  void validate() const {
    if (omegas.empty() || omegas.size() != weights.size())
      throw ValidationError("weitzman setting: omega grid and weights must match");
    double sum = 0;
    for (double w : weights) {
      if (!(w > 0)) throw ValidationError("weitzman setting: weights must be positive");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ValidationError("weitzman setting: weights must sum to 1");
    for (double o : omegas)
      if (o < 0 || o > 1) throw ValidationError("weitzman setting: omega outside [0,1]");
    if (!(kappa > 0 && kappa < 1) || !(q > 0 && q < 1) || gamma < 0 || beta < 0)
      throw ValidationError("weitzman setting: parameters out of range");
    double minkq = std::min(kappa, q);
    double denom = 1.0 / kappa + gamma * beta;
    bool upper = minkq > (1 + gamma - omega_lo()) / denom + kappa * (omega_hi() - omega_lo());
    bool lower = kappa * (1 - omega_lo()) < (1 + gamma - omega_hi()) / denom;
    if (!upper || !lower)
      throw ValidationError("weitzman setting: interiority conditions fail "
                            "(affirmative action would hit a corner in some state)");
  }

  // Payoff of admitting measure x of minority (top scores) plus q-x majority
  // in state omega; the quadratic form every mechanism below maximizes.
  double state_payoff(double x, double omega) const {
    return q * omega + (1 + gamma - omega) * x - 0.5 * (1.0 / kappa + gamma * beta) * x * x;
  }

  double clamp_x(double x) const { return std::min(std::min(kappa, q), std::max(0.0, x)); }

  // State-by-state admissions of each mechanism class.
  double x_optimal(double omega) const {
    return kappa * (1 + gamma - omega) / (1 + kappa * gamma * beta);
  }
  double x_priority(double alpha, double omega) const {
    return clamp_x(kappa * (1 + alpha - omega));
  }
  double x_quota_first(double Q, double omega) const {
    return clamp_x(std::max(Q, kappa * (1 - omega)));
  }
  double x_quota_second(double Q, double omega) const {
    return clamp_x(kappa * (1 - omega) + Q);
  }
};

struct WeitzmanValues {
  double v_star = 0;   // first-best (optimal APM)
  double v_p = 0;      // optimal priority
  double v_q = 0;      // optimal quota (processed first)
  double delta = 0;    // v_p - v_q
  double delta_star = 0;  // min(v*-v_p, v*-v_q)
  double alpha_star = 0;
  double q_star = 0;
  double guarantee = 0;
  double positive_selection = 0;
};

inline WeitzmanValues weitzman_closed_forms(const WeitzmanSetting& s) {
  s.validate();
  WeitzmanValues v;
  double eo = s.mean_omega(), var = s.var_omega();
  double denom = 1.0 / s.kappa + s.gamma * s.beta;
  double kgb = s.kappa * s.gamma * s.beta;

  double e_sq = 0;  // E[kappa (1+gamma-omega)^2]
  for (std::size_t i = 0; i < s.omegas.size(); ++i) {
    double t = 1 + s.gamma - s.omegas[i];
    e_sq += s.weights[i] * s.kappa * t * t;
  }
  v.v_star = s.q * eo + 0.5 * e_sq / (1 + kgb);
  v.q_star = (1 + s.gamma - eo) / denom;
  v.alpha_star = v.q_star / s.kappa - 1 + eo;
  v.v_q = s.q * eo + (1 + s.gamma - eo) * v.q_star - 0.5 * denom * v.q_star * v.q_star;
  v.delta = 0.5 * s.kappa * (1 - kgb) * var;
  v.v_p = v.v_q + v.delta;
  double loss_q = 0.5 * s.kappa * var / (1 + kgb);
  double loss_p = 0.5 * kgb * kgb * s.kappa * var / (1 + kgb);
  v.delta_star = kgb <= 1 ? loss_p : loss_q;
  v.guarantee = 0.5 * s.kappa * (1 + kgb) * var;
  v.positive_selection = s.kappa * var;
  return v;
}

// Exhaustive per-state grid search over admission levels and per-policy
// parameter grids; the independent check of the closed forms above.
inline WeitzmanValues weitzman_numeric(const WeitzmanSetting& s, int x_levels = 1000,
                                       int param_grid = 2000) {
  s.validate();
  WeitzmanValues v;
  const double x_max = std::min(s.kappa, s.q);

  double v_star = 0;
  for (std::size_t i = 0; i < s.omegas.size(); ++i) {
    double best = -kInf;
    for (int k = 0; k <= x_levels; ++k)
      best = std::max(best, s.state_payoff(x_max * k / x_levels, s.omegas[i]));
    v_star += s.weights[i] * best;
  }
  v.v_star = v_star;

  auto expected = [&](const std::function<double(double)>& x_of_omega) {
    double total = 0;
    for (std::size_t i = 0; i < s.omegas.size(); ++i)
      total += s.weights[i] * s.state_payoff(x_of_omega(s.omegas[i]), s.omegas[i]);
    return total;
  };

  double best_p = -kInf, best_alpha = 0;
  for (int k = 0; k <= param_grid; ++k) {
    double alpha = (1.0 + s.gamma) * k / param_grid;
    double val = expected([&](double o) { return s.x_priority(alpha, o); });
    if (val > best_p) {
      best_p = val;
      best_alpha = alpha;
    }
  }
  v.v_p = best_p;
  v.alpha_star = best_alpha;

  double best_q = -kInf, best_quota = 0;
  for (int k = 0; k <= param_grid; ++k) {
    double quota = x_max * k / param_grid;
    double val = expected([&](double o) { return s.x_quota_first(quota, o); });
    if (val > best_q) {
      best_q = val;
      best_quota = quota;
    }
  }
  v.v_q = best_q;
  v.q_star = best_quota;
  v.delta = v.v_p - v.v_q;
  v.delta_star = std::min(v.v_star - v.v_p, v.v_star - v.v_q);
  return v;
}

// Preferences of the example authority: h = id, u_minority linear-quadratic.
inline Preferences weitzman_prefs(const WeitzmanSetting& s) {
  Preferences p;
  p.h = ScalarMap::identity();
  p.diversity.push_back(DiversityUtility::quadratic(s.gamma, s.beta));
  p.diversity.push_back(DiversityUtility::linear(0.0));
  return p;
}

// One state as an atom pool: minority grid cells, majority point atom at
// omega. Keeping the majority an atom makes the precedence comparisons exact.
inline Pool weitzman_state_pool(const WeitzmanSetting& s, double omega, int bins = 2000) {
  Pool pool;
  pool.groups.resize(2);
  const double w = 1.0 / bins;
  for (int i = bins - 1; i >= 0; --i)
    pool.groups[0].push_back(Atom{0, i * w, (i + 1) * w, s.kappa * w});
  pool.groups[1].push_back(Atom{1, omega, omega, 1 - s.kappa});
  return pool;
}

// The same state as a gridded economy (majority mass folded into the cell
// containing omega); used by the file-format and belief-level tests.
inline ContinuumEconomy weitzman_state_economy(const WeitzmanSetting& s, double omega,
                                               int bins = 2000) {
  ContinuumEconomy e;
  e.bins = bins;
  e.capacity = s.q;
  e.density.resize(2);
  e.density[0].assign(bins, s.kappa);
  e.density[1].assign(bins, 0.0);
  int cell = std::min(bins - 1, static_cast<int>(omega * bins));
  e.density[1][cell] = (1 - s.kappa) * bins;
  return e;
}

inline Belief weitzman_belief(const WeitzmanSetting& s, int bins = 2000) {
  Belief b;
  for (std::size_t i = 0; i < s.omegas.size(); ++i)
    b.states.push_back({s.weights[i], Economy{weitzman_state_economy(s, s.omegas[i], bins)}});
  return b;
}

// Sweep rows for the figure-style CSV emitters.
struct SweepRow {
  std::string label;
  double param = 0;
  double positive_selection = 0;
  double guarantee = 0;
  double delta = 0;
  double loss_p = 0;
  double loss_q = 0;
  double delta_star = 0;
};

inline std::vector<SweepRow> weitzman_effects_sweep(WeitzmanSetting s, const std::string& which,
                                                    double lo, double hi, int steps) {
  std::vector<SweepRow> rows;
  for (int k = 0; k <= steps; ++k) {
    double p = lo + (hi - lo) * k / steps;
    WeitzmanSetting t = s;
    if (which == "beta") t.beta = p;
    else if (which == "kappa") t.kappa = p;
    else if (which == "gamma") t.gamma = p;
    else throw ValidationError("weitzman sweep: unknown parameter " + which);
    SweepRow r;
    r.label = which;
    r.param = p;
    double var = t.var_omega();
    double kgb = t.kappa * t.gamma * t.beta;
    r.positive_selection = t.kappa * var;
    r.guarantee = 0.5 * t.kappa * (1 + kgb) * var;
    r.delta = 0.5 * t.kappa * (1 - kgb) * var;
    r.loss_q = 0.5 * t.kappa * var / (1 + kgb);
    r.loss_p = 0.5 * kgb * kgb * t.kappa * var / (1 + kgb);
    r.delta_star = std::min(r.loss_p, r.loss_q);
    rows.push_back(r);
  }
  return rows;
}

// Boost curve of the optimal adaptive priority, A(y) = gamma (1 - beta y).
inline std::vector<std::pair<double, double>> weitzman_boost_curve(const WeitzmanSetting& s,
                                                                   int steps = 100) {
  std::vector<std::pair<double, double>> rows;
  double x_max = std::min(s.kappa, s.q);
  for (int k = 0; k <= steps; ++k) {
    double y = x_max * k / steps;
    rows.push_back({y, s.gamma * (1 - s.beta * y)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Four-student example: two certain majority students at score 1 and two
// minority students with iid U[0,1] scores; capacity 2; diversity bonus beta
// for admitting at least one minority student.
// ---------------------------------------------------------------------------

struct AppendixEValues {
  double v_p = 0;
  double v_q = 0;
  double alpha_star = 0;
};

inline AppendixEValues appendix_e_closed(double beta) {
  if (beta < 0) throw ValidationError("appendix_e: beta must be >= 0");
  AppendixEValues v;
  v.alpha_star = beta / (1 + beta);
  v.v_p = 1 + beta + 1.0 / (1 + beta);
  v.v_q = std::max(2.0, 5.0 / 3.0 + beta);
  return v;
}

inline Preferences appendix_e_prefs(double beta) {
  Preferences p;
  p.h = ScalarMap::identity();
  p.diversity.push_back(DiversityUtility::tabulated({0, 1, 2}, {0, beta, beta}));
  p.diversity.push_back(DiversityUtility::linear(0.0));
  return p;
}

inline DiscreteEconomy appendix_e_economy(double s3, double s4) {
  if (std::abs(s4 - s3) < 1e-9) s4 = s3 - 7e-10;  // quadrature diagonal
  DiscreteEconomy e;
  e.group_count = 2;
  e.capacity = 2;
  e.agents = {{s3, 0}, {s4, 0}, {1.0, 1}, {1.0 - 1e-9, 1}};
  return e;
}

// Runs the actual discrete mechanisms on a tensor Gauss grid over (s3, s4),
// with panels split at the priority kink so polynomial pieces integrate
// exactly. total nodes >= nodes_per_axis^2.
inline AppendixEValues appendix_e_quadrature(double beta, int nodes_per_axis = 200) {
  AppendixEValues closed = appendix_e_closed(beta);
  const double alpha = closed.alpha_star;
  Preferences prefs = appendix_e_prefs(beta);
  auto priority = PriorityPolicy::additive_boost({alpha, 0.0});
  auto quota_one = QuotaPolicy::quota_first({1.0, 0.0});

  auto eval = [&](const Mechanism& mech) {
    double split = clamp01(1 - alpha);
    std::vector<std::pair<double, double>> panels;
    if (split > 1e-12) panels.push_back({0.0, split});
    if (split < 1 - 1e-12) panels.push_back({split, 1.0});
    int per_panel = std::max(8, nodes_per_axis / std::max(1, static_cast<int>(panels.size())));
    GaussRule rule = gauss_legendre_01(per_panel);

    double total = 0;
    for (auto [a3, b3] : panels) {
      for (auto [a4, b4] : panels) {
        for (int i = 0; i < per_panel; ++i) {
          for (int j = 0; j < per_panel; ++j) {
            double s3 = a3 + (b3 - a3) * rule.nodes[i];
            double s4 = a4 + (b4 - a4) * rule.nodes[j];
            Economy e{appendix_e_economy(s3, s4)};
            CutoffAllocation alloc = mech(e);
            Measures m = measures_and_score_index(e, alloc, prefs);
            total += (b3 - a3) * (b4 - a4) * rule.weights[i] * rule.weights[j] *
                     prefs.utility(m.score_index, m.x);
          }
        }
      }
    }
    return total;
  };

  AppendixEValues v;
  v.alpha_star = alpha;
  v.v_p = eval(mech_priority(priority));
  v.v_q = std::max(2.0, eval(mech_quota(quota_one)));  // Q=0 yields 2 surely
  return v;
}

// Bracket the priority/quota crossing of the quadrature values.
inline double appendix_e_crossing(int nodes_per_axis = 120) {
  auto diff = [&](double beta) {
    auto v = appendix_e_quadrature(beta, nodes_per_axis);
    return v.v_p - v.v_q;
  };
  return bisect_root(diff, 0.35, 0.65, 1e-4);
}

}  // namespace apm

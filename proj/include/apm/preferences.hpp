#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "apm/common.hpp"

namespace apm {

// Strictly increasing scalar map on [0,1] (score transform h) or on the
// realized utility range (aggregator g).
class ScalarMap {
 public:
  static ScalarMap identity() {
    ScalarMap m;
    m.name_ = "identity";
    m.fn_ = [](double s) { return s; };
    return m;
  }
  static ScalarMap affine(double slope, double intercept) {
    if (!(slope > 0)) throw ValidationError("scalar map: affine slope must be > 0");
    ScalarMap m;
    m.name_ = "affine";
    m.params_ = {slope, intercept};
    m.fn_ = [slope, intercept](double s) { return slope * s + intercept; };
    return m;
  }
  static ScalarMap power(double p) {
    if (!(p > 0)) throw ValidationError("scalar map: power exponent must be > 0");
    ScalarMap m;
    m.name_ = "power";
    m.params_ = {p};
    m.fn_ = [p](double s) { return std::pow(s, p); };
    return m;
  }
  // Arbitrary user map; strict monotonicity is checked on a 1,024-point grid.
  static ScalarMap custom(std::function<double(double)> fn, std::string name = "custom") {
    ScalarMap m;
    m.name_ = std::move(name);
    m.fn_ = std::move(fn);
    m.check_increasing(0.0, 1.0);
    return m;
  }

  double operator()(double s) const { return fn_(s); }
  const std::string& name() const { return name_; }
  const std::vector<double>& params() const { return params_; }

  void check_increasing(double lo, double hi, int samples = 1024) const {
    double prev = fn_(lo);
    for (int i = 1; i <= samples; ++i) {
      double x = lo + (hi - lo) * i / samples;
      double v = fn_(x);
      if (!(v > prev)) throw ValidationError("scalar map '" + name_ + "' is not strictly increasing");
      prev = v;
    }
  }

 private:
  std::string name_ = "identity";
  std::vector<double> params_;
  std::function<double(double)> fn_ = [](double s) { return s; };
};

struct HInverse {
  double score = 0;
  bool clamped = false;  // v was outside [h(0), h(1)]
};

// Inverse of h by bisection to 1e-12. Values outside h's range clamp to the
// endpoint and set the flag; adaptive priorities may legitimately exceed the
// raw score range and are compared in transformed space, never through this.
inline HInverse h_inverse(const ScalarMap& h, double v) {
  const double lo = h(0.0), hi = h(1.0);
  if (!(hi > lo)) throw ValidationError("h_inverse: h is not increasing");
  if (v <= lo) return {0.0, v < lo};
  if (v >= hi) return {1.0, v > hi};
  double a = 0.0, b = 1.0;
  while (b - a > 1e-13) {
    double mid = 0.5 * (a + b);
    double hm = h(mid);
    if (hm == v) return {mid, false};
    if (hm < v) a = mid; else b = mid;
  }
  return {0.5 * (a + b), false};
}

// Concave per-group diversity utility with its derivative. Built-in families
// carry analytic derivatives; custom maps fall back to central differences.
class DiversityUtility {
 public:
  static DiversityUtility linear(double slope) {
    DiversityUtility u("linear", {slope});
    u.u_ = [slope](double x) { return slope * x; };
    u.du_ = [slope](double) { return slope; };
    return u;
  }

  // gamma*(x - beta*x^2/2); the linear-quadratic family.
  static DiversityUtility quadratic(double gamma, double beta) {
    DiversityUtility u("quadratic", {gamma, beta});
    u.u_ = [gamma, beta](double x) { return gamma * (x - 0.5 * beta * x * x); };
    u.du_ = [gamma, beta](double x) { return gamma * (1.0 - beta * x); };
    return u;
  }

  // c*sqrt(x); satisfies the Inada condition du -> inf at 0.
  static DiversityUtility scaled_sqrt(double c) {
    if (!(c > 0)) throw ValidationError("scaled_sqrt: coefficient must be > 0");
    DiversityUtility u("sqrt", {c});
    u.u_ = [c](double x) { return c * std::sqrt(std::max(0.0, x)); };
    u.du_ = [c](double x) { return x <= 0 ? kInf : c / (2.0 * std::sqrt(x)); };
    u.inada_ = true;
    return u;
  }

  // Marginal value k up to the target, zero beyond it.
  static DiversityUtility extreme_target(double x_tar, double k) {
    if (!(x_tar >= 0) || !(k > 0)) throw ValidationError("extreme_target: bad parameters");
    DiversityUtility u("extreme-target", {x_tar, k});
    u.u_ = [x_tar, k](double x) { return k * std::min(x, x_tar); };
    u.du_ = [x_tar, k](double x) { return x <= x_tar ? k : 0.0; };
    return u;
  }

  // beta*|x/q - target|^gamma with beta < 0: the signed loss from missing the
  // target share. x is a measure; q converts it to a share of capacity.
  static DiversityUtility cps(double beta, double gamma, double q, double target = 0.25) {
    if (!(beta <= 0)) throw ValidationError("cps: beta must be <= 0");
    if (!(gamma >= 1)) throw ValidationError("cps: gamma must be >= 1");
    if (!(q > 0)) throw ValidationError("cps: capacity must be > 0");
    DiversityUtility u("cps", {beta, gamma, q, target});
    u.u_ = [=](double x) { return beta * std::pow(std::abs(x / q - target), gamma); };
    u.du_ = [=](double x) {
      double z = x / q - target;
      if (z == 0) return gamma > 1 ? 0.0 : -beta / q;  // gamma==1: kink, left slope
      return beta * gamma * std::pow(std::abs(z), gamma - 1.0) * (z > 0 ? 1.0 : -1.0) / q;
    };
    return u;
  }

  // Loss only while under-represented; flat above the target.
  static DiversityUtility cps_underrep(double beta, double gamma, double q, double target = 0.25) {
    if (!(beta <= 0)) throw ValidationError("cps_underrep: beta must be <= 0");
    if (!(gamma >= 1)) throw ValidationError("cps_underrep: gamma must be >= 1");
    DiversityUtility u("cps-underrep-only", {beta, gamma, q, target});
    u.u_ = [=](double x) {
      double gap = std::max(0.0, target - x / q);
      return beta * std::pow(gap, gamma);
    };
    u.du_ = [=](double x) {
      double gap = target - x / q;
      if (gap <= 0) return 0.0;
      return -beta * gamma * std::pow(gap, gamma - 1.0) / q;
    };
    return u;
  }

  // Separate slopes below (beta_l) and above (beta_h) the target.
  static DiversityUtility cps_asymmetric(double beta_l, double beta_h, double gamma, double q,
                                         double target = 0.25) {
    if (!(beta_l <= 0) || !(beta_h <= 0)) throw ValidationError("cps_asymmetric: betas must be <= 0");
    if (!(gamma >= 1)) throw ValidationError("cps_asymmetric: gamma must be >= 1");
    DiversityUtility u("cps-asymmetric", {beta_l, beta_h, gamma, q, target});
    u.u_ = [=](double x) {
      double z = x / q - target;
      return z <= 0 ? beta_l * std::pow(-z, gamma) : beta_h * std::pow(z, gamma);
    };
    u.du_ = [=](double x) {
      double z = x / q - target;
      if (z == 0) return 0.0;
      return z < 0 ? -beta_l * gamma * std::pow(-z, gamma - 1.0) / q
                   : beta_h * gamma * std::pow(z, gamma - 1.0) / q;
    };
    return u;
  }

  // Piecewise-linear utility through the given knots; du is the segment slope
  // (right-continuous). Slopes must be nonincreasing.
  static DiversityUtility tabulated(std::vector<double> xs, std::vector<double> us) {
    if (xs.size() < 2 || xs.size() != us.size())
      throw ValidationError("tabulated utility: need matching grids with >= 2 points");
    for (std::size_t i = 1; i < xs.size(); ++i)
      if (!(xs[i] > xs[i - 1])) throw ValidationError("tabulated utility: x grid must increase");
    std::vector<double> slopes(xs.size() - 1);
    for (std::size_t i = 0; i + 1 < xs.size(); ++i)
      slopes[i] = (us[i + 1] - us[i]) / (xs[i + 1] - xs[i]);
    for (std::size_t i = 1; i < slopes.size(); ++i)
      if (slopes[i] > slopes[i - 1] + 1e-12)
        throw ValidationError("tabulated utility: slopes must be nonincreasing (concavity)");
    DiversityUtility u("tabulated", {});
    auto seg = [xs](double x) {
      std::size_t i = 0;
      while (i + 2 < xs.size() && x >= xs[i + 1]) ++i;
      return i;
    };
    u.u_ = [xs, us, slopes, seg](double x) {
      std::size_t i = seg(x);
      return us[i] + slopes[i] * (x - xs[i]);
    };
    u.du_ = [slopes, seg](double x) { return slopes[seg(x)]; };
    return u;
  }

  static DiversityUtility custom(std::function<double(double)> u_fn,
                                 std::function<double(double)> du_fn = nullptr) {
    DiversityUtility u("custom", {});
    u.u_ = std::move(u_fn);
    if (du_fn) {
      u.du_ = std::move(du_fn);
    } else {
      auto f = u.u_;
      u.du_ = [f](double x) {
        const double h = 1e-6;
        double lo = std::max(0.0, x - h);
        return (f(x + h) - f(lo)) / (x + h - lo);
      };
    }
    return u;
  }

  double u(double x) const { return u_(x); }
  double du(double x) const { return du_(x); }
  const std::string& kind() const { return kind_; }
  const std::vector<double>& params() const { return params_; }
  bool inada() const { return inada_; }

  bool is_linear() const { return kind_ == "linear"; }

  // Sampled concavity check: du nonincreasing on [0, hi].
  bool du_nonincreasing(double hi, int samples = 256, double tol = 1e-9) const {
    double prev = du_(hi > 0 ? hi * 1e-9 : 0.0);
    for (int i = 1; i <= samples; ++i) {
      double x = hi * i / samples;
      double v = du_(x);
      if (v > prev + tol) return false;
      prev = v;
    }
    return true;
  }

 private:
  DiversityUtility() = default;
  DiversityUtility(std::string kind, std::vector<double> params)
      : kind_(std::move(kind)), params_(std::move(params)) {}

  std::string kind_ = "custom";
  std::vector<double> params_;
  std::function<double(double)> u_;
  std::function<double(double)> du_;
  bool inada_ = false;
};

// Concave utility over the full admission vector, for cross-group diversity
// concerns. Partials default to central differences.
struct NonSeparableDiversity {
  std::function<double(const std::vector<double>&)> u;
  std::function<std::vector<double>(const std::vector<double>&)> partials;

  static NonSeparableDiversity from_value(std::function<double(const std::vector<double>&)> fn) {
    NonSeparableDiversity d;
    d.u = std::move(fn);
    auto f = d.u;
    d.partials = [f](const std::vector<double>& x) {
      std::vector<double> g(x.size());
      const double h = 1e-6;
      for (std::size_t m = 0; m < x.size(); ++m) {
        auto xp = x, xm = x;
        xp[m] += h;
        xm[m] = std::max(0.0, xm[m] - h);
        g[m] = (f(xp) - f(xm)) / (xp[m] - xm[m]);
      }
      return g;
    };
    return d;
  }

  // Random midpoint concavity probe: u(x/2 + y/2) >= u(x)/2 + u(y)/2 - 1e-9.
  bool concavity_spot_check(int dim, double hi, Rng& rng, int trials = 64) const {
    for (int t = 0; t < trials; ++t) {
      std::vector<double> x(dim), y(dim), mid(dim);
      for (int m = 0; m < dim; ++m) {
        x[m] = rng.uniform(0.0, hi);
        y[m] = rng.uniform(0.0, hi);
        mid[m] = 0.5 * (x[m] + y[m]);
      }
      if (u(mid) < 0.5 * u(x) + 0.5 * u(y) - 1e-9) return false;
    }
    return true;
  }
};

struct Preferences {
  ScalarMap h = ScalarMap::identity();
  ScalarMap g = ScalarMap::identity();
  std::vector<DiversityUtility> diversity;  // one per group
  std::optional<NonSeparableDiversity> nonseparable;

  int group_count() const { return static_cast<int>(diversity.size()); }

  double utility(double sbar_h, const std::vector<double>& x) const {
    double idx = sbar_h;
    if (nonseparable) {
      idx += nonseparable->u(x);
    } else {
      if (x.size() != diversity.size())
        throw ValidationError("preferences: admission vector size != group count");
      for (std::size_t m = 0; m < x.size(); ++m) idx += diversity[m].u(x[m]);
    }
    return g(idx);
  }

  // h(1) + u'_n(0) > h(0) + u'_m(q) for all m, n: diversity concerns never
  // swamp scores entirely.
  bool nontrivial(double q) const {
    double min_lhs = kInf, max_rhs = -kInf;
    for (const auto& d : diversity) {
      min_lhs = std::min(min_lhs, h(1.0) + d.du(0.0));
      max_rhs = std::max(max_rhs, h(0.0) + d.du(q));
    }
    return min_lhs > max_rhs;
  }

  // The full-allocation condition h(0) + u'_m(q) >= 0 is advisory only; some
  // adversarial constructions sit near its boundary.
  std::vector<std::string> warnings(double q) const {
    std::vector<std::string> w;
    for (std::size_t m = 0; m < diversity.size(); ++m)
      if (h(0.0) + diversity[m].du(q) < 0)
        w.push_back("group " + std::to_string(m) +
                    ": h(0) + u'(q) < 0 (may prefer not to fill capacity)");
    return w;
  }
};

// Extreme risk-aversion conditions: per-group targets whose marginal value
// dominates any score gain below target and vanishes above, with feasible sum.
inline bool is_extreme_target(const Preferences& p, double q, std::vector<double>* targets = nullptr) {
  double span = p.h(1.0) - p.h(0.0);
  double total = 0;
  std::vector<double> tar;
  for (const auto& d : p.diversity) {
    if (d.kind() != "extreme-target") return false;
    double x_tar = d.params()[0], k = d.params()[1];
    if (!(k >= span)) return false;
    tar.push_back(x_tar);
    total += x_tar;
  }
  if (total > q + 1e-12) return false;
  if (targets) *targets = tar;
  return true;
}

inline DiversityUtility make_extreme_target(const ScalarMap& h, double x_tar) {
  // default slope 10*(h(1)-h(0)): strict dominance with margin
  return DiversityUtility::extreme_target(x_tar, 10.0 * (h(1.0) - h(0.0)));
}

}  // namespace apm

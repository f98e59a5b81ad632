#include <catch2/catch_amalgamated.hpp>

#include "apm/analytics.hpp"
#include "apm/economy.hpp"
#include "apm/mechanisms.hpp"
#include "apm/preferences.hpp"
#include "testkit.hpp"

using namespace apm;
using Catch::Approx;

namespace {

WeitzmanSetting example_setting() {
  WeitzmanSetting s;
  s.kappa = 0.4;
  s.gamma = 0.5;
  s.beta = 1.0;
  s.q = 0.5;
  s.omegas = {0.80, 0.85, 0.90};
  s.weights = {0.3, 0.4, 0.3};
  return s;
}

}  // namespace

TEST_CASE("optimal APM formula", "[mechanisms][apm]") {
  SECTION("linear diversity gives a constant boost") {
    Preferences p;
    p.diversity.push_back(DiversityUtility::linear(0.2));
    auto apm = optimal_apm(p);
    for (double y : {0.0, 0.3, 0.9})
      for (double s : {0.1, 0.5, 0.8}) CHECK(apm.value[0](y, s) == Approx(s + 0.2).margin(1e-15));
    CHECK(apm.monotone);
    CHECK(apm.verify_monotone(1.0));
  }
  SECTION("linear-quadratic diversity reproduces the gamma(1-beta y) boost") {
    auto s = example_setting();
    auto apm = optimal_apm(weitzman_prefs(s));
    for (double y : {0.0, 0.1, 0.2, 0.35})
      CHECK(apm.value[0](y, 0.5) - 0.5 == Approx(s.gamma * (1 - s.beta * y)).margin(1e-14));
  }
  SECTION("cps boost vanishes at the target share of capacity") {
    double q = 0.3;
    Preferences p;
    for (int t = 0; t < 4; ++t) p.diversity.push_back(DiversityUtility::cps(-209.5, 2.11, q));
    auto apm = optimal_apm(p, q);
    CHECK(apm.value[0](0.25 * q, 0.6) - 0.6 == Approx(0.0).margin(1e-12));
    CHECK(apm.value[0](0.10 * q, 0.6) - 0.6 > 0.0);  // boost when underrepresented
    CHECK(apm.value[0](0.40 * q, 0.6) - 0.6 < 0.0);  // penalty when over
  }
  SECTION("non-concave diversity is refused") {
    Preferences p;
    p.diversity.push_back(DiversityUtility::custom([](double x) { return x * x; }));
    CHECK_THROWS_AS(optimal_apm(p), ValidationError);
  }
}

TEST_CASE("greedy APM on a single group reduces to score ranking", "[mechanisms][apm]") {
  ContinuumEconomy e;
  e.bins = 1000;
  e.density = {std::vector<double>(1000, 0.8)};
  e.capacity = 0.3;
  Preferences p;
  p.diversity.push_back(DiversityUtility::quadratic(0.7, 1.0));
  auto alloc = run_apm_greedy(optimal_apm(p), Economy{e});
  CHECK(alloc.groups[0].admitted == Approx(0.3).margin(1e-12));
  CHECK(alloc.groups[0].cutoff == Approx(1.0 - 0.3 / 0.8).margin(1e-9));  // inverse CDF at q
}

TEST_CASE("greedy APM admissions in the linear-quadratic example", "[mechanisms][apm]") {
  auto s = example_setting();
  auto apm = optimal_apm(weitzman_prefs(s));
  for (double omega : s.omegas) {
    Pool pool = weitzman_state_pool(s, omega, 2000);
    auto fill = run_apm_greedy_fill(apm, pool, s.q);
    double expected = s.x_optimal(omega);
    CHECK(fill.alloc.groups[0].admitted == Approx(expected).margin(5e-4));
    CHECK(fill.alloc.total() == Approx(s.q).margin(1e-12));
  }
}

TEST_CASE("three-segment APM guarantees the embedded quota", "[mechanisms][apm]") {
  // group 1 gets +1 below measure 0.1, +0.1 below 0.25, nothing beyond; in a
  // state where it scores uniformly low it still places measure 0.1.
  auto apm = AdaptivePriority::step_boost({{}, {0.1, 0.25}}, {{0.0}, {1.0, 0.1, 0.0}});
  REQUIRE(apm.monotone);
  ContinuumEconomy e;
  e.bins = 1000;
  e.capacity = 0.5;
  e.density.resize(2);
  e.density[0].assign(1000, 0.0);
  e.density[1].assign(1000, 0.0);
  for (int i = 500; i < 1000; ++i) e.density[0][i] = 1.2;   // mass 0.6 on [0.5, 1)
  for (int i = 0; i < 320; ++i) e.density[1][i] = 1.25;     // mass 0.4 on [0, 0.32)
  auto alloc = run_apm_greedy(apm, Economy{e});
  CHECK(alloc.groups[1].admitted >= 0.1 - 1e-12);
  CHECK(alloc.groups[1].admitted == Approx(0.1).margin(1e-9));
  CHECK(alloc.groups[0].admitted == Approx(0.4).margin(1e-9));
}

TEST_CASE("greedy APM refusals", "[mechanisms][apm]") {
  ContinuumEconomy e;
  e.bins = 100;
  e.density = {std::vector<double>(100, 0.2)};
  e.capacity = 0.19;
  SECTION("infeasible capacity names the shortfall") {
    e.capacity = 0.5;
    Preferences p;
    p.diversity.push_back(DiversityUtility::linear(0.0));
    try {
      run_apm_greedy(optimal_apm(p), Economy{e});
      FAIL("expected infeasibility error");
    } catch (const ValidationError& err) {
      CHECK(std::string(err.what()).find("short of capacity") != std::string::npos);
    }
  }
  SECTION("non-monotone adaptive priority is refused") {
    AdaptivePriority bad;
    bad.family = "custom";
    bad.monotone = false;
    bad.value.push_back([](double y, double s) { return s + y; });
    CHECK_THROWS_AS(run_apm_greedy(bad, Economy{e}), ValidationError);
  }
}

TEST_CASE("priority mechanisms", "[mechanisms][priority]") {
  SECTION("pure merit has a single global cutoff") {
    ContinuumEconomy e;
    e.bins = 500;
    e.capacity = 0.4;
    e.density = {std::vector<double>(500, 0.5), std::vector<double>(500, 0.5)};
    auto alloc = run_priority(PriorityPolicy::merit(), Economy{e});
    CHECK(alloc.groups[0].cutoff == Approx(alloc.groups[1].cutoff).margin(1e-12));
    CHECK(alloc.groups[0].cutoff == Approx(0.6).margin(1e-12));
  }
  SECTION("linear-quadratic example admissions match the closed form exactly") {
    auto s = example_setting();
    for (double alpha : {0.05, 0.2, 0.35}) {
      auto policy = PriorityPolicy::additive_boost({alpha, 0.0});
      for (double omega : s.omegas) {
        Pool pool = weitzman_state_pool(s, omega, 900);
        auto fill = run_priority_fill(policy, pool, s.q);
        CHECK(fill.alloc.groups[0].admitted ==
              Approx(s.x_priority(alpha, omega)).margin(1e-12));
      }
    }
  }
  SECTION("a dominant constant-priority group takes everything") {
    ContinuumEconomy e;
    e.bins = 200;
    e.capacity = 0.5;
    e.density = {std::vector<double>(200, 0.6), std::vector<double>(200, 0.6)};
    auto alloc = run_priority(PriorityPolicy::group_constant({1.0, 0.0}), Economy{e});
    CHECK(alloc.groups[0].admitted == Approx(0.5).margin(1e-12));
    CHECK(alloc.groups[1].admitted == Approx(0.0).margin(1e-15));
  }
}

TEST_CASE("quota mechanisms", "[mechanisms][quota]") {
  SECTION("zero quotas reduce to pure merit, identically") {
    Rng rng(11);
    auto e = testkit::random_bumpy_continuum(rng, 3, 400, 0.5);
    auto via_quota = run_quota(QuotaPolicy::quota_first({0, 0, 0}), Economy{e});
    auto via_merit = run_priority(PriorityPolicy::merit(), Economy{e});
    for (int g = 0; g < 3; ++g) {
      CHECK(via_quota.groups[g].admitted == via_merit.groups[g].admitted);
      CHECK(via_quota.groups[g].cutoff == via_merit.groups[g].cutoff);
    }
  }
  SECTION("linear-quadratic example, quota processed first") {
    auto s = example_setting();
    for (double Q : {0.05, 0.12, 0.18}) {
      auto policy = QuotaPolicy::quota_first({Q, 0.0});
      for (double omega : s.omegas) {
        Pool pool = weitzman_state_pool(s, omega, 900);
        auto fill = run_quota_fill(policy, pool, s.q);
        CHECK(fill.alloc.groups[0].admitted ==
              Approx(s.x_quota_first(Q, omega)).margin(1e-12));
      }
    }
  }
  SECTION("quota-second equals the equivalent priority state-by-state") {
    auto s = example_setting();
    double Q = 0.1;
    auto qs = QuotaPolicy::quota_second({Q, 0.0});
    auto pr = PriorityPolicy::additive_boost({Q / s.kappa, 0.0});
    for (double omega : s.omegas) {
      Pool pool_q = weitzman_state_pool(s, omega, 900);
      Pool pool_p = weitzman_state_pool(s, omega, 900);
      auto fq = run_quota_fill(qs, pool_q, s.q);
      auto fp = run_priority_fill(pr, pool_p, s.q);
      CHECK(fq.alloc.groups[0].admitted == Approx(fp.alloc.groups[0].admitted).margin(1e-12));
      CHECK(fq.alloc.groups[0].admitted ==
            Approx(s.x_quota_second(Q, omega)).margin(1e-12));
      CHECK(fq.alloc.groups[1].admitted == Approx(fp.alloc.groups[1].admitted).margin(1e-12));
    }
  }
  SECTION("reserve shortfalls roll into the open round") {
    ContinuumEconomy e;
    e.bins = 100;
    e.capacity = 0.5;
    e.density.resize(2);
    e.density[0].assign(100, 0.0);
    for (int i = 0; i < 30; ++i) e.density[0][i] = 0.2;  // group 0 mass 0.06 only
    e.density[1].assign(100, 0.8);
    auto alloc = run_quota(QuotaPolicy::quota_first({0.2, 0.0}), Economy{e});
    CHECK(alloc.groups[0].admitted == Approx(0.06).margin(1e-12));
    CHECK(alloc.groups[1].admitted == Approx(0.44).margin(1e-12));
    CHECK(alloc.total() == Approx(0.5).margin(1e-12));
  }
  SECTION("policy validation") {
    CHECK_THROWS_AS(QuotaPolicy::quota_first({0.4, 0.3}).validate(0.5), ValidationError);
    QuotaPolicy bad = QuotaPolicy::quota_first({0.1, 0.1});
    bad.precedence = {0, 0, QuotaPolicy::kResidual};
    CHECK_THROWS_AS(bad.validate(0.5), ValidationError);
  }
}

TEST_CASE("brute force discrete optimum", "[mechanisms][discrete]") {
  SECTION("four-student example follows the first-best rule") {
    double beta = 0.3;
    Preferences prefs = appendix_e_prefs(beta);
    auto check_rule = [&](double s3, double s4) {
      DiscreteEconomy e = appendix_e_economy(s3, s4);
      auto opt = brute_force_optimum(e, prefs);
      if (std::max(s3, s4) > 1 - beta) {
        CHECK(opt.counts[0] == 1);
        CHECK(opt.counts[1] == 1);
      } else {
        CHECK(opt.counts[0] == 0);
        CHECK(opt.counts[1] == 2);
      }
    };
    check_rule(0.8, 0.5);
    check_rule(0.5, 0.9);
    check_rule(0.6, 0.65);
    check_rule(0.1, 0.2);
  }
  SECTION("zero diversity utility admits the top scorers") {
    Rng rng(5);
    auto e = testkit::random_discrete(rng, 10, 3, 4);
    Preferences prefs;
    for (int g = 0; g < 3; ++g) prefs.diversity.push_back(DiversityUtility::linear(0.0));
    auto opt = brute_force_optimum(e, prefs);
    std::vector<double> scores;
    for (const auto& a : e.agents) scores.push_back(a.score);
    std::sort(scores.rbegin(), scores.rend());
    double top4 = scores[0] + scores[1] + scores[2] + scores[3];
    CHECK(opt.utility == Approx(top4).margin(1e-12));
  }
  SECTION("oversized instances are refused") {
    Rng rng(6);
    auto e = testkit::random_discrete(rng, 4000, 4, 2000);
    Preferences prefs;
    for (int g = 0; g < 4; ++g) prefs.diversity.push_back(DiversityUtility::linear(0.0));
    CHECK_THROWS_AS(brute_force_optimum(e, prefs, 1000), ValidationError);
  }
}

TEST_CASE("discrete greedy APM equals the oracle", "[mechanisms][discrete]") {
  SECTION("four-student example with a strong diversity motive") {
    double beta = 1.5;  // large: one minority seat is guaranteed
    Preferences prefs = appendix_e_prefs(beta);
    DiscreteEconomy e = appendix_e_economy(0.35, 0.6);
    auto apm = optimal_apm_discrete(prefs);
    auto alloc = run_apm_discrete(apm, e, prefs);
    CHECK(alloc.counts[0] == 1);
    CHECK(alloc.counts[1] == 1);
    CHECK(e.agents[alloc.admitted[0][0]].score == 0.6);  // the better minority student
  }
  SECTION("linear-zero utility admits top scorers") {
    Rng rng(9);
    auto e = testkit::random_discrete(rng, 12, 2, 5);
    Preferences prefs;
    for (int g = 0; g < 2; ++g) prefs.diversity.push_back(DiversityUtility::linear(0.0));
    auto alloc = run_apm_discrete(optimal_apm_discrete(prefs), e, prefs);
    auto opt = brute_force_optimum(e, prefs);
    CHECK(alloc.utility == opt.utility);  // bit-equal by the shared evaluator
  }
  SECTION("random instances: greedy utility is bit-equal to the oracle") {
    Rng rng(123);
    for (int trial = 0; trial < 60; ++trial) {
      int groups = rng.uniform_int(2, 3);
      int n = rng.uniform_int(6, 10);
      int q = rng.uniform_int(2, n - 1);
      auto e = testkit::random_discrete(rng, n, groups, q);
      Preferences prefs = testkit::random_prefs(rng, groups, static_cast<double>(q));
      auto greedy = run_apm_discrete(optimal_apm_discrete(prefs, q + 1), e, prefs);
      auto oracle = brute_force_optimum(e, prefs);
      REQUIRE(greedy.utility == oracle.utility);
    }
  }
}

TEST_CASE("rationalizing a priority policy", "[mechanisms][theorem2]") {
  SECTION("linear utilities yield the boost policy") {
    Preferences p;
    p.diversity.push_back(DiversityUtility::linear(0.2));
    p.diversity.push_back(DiversityUtility::linear(0.0));
    auto r = rationalizing_priority(p);
    REQUIRE(r.ok);
    CHECK(r.policy.value(0.5, 0) == Approx(0.7).margin(1e-15));
    CHECK(r.policy.value(0.5, 1) == Approx(0.5).margin(1e-15));
  }
  SECTION("concave utility refuses and names the group") {
    Preferences p;
    p.diversity.push_back(DiversityUtility::linear(0.1));
    p.diversity.push_back(DiversityUtility::quadratic(1.0, 0.5));
    auto r = rationalizing_priority(p);
    REQUIRE_FALSE(r.ok);
    CHECK(r.detail.find("group 1") != std::string::npos);
  }
  SECTION("linear case: the policy matches the APM allocation state by state") {
    Rng rng(21);
    Preferences p;
    p.diversity.push_back(DiversityUtility::linear(0.15));
    p.diversity.push_back(DiversityUtility::linear(0.0));
    auto r = rationalizing_priority(p);
    REQUIRE(r.ok);
    auto apm = optimal_apm(p);
    for (int trial = 0; trial < 50; ++trial) {
      auto e = testkit::random_discrete(rng, rng.uniform_int(6, 14), 2, 4);
      Economy econ{e};
      auto via_apm = run_apm_greedy(apm, econ);
      auto via_policy = run_priority(r.policy, econ);
      for (int g = 0; g < 2; ++g) {
        REQUIRE(via_apm.groups[g].admitted == via_policy.groups[g].admitted);
        REQUIRE(via_apm.groups[g].cutoff == via_policy.groups[g].cutoff);
      }
    }
  }
}

TEST_CASE("rationalizing a quota policy", "[mechanisms][theorem2]") {
  Preferences p;
  p.h = ScalarMap::identity();
  p.diversity.push_back(make_extreme_target(p.h, 0.1));
  p.diversity.push_back(make_extreme_target(p.h, 0.2));
  SECTION("extreme targets yield quotas with the open round last") {
    auto r = rationalizing_quota(p, 0.5);
    REQUIRE(r.ok);
    CHECK(r.policy.quotas == std::vector<double>{0.1, 0.2});
    CHECK(r.policy.precedence.back() == QuotaPolicy::kResidual);
  }
  SECTION("smooth strictly concave utility refuses") {
    Preferences smooth;
    smooth.diversity.push_back(DiversityUtility::quadratic(1.0, 0.8));
    smooth.diversity.push_back(DiversityUtility::quadratic(0.5, 0.8));
    CHECK_FALSE(rationalizing_quota(smooth, 0.5).ok);
  }
  SECTION("extreme-target case: quota-first matches the APM state by state") {
    Rng rng(31);
    Preferences pd;
    pd.diversity.push_back(DiversityUtility::extreme_target(2.0, 10.0));
    pd.diversity.push_back(DiversityUtility::extreme_target(1.0, 10.0));
    auto r = rationalizing_quota(pd, 6.0);
    REQUIRE(r.ok);
    auto apm = optimal_apm(pd, 8.0);
    for (int trial = 0; trial < 50; ++trial) {
      auto e = testkit::random_discrete(rng, rng.uniform_int(8, 14), 2, 6);
      Economy econ{e};
      auto via_apm = run_apm_greedy(apm, econ);
      auto via_policy = run_quota(r.policy, econ);
      for (int g = 0; g < 2; ++g)
        REQUIRE(via_apm.groups[g].admitted == via_policy.groups[g].admitted);
    }
  }
  SECTION("the returned quota attains the oracle optimum on random states") {
    Rng rng(41);
    Preferences pd;
    pd.diversity.push_back(DiversityUtility::extreme_target(2.0, 10.0));
    pd.diversity.push_back(DiversityUtility::extreme_target(1.0, 10.0));
    auto r = rationalizing_quota(pd, 5.0);
    REQUIRE(r.ok);
    for (int trial = 0; trial < 100; ++trial) {
      auto e = testkit::random_discrete(rng, rng.uniform_int(7, 12), 2, 5);
      Economy econ{e};
      auto alloc = run_quota(r.policy, econ);
      auto m = measures_and_score_index(econ, alloc, pd);
      auto oracle = brute_force_optimum(e, pd);
      REQUIRE(pd.utility(m.score_index, m.x) == Approx(oracle.utility).margin(1e-12));
    }
  }
}

TEST_CASE("the adversarial three-state construction defeats fixed policies",
          "[mechanisms][theorem2]") {
  Preferences p;
  p.diversity.push_back(DiversityUtility::quadratic(0.6, 1.0));
  p.diversity.push_back(DiversityUtility::quadratic(0.3, 0.8));
  const double q = 0.5;
  auto a4 = testkit::a4_construction(p, q, 4000);
  REQUIRE(a4.states.size() == 3);

  // Group 0's optimal cutoff moves down while group 1's stays fixed.
  CHECK(a4.optimal_cutoffs[2][0] < a4.optimal_cutoffs[0][0] - 0.02);
  CHECK(a4.optimal_cutoffs[2][1] == Approx(a4.optimal_cutoffs[0][1]).margin(2e-3));

  SECTION("no score-monotone priority policy is consistent with all states") {
    CHECK_FALSE(testkit::priority_cutoffs_consistent(a4.optimal_cutoffs, 5e-3));
  }
  SECTION("no quota policy reproduces the optimum in every state") {
    // candidate reserves drawn from the per-state optima themselves
    std::vector<double> cand0{0.0, a4.optimal_x[0][0], a4.optimal_x[2][0]};
    std::vector<double> cand1{0.0, a4.optimal_x[0][1], a4.optimal_x[2][1]};
    bool any_consistent = false;
    for (double q0 : cand0) {
      for (double q1 : cand1) {
        if (q0 + q1 > q + 1e-12) continue;
        std::vector<QuotaPolicy> candidates;
        candidates.push_back(QuotaPolicy::quota_first({q0, q1}));
        candidates.push_back(QuotaPolicy::quota_second({q0, q1}));
        QuotaPolicy mid;  // group 0, open round, group 1
        mid.quotas = {q0, q1};
        mid.precedence = {0, QuotaPolicy::kResidual, 1};
        candidates.push_back(mid);
        for (const auto& cand : candidates) {
          bool all_match = true;
          for (std::size_t st = 0; st < a4.states.size() && all_match; ++st) {
            auto alloc = run_quota(cand, Economy{a4.states[st]});
            for (int g = 0; g < 2; ++g)
              if (std::abs(alloc.groups[g].admitted - a4.optimal_x[st][g]) > 2e-3)
                all_match = false;
          }
          any_consistent = any_consistent || all_match;
        }
      }
    }
    CHECK_FALSE(any_consistent);
  }
}

TEST_CASE("no-uncertainty equivalents reproduce the optimum", "[mechanisms]") {
  SECTION("cutoff-shift priority admits exactly the quota allocation") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
      auto e = testkit::random_bumpy_continuum(rng, 2, 600, 0.45);
      Preferences p;
      p.diversity.push_back(DiversityUtility::quadratic(0.5, 1.2));
      p.diversity.push_back(DiversityUtility::linear(0.05));
      Economy econ{e};
      auto eq = no_uncertainty_equivalents(econ, p);
      auto via_p = run_priority(eq.priority, econ);
      auto via_q = run_quota(eq.quota, econ);
      auto base_m = measures_and_score_index(econ, eq.base, p);
      auto p_m = measures_and_score_index(econ, via_p, p);
      auto q_m = measures_and_score_index(econ, via_q, p);
      for (int g = 0; g < 2; ++g) {
        REQUIRE(p_m.x[g] == Approx(base_m.x[g]).margin(1e-9));
        REQUIRE(q_m.x[g] == Approx(base_m.x[g]).margin(1e-9));
      }
      REQUIRE(p_m.score_index == Approx(base_m.score_index).margin(1e-9));
      REQUIRE(q_m.score_index == Approx(base_m.score_index).margin(1e-9));
    }
  }
  SECTION("zero diversity utility gives merit-equivalent policies") {
    ContinuumEconomy e;
    e.bins = 500;
    e.capacity = 0.4;
    e.density = {std::vector<double>(500, 0.5), std::vector<double>(500, 0.5)};
    Preferences p;
    p.diversity.push_back(DiversityUtility::linear(0.0));
    p.diversity.push_back(DiversityUtility::linear(0.0));
    auto eq = no_uncertainty_equivalents(Economy{e}, p);
    CHECK(eq.quota.quotas[0] == Approx(0.2).margin(1e-9));
    CHECK(eq.priority.boosts[0] == Approx(eq.priority.boosts[1]).margin(1e-9));
  }
}

TEST_CASE("equivalent subsidy diagnostic", "[mechanisms][h1b]") {
  // five-year average H1-B counts; the two processing rules
  double a_ri = equivalent_subsidy(137017, 55900, 85000, 33495);
  double a_nri = equivalent_subsidy(137017, 55900, 85000, 38834);
  CHECK(a_ri == Approx(22.3293).margin(1e-3));
  CHECK(a_nri == Approx(35.7787).margin(1e-3));
  CHECK(std::abs(a_ri - 23.0) <= 1.0);   // published rounded values
  CHECK(std::abs(a_nri - 35.0) <= 1.0);

  SECTION("proportional admissions mean zero subsidy") {
    double n_g = 120000, n_e = 60000, visas = 90000;
    double proportional = visas * n_e / (n_g + n_e);
    CHECK(equivalent_subsidy(n_g, n_e, visas, proportional) == Approx(0.0).margin(1e-9));
  }
  SECTION("infeasible counts are rejected") {
    CHECK_THROWS_AS(equivalent_subsidy(100, 50, 200, 60), ValidationError);
    CHECK_THROWS_AS(equivalent_subsidy(100, 50, 120, 10), ValidationError);
  }
}

TEST_CASE("first-best equality on continuum economies", "[mechanisms][invariant]") {
  Rng rng(55);
  for (int trial = 0; trial < 8; ++trial) {
    auto e = testkit::random_bumpy_continuum(rng, 2, 1000, 0.5);
    Preferences p = testkit::random_prefs(rng, 2, 0.6);
    auto alloc = run_apm_greedy(optimal_apm(p), Economy{e});
    auto m = measures_and_score_index(Economy{e}, alloc, p);
    double greedy_u = p.utility(m.score_index, m.x);
    auto oracle = testkit::composition_search(e, p, 1500);
    REQUIRE(greedy_u >= oracle.utility - 1e-6 * std::abs(oracle.utility));
  }
}

TEST_CASE("uniqueness under group relabeling", "[mechanisms][invariant]") {
  Rng rng(66);
  auto e = testkit::random_bumpy_continuum(rng, 3, 700, 0.5);
  Preferences p = testkit::random_prefs(rng, 3, 0.6);
  auto alloc = run_apm_greedy(optimal_apm(p), Economy{e});

  std::vector<int> perm{2, 0, 1};  // relabel, solve, relabel back
  ContinuumEconomy pe = e;
  Preferences pp = p;
  for (int g = 0; g < 3; ++g) {
    pe.density[perm[g]] = e.density[g];
    pp.diversity[perm[g]] = p.diversity[g];
  }
  auto palloc = run_apm_greedy(optimal_apm(pp), Economy{pe});
  for (int g = 0; g < 3; ++g) {
    REQUIRE(alloc.groups[g].admitted == palloc.groups[perm[g]].admitted);
    REQUIRE(alloc.groups[g].cutoff == palloc.groups[perm[g]].cutoff);
  }
}

TEST_CASE("allocation ignores g; expected utility does not", "[mechanisms][invariant]") {
  Rng rng(88);
  auto e = testkit::random_bumpy_continuum(rng, 2, 500, 0.4);
  Preferences p = testkit::random_prefs(rng, 2, 0.5);
  Preferences pg = p;
  pg.g = ScalarMap::custom([](double v) { return std::exp(0.5 * v); }, "exp");

  auto a1 = run_apm_greedy(optimal_apm(p), Economy{e});
  auto a2 = run_apm_greedy(optimal_apm(pg), Economy{e});
  for (int g = 0; g < 2; ++g) REQUIRE(a1.groups[g].admitted == a2.groups[g].admitted);

  Belief b;
  b.states.push_back({1.0, Economy{e}});
  double u1 = expected_utility(mech_apm(optimal_apm(p)), b, p);
  double u2 = expected_utility(mech_apm(optimal_apm(pg)), b, pg);
  CHECK(u2 == Approx(std::exp(0.5 * u1)).epsilon(1e-12));
}

TEST_CASE("optimal APM is belief-free", "[mechanisms][invariant]") {
  Preferences p;
  p.diversity.push_back(DiversityUtility::quadratic(0.8, 1.1));
  p.diversity.push_back(DiversityUtility::scaled_sqrt(0.2));
  auto a1 = optimal_apm(p);
  auto a2 = optimal_apm(p);  // nothing but preferences enters the construction
  for (int g = 0; g < 2; ++g)
    for (int i = 0; i <= 16; ++i)
      for (int j = 1; j <= 16; ++j)
        REQUIRE(a1.value[g](i / 16.0, j / 16.0) == a2.value[g](i / 16.0, j / 16.0));
}

TEST_CASE("non-monotone adaptive priorities: fixed points are enumerated", "[mechanisms]") {
  // convex diversity utility makes the optimal-form priority non-monotone
  AdaptivePriority apm;
  apm.family = "custom";
  apm.monotone = false;
  apm.value.push_back([](double y, double s) { return s + 0.8 * y; });  // increasing in y
  apm.value.push_back([](double, double s) { return s; });

  ContinuumEconomy e;
  e.bins = 200;
  e.capacity = 0.5;
  e.density = {std::vector<double>(200, 0.5), std::vector<double>(200, 0.5)};
  Pool pool = to_pool(Economy{e});
  auto fps = apm_fixed_points(apm, pool, 0.5, 40, 1e-6);
  CHECK(fps.size() >= 2);  // corner allocations both survive
  CHECK_THROWS_AS(run_apm_greedy(apm, Economy{e}), ValidationError);
}

#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "doctest.h"
#include "optrule/error.hpp"
#include "optrule/oracle.hpp"
#include "optrule/rng.hpp"
#include "optrule/rules.hpp"

using namespace optrule;

namespace {

// Covariate 0 holds the unit index; the score is looked up by index.
ScoreFn lookup(std::vector<double> scores) {
  return [s = std::move(scores)](std::span<const double> c) {
    return s[static_cast<std::size_t>(c[0])];
  };
}

std::vector<std::vector<double>> index_covariates(std::size_t n) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({static_cast<double>(i)});
  return out;
}

std::size_t count_treated(const TreatmentRule& r, std::size_t n) {
  std::size_t k = 0;
  for (const auto& c : index_covariates(n)) k += r.treats(c);
  return k;
}

std::vector<bool> treated_set(const TreatmentRule& r, std::size_t n,
                              const std::vector<double>* costs = nullptr) {
  std::vector<bool> out;
  const auto covs = index_covariates(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(costs ? r.treats(covs[i], (*costs)[i]) : r.treats(covs[i]));
  }
  return out;
}

PotentialPopulation population(const std::vector<double>& y0, const std::vector<double>& y1) {
  std::vector<PotentialUnit> units;
  for (std::size_t i = 0; i < y0.size(); ++i) units.push_back({{double(i)}, y0[i], y1[i]});
  return PotentialPopulation(units);
}

class ConstantOutcome final : public OutcomeRegression {
 public:
  explicit ConstantOutcome(double v) : v_(v) {}
  double predict(int, std::span<const double>) const override { return v_; }

 private:
  double v_;
};

class ArmShift final : public OutcomeRegression {
 public:
  double predict(int a, std::span<const double> c) const override { return c[0] + 2.0 * a; }
};

}  // namespace

TEST_CASE("constrained cutoff: order statistic") {
  const std::vector<double> s{5, 4, 3, 2, 1};
  const auto rule = rule_constrained(lookup(s), s, 0.4);
  CHECK(rule.threshold == 3.0);
  CHECK(count_treated(rule, 5) == 2);
}

TEST_CASE("constrained cutoff: positive-part clamp") {
  const std::vector<double> s{-1, -2, -3};
  const auto rule = rule_constrained(lookup(s), s, 0.33);
  CHECK(rule.threshold == 0.0);
  CHECK(count_treated(rule, 3) == 0);
}

TEST_CASE("constrained cutoff: ties at the threshold are not treated") {
  const std::vector<double> s{1, 1, 1, 1};
  const auto rule = rule_constrained(lookup(s), s, 0.5);
  CHECK(rule.threshold == 1.0);
  CHECK(count_treated(rule, 4) == 0);
  CHECK_THROWS_AS(constrained_cutoff(s, 1.0), PreconditionError);
}

TEST_CASE("unconstrained rule") {
  const auto zero = rule_unconstrained([](std::span<const double>) { return 0.0; });
  CHECK(count_treated(zero, 5) == 0);

  const std::vector<double> s{0.3, -0.2, 0.1, -0.4};
  std::vector<double> flipped;
  for (double v : s) flipped.push_back(-v);
  const auto a = treated_set(rule_unconstrained(lookup(s)), 4);
  const auto b = treated_set(rule_unconstrained(lookup(flipped)), 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a[i] != b[i]);

  const auto lin = rule_unconstrained([](std::span<const double> c) { return c[0] - 0.5; });
  CounterRng rng(77);
  const int n = 100000;
  int treated = 0;
  for (int i = 0; i < n; ++i) {
    const double c[] = {rng.uniform()};
    treated += lin.treats(c);
  }
  CHECK(std::abs(treated / double(n) - 0.5) <= 4 * std::sqrt(0.25 / n));
}

TEST_CASE("cost rule: zero delta equals the unconstrained rule") {
  const std::vector<double> s{0.3, -0.2, 0.0, 0.4};
  const auto d = rule_cost_delta(lookup(s), [](std::span<const double>) { return 0.0; });
  CHECK(treated_set(d, 4) == treated_set(rule_unconstrained(lookup(s)), 4));
  const auto d2 = rule_cost_delta(lookup(s), [](std::span<const double>) { return 0.35; });
  CHECK(treated_set(d2, 4) == std::vector<bool>{false, false, false, true});
}

TEST_CASE("cost rule: unit costs and budget q reproduce the constrained rule") {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> nd(0.2, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 5 + gen() % 40;
    std::vector<double> s(n);
    for (double& v : s) v = nd(gen);
    const std::vector<double> ones(n, 1.0);
    for (double q : {0.1, 0.25, 0.5, 0.8}) {
      const auto c = rule_constrained(lookup(s), s, q);
      const auto b = rule_cost_budget(lookup(s), s, ones, q);
      CHECK(treated_set(b, n, &ones) == treated_set(c, n));
    }
  }
}

TEST_CASE("cost rule: two-strata example agrees with the oracle") {
  const std::vector<double> effects{4.0, 1.0};
  const std::vector<double> costs{1.0, 1.0};
  const auto rule = rule_cost_budget(lookup(effects), effects, costs, 0.5);
  CHECK(treated_set(rule, 2, &costs) == std::vector<bool>{true, false});
  CHECK(rule.threshold == 1.0);
  PotentialPopulation strata({{{0.0}, 0.0, 4.0, 0.5}, {{1.0}, 0.0, 1.0, 0.5}});
  CHECK(solve_cost_constrained(strata, costs, 0.5).partition.mask() == treated_set(rule, 2, &costs));
}

TEST_CASE("cost rule: budget compliance with uneven costs") {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> nd(0.1, 1.0);
  std::uniform_real_distribution<double> uc(0.2, 3.0);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 3 + gen() % 60;
    std::vector<double> s(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = nd(gen);
      c[i] = uc(gen);
    }
    const double budget = 0.05 + 0.9 * (gen() % 1000) / 1000.0;
    const auto rule = rule_cost_budget(lookup(s), s, c, budget);
    const auto t = treated_set(rule, n, &c);
    double spent = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (t[i]) {
        spent += c[i];
        CHECK(s[i] > 0.0);
      }
    }
    CHECK(spent <= budget * n * (1 + 1e-12));
  }
}

TEST_CASE("heterogeneity rule") {
  const std::vector<double> s{-1, 0, 2, 5};
  const auto r = rule_heterogeneity(lookup(s), s);
  CHECK(r.threshold == 2.0);
  CHECK(treated_set(r, 4) == std::vector<bool>{false, false, false, true});
  const std::vector<double> two{-1, 1};
  CHECK(treated_set(rule_heterogeneity(lookup(two), two), 2) == std::vector<bool>{false, true});
  const std::vector<double> flat{0.2, 0.2, 0.2};
  const auto d = rule_heterogeneity(lookup(flat), flat);
  CHECK(d.degenerate);
  CHECK(d.threshold == 0.2);
  CHECK(count_treated(d, 3) == 0);
}

TEST_CASE("rules reproduce the oracle partitions when scores are the true effects") {
  std::mt19937_64 gen(31);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 4 + gen() % 12;
    std::vector<double> y0(n), y1(n), eff(n);
    for (std::size_t i = 0; i < n; ++i) {
      y0[i] = nd(gen);
      eff[i] = nd(gen) + 0.5;
      y1[i] = y0[i] + eff[i];
    }
    const auto pop = population(y0, y1);
    const auto true_eff = pop.effects();
    CHECK(treated_set(rule_unconstrained(lookup(true_eff)), n) ==
          solve_unconstrained(pop).partition.mask());
    CHECK(treated_set(rule_heterogeneity(lookup(true_eff), true_eff), n) ==
          solve_heterogeneity(pop).partition.mask());
    std::size_t positive = 0;
    for (double e : true_eff) positive += e > 0.0;
    for (std::size_t m = 1; m < n && m <= positive; ++m) {
      const double q = static_cast<double>(m) / static_cast<double>(n);
      CHECK(treated_set(rule_constrained(lookup(true_eff), true_eff, q), n) ==
            solve_constrained(pop, q).partition.mask());
    }
  }
}

TEST_CASE("monotone in q and compliant with q") {
  std::mt19937_64 gen(41);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 10 + gen() % 50;
    std::vector<double> s(n);
    for (double& v : s) v = std::round(nd(gen) * 3) / 3;  // ties on purpose
    std::vector<bool> prev(n, false);
    for (double q = 0.05; q < 1.0; q += 0.05) {
      const auto t = treated_set(rule_constrained(lookup(s), s, q), n);
      std::size_t k = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (prev[i]) CHECK(t[i]);
        k += t[i];
      }
      // same count slack as the cutoff itself
      CHECK(static_cast<double>(k) <= q * static_cast<double>(n) * (1.0 + 1e-12));
      prev = t;
    }
  }
}

TEST_CASE("evaluate_on_truth: boundaries, ordering and sentinels") {
  const auto pop = population({1, 2, 0, 3}, {2, 1, 4, 3});
  const auto none = evaluate_on_truth(rule_unconstrained([](std::span<const double>) { return -1.0; }), pop);
  CHECK(none.value == 1.5);
  CHECK(none.treated_fraction == 0.0);
  CHECK_FALSE(none.effect_in_T);
  CHECK_FALSE(none.heterogeneity);
  CHECK(none.effect_in_S);

  const auto best = evaluate_on_truth(rule_unconstrained(lookup(pop.effects())), pop);
  CHECK(best.value >= best.baselines.treat_all);
  CHECK(best.value >= best.baselines.treat_none);
  CHECK(best.value >= best.baselines.random_q);
  CHECK(*best.heterogeneity == *best.effect_in_T - *best.effect_in_S);
}

TEST_CASE("evaluate_on_truth: unconstrained truth rule dominates every partition") {
  std::mt19937_64 gen(51);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 12;
    std::vector<double> y0(n), y1(n);
    for (std::size_t i = 0; i < n; ++i) {
      y0[i] = nd(gen);
      y1[i] = nd(gen);
    }
    const auto pop = population(y0, y1);
    const auto eff = pop.effects();
    const double top = evaluate_on_truth(rule_unconstrained(lookup(eff)), pop).value;
    CHECK(top >= evaluate_on_truth(rule_heterogeneity(lookup(eff), eff), pop).value);
    for (std::uint64_t mask = 0; mask < (1u << n); ++mask) {
      std::vector<double> s(n);
      for (std::size_t i = 0; i < n; ++i) s[i] = (mask >> i) & 1 ? 1.0 : -1.0;
      CHECK(top >= evaluate_on_truth(rule_unconstrained(lookup(s)), pop).value - 1e-15);
    }
  }
}

TEST_CASE("evaluate_on_truth: random rules have no heterogeneity on average") {
  std::mt19937_64 gen(61);
  std::normal_distribution<double> nd;
  const std::size_t n = 200;
  std::vector<double> y0(n), y1(n);
  for (std::size_t i = 0; i < n; ++i) {
    y0[i] = nd(gen);
    y1[i] = y0[i] + nd(gen);
  }
  const auto pop = population(y0, y1);
  double sum = 0.0, sq = 0.0;
  const int reps = 1000;
  for (int r = 0; r < reps; ++r) {
    TreatmentRule rule = rule_unconstrained([r](std::span<const double> c) {
      return CounterRng(derive_seed(5, "random-rule", r)).at(static_cast<std::uint64_t>(c[0])) >>
                     11 < (std::uint64_t{1} << 52)  // q = 0.5 on 53-bit draws
                 ? 1.0
                 : -1.0;
    });
    const auto ev = evaluate_on_truth(rule, pop);
    REQUIRE(ev.heterogeneity);
    sum += *ev.heterogeneity;
    sq += *ev.heterogeneity * *ev.heterogeneity;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sq / reps - mean * mean) / reps);
  CHECK(std::abs(mean) <= 3 * se);
}

TEST_CASE("evaluate_on_sample: plug-in rules") {
  DgpSpec spec;
  spec.n = 50;
  const auto sim = simulate(spec);
  const auto anyone = rule_unconstrained([](std::span<const double> c) { return c[0] - 0.5; });
  const auto c = evaluate_on_sample(anyone, ConstantOutcome(1.25), sim.observed);
  CHECK(c.value == 1.25);
  CHECK(c.biased_plugin);
  const auto all = rule_unconstrained([](std::span<const double>) { return 1.0; });
  const auto ev = evaluate_on_sample(all, ArmShift(), sim.observed);
  double m1 = 0.0;
  for (const auto& r : sim.observed.records()) m1 += r.covariates[0] + 2.0;
  CHECK(ev.value == doctest::Approx(m1 / 50).epsilon(1e-14));
}

TEST_CASE("evaluate_on_sample: large-sample plug-in tracks the truth") {
  DgpSpec spec;
  spec.name = DgpName::linear_cate;
  spec.n = 20000;
  spec.seed = 8;
  const auto sim = simulate(spec);
  const auto folds = assign_folds(spec.n, 10, 1);
  const auto outcome = fit_outcome_regression(sim.observed, parse_learner_list("linear"), folds);
  const auto rule = rule_unconstrained([](std::span<const double> c) { return c[0] - 0.5; });
  const auto plug = evaluate_on_sample(rule, outcome, sim.observed);
  const auto truth = evaluate_on_truth(rule, sim.truth);
  const double se = spec.noise_sd * std::sqrt(2.0 / spec.n);
  CHECK(std::abs(plug.value - truth.value) <= 2 * se);
}

TEST_CASE("adjusted baselines: hand G-formula on a confounded 2x2 toy") {
  // stratum (c1,c2): treated ys / control ys
  // (0,0): {1,3} / {0,2}; (0,1): {5} / {1}; (1,0): {2} / {2}; (1,1): {4,6,8} / {0}
  struct Row { double c1, c2, y; int a; };
  const std::vector<Row> rows{{0, 0, 1, 1}, {0, 0, 3, 1}, {0, 0, 0, 0}, {0, 0, 2, 0},
                              {0, 1, 5, 1}, {0, 1, 1, 0}, {1, 0, 2, 1}, {1, 0, 2, 0},
                              {1, 1, 4, 1}, {1, 1, 6, 1}, {1, 1, 8, 1}, {1, 1, 0, 0}};
  std::vector<TrialRecord> recs;
  for (const auto& r : rows) {
    TrialRecord t;
    t.covariates = {r.c1, r.c2};
    t.treatment = r.a;
    t.outcome = r.y;
    t.propensity = 0.5;
    recs.push_back(t);
  }
  const TrialDataset data(recs, {"c1", "c2"}, Design::observational());

  class StratumMeans final : public OutcomeRegression {
   public:
    explicit StratumMeans(const TrialDataset& d) {
      for (const auto& r : d.records()) {
        auto& [s, n] = cells_[{r.treatment, r.covariates[0], r.covariates[1]}];
        s += r.outcome;
        n += 1.0;
      }
    }
    double predict(int a, std::span<const double> c) const override {
      const auto& [s, n] = cells_.at({a, c[0], c[1]});
      return s / n;
    }

   private:
    std::map<std::tuple<int, double, double>, std::pair<double, double>> cells_;
  };

  const auto b = adjusted_baselines(data, StratumMeans(data));
  CHECK(b.treat_all == doctest::Approx(46.0 / 12.0).epsilon(1e-15));
  CHECK(b.treat_none == doctest::Approx(10.0 / 12.0).epsilon(1e-15));
  CHECK(b.ate == doctest::Approx(3.0).epsilon(1e-15));

  const auto flat = adjusted_baselines(data, ConstantOutcome(0.7));
  CHECK(flat.treat_all == flat.treat_none);
  CHECK(flat.ate == 0.0);
}

TEST_CASE("adjusted baselines: randomized design matches arm means") {
  DgpSpec spec;
  spec.n = 4000;
  spec.name = DgpName::constant_effect;
  const auto sim = simulate(spec);
  const auto outcome = fit_outcome_regression(sim.observed, parse_learner_list("constant"),
                                              assign_folds(spec.n, 10, 0));
  double s1 = 0, n1 = 0, s0 = 0, n0 = 0;
  for (const auto& r : sim.observed.records()) {
    (r.treatment ? s1 : s0) += r.outcome;
    (r.treatment ? n1 : n0) += 1;
  }
  const auto b = adjusted_baselines(sim.observed, outcome);
  CHECK(b.treat_all == doctest::Approx(s1 / n1).epsilon(1e-12));
  CHECK(b.treat_none == doctest::Approx(s0 / n0).epsilon(1e-12));
}

TEST_CASE("saved rules round-trip") {
  DgpSpec spec;
  spec.n = 200;
  const auto sim = simulate(spec);
  auto model = std::make_shared<const CateModel>(fit_super_learner(
      sim.observed, parse_learner_list("constant,linear"), CenteringMode::zero,
      assign_folds(200, 10, 0)));
  RuleContext ctx{ContextKind::constrained, 0.3, {}, {}};
  const auto rule = build_rule(model, sim.observed, ctx);
  const auto back = rule_from_json(nlohmann::ordered_json::parse(rule_to_json(rule).dump()));
  CHECK(back.threshold == rule.threshold);
  CHECK(back.context.q == 0.3);
  for (const auto& r : sim.observed.records()) CHECK(back.treats(r.covariates) == rule.treats(r.covariates));
}

#include "optrule/rules.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "optrule/error.hpp"
#include "optrule/oracle.hpp"

namespace optrule {

using nlohmann::ordered_json;

namespace {

constexpr double kCountSlack = 1e-12;

std::size_t floor_count(double q, std::size_t n) {
  return static_cast<std::size_t>(std::floor(q * static_cast<double>(n) * (1.0 + kCountSlack)));
}

ScoreFn model_score_fn(std::shared_ptr<const CateModel> model) {
  return [model](std::span<const double> c) { return model->predict(c); };
}

void check_q(double q) {
  if (!(q > 0.0 && q < 1.0)) throw PreconditionError("q must lie strictly inside (0,1)");
}

}  // namespace

std::string_view to_string(ContextKind kind) {
  switch (kind) {
    case ContextKind::constrained: return "constrained";
    case ContextKind::unconstrained: return "unconstrained";
    case ContextKind::cost: return "cost";
    case ContextKind::heterogeneity: return "heterogeneity";
  }
  return "unknown";
}

ContextKind parse_context_kind(std::string_view text) {
  if (text == "constrained") return ContextKind::constrained;
  if (text == "unconstrained") return ContextKind::unconstrained;
  if (text == "cost") return ContextKind::cost;
  if (text == "heterogeneity") return ContextKind::heterogeneity;
  throw ValidationError("unknown context '" + std::string(text) + "'");
}

double TreatmentRule::adjusted_score(std::span<const double> c, std::optional<double> cost) const {
  double s = score(c);
  if (delta) s -= delta(c);
  if (cost_scaled) {
    if (!cost) throw PreconditionError("cost-scaled rule needs a per-unit cost");
    if (!(s > 0.0)) return -std::numeric_limits<double>::infinity();
    s /= *cost;
  }
  return s;
}

bool TreatmentRule::treats(std::span<const double> c, std::optional<double> cost) const {
  if (degenerate) return false;
  return adjusted_score(c, cost) > threshold;
}

double constrained_cutoff(std::span<const double> scores, double q) {
  check_q(q);
  const std::size_t n = scores.size();
  const std::size_t m = floor_count(q, n);
  if (m >= n) return 0.0;
  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(m), sorted.end(),
                   std::greater<>());
  return std::max(0.0, sorted[m]);
}

TreatmentRule rule_constrained(ScoreFn score, std::span<const double> scores, double q) {
  TreatmentRule rule;
  rule.score = std::move(score);
  rule.threshold = constrained_cutoff(scores, q);
  rule.context = {ContextKind::constrained, q, {}, {}};
  return rule;
}

TreatmentRule rule_unconstrained(ScoreFn score) {
  TreatmentRule rule;
  rule.score = std::move(score);
  rule.threshold = 0.0;
  rule.context = {ContextKind::unconstrained, 0.0, {}, {}};
  return rule;
}

TreatmentRule rule_cost_delta(ScoreFn score, ScoreFn delta) {
  if (!delta) throw PreconditionError("delta function is required");
  TreatmentRule rule;
  rule.score = std::move(score);
  rule.delta = std::move(delta);
  rule.threshold = 0.0;
  rule.context = {ContextKind::cost, 0.0, {}, {}};
  return rule;
}

TreatmentRule rule_cost_budget(ScoreFn score, std::span<const double> scores,
                               std::span<const double> costs, double budget) {
  if (!(budget > 0.0) || !std::isfinite(budget)) {
    throw PreconditionError("budget must be positive and finite");
  }
  if (costs.size() != scores.size()) throw PreconditionError("one cost per score is required");
  std::vector<double> ratio(scores.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!(costs[i] > 0.0)) throw PreconditionError("costs must be positive");
    if (scores[i] > 0.0) ratio[i] = scores[i] / costs[i];
  }
  const auto order = descending_order(ratio);
  const double cap = budget * static_cast<double>(scores.size()) * (1.0 + kCountSlack);

  double spent = 0.0;
  double k = 0.0;
  std::size_t j = 0;
  while (j < order.size() && ratio[order[j]] > 0.0) {
    // Whole tie groups only, so the result is a threshold rule.
    std::size_t end = j;
    double group_cost = 0.0;
    while (end < order.size() && ratio[order[end]] == ratio[order[j]]) {
      group_cost += costs[order[end]];
      ++end;
    }
    if (spent + group_cost > cap) {
      k = ratio[order[j]];
      break;
    }
    spent += group_cost;
    j = end;
  }

  TreatmentRule rule;
  rule.score = std::move(score);
  rule.cost_scaled = true;
  rule.threshold = k;
  rule.context = {ContextKind::cost, 0.0, budget, {}};
  return rule;
}

TreatmentRule rule_heterogeneity(ScoreFn score, std::span<const double> scores) {
  const std::size_t n = scores.size();
  if (n < 2) throw PreconditionError("heterogeneity rule needs at least two scores");
  const auto order = descending_order(scores);
  double total = 0.0;
  for (double s : scores) total += s;

  bool found = false;
  double best = 0.0;
  std::size_t best_len = 0;
  double sum_t = 0.0;
  for (std::size_t j = 1; j < n; ++j) {
    sum_t += scores[order[j - 1]];
    if (!(scores[order[j - 1]] > scores[order[j]])) continue;
    const double h = sum_t / static_cast<double>(j) - (total - sum_t) / static_cast<double>(n - j);
    if (!found || h > best) {
      found = true;
      best = h;
      best_len = j;
    }
  }

  TreatmentRule rule;
  rule.score = std::move(score);
  rule.context = {ContextKind::heterogeneity, 0.0, {}, {}};
  if (!found) {
    rule.degenerate = true;
    rule.threshold = *std::max_element(scores.begin(), scores.end());
  } else {
    rule.threshold = scores[order[best_len]];
  }
  return rule;
}

std::vector<double> model_scores(const CateModel& model, const TrialDataset& data) {
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = model.predict(data[i].covariates);
  return out;
}

TreatmentRule rule_constrained(std::shared_ptr<const CateModel> model, const TrialDataset& data,
                               double q) {
  const auto scores = model_scores(*model, data);
  TreatmentRule rule = rule_constrained(model_score_fn(model), scores, q);
  rule.model = std::move(model);
  return rule;
}

TreatmentRule rule_unconstrained(std::shared_ptr<const CateModel> model) {
  TreatmentRule rule = rule_unconstrained(model_score_fn(model));
  rule.model = std::move(model);
  return rule;
}

TreatmentRule rule_cost(std::shared_ptr<const CateModel> model, const TrialDataset& data,
                        const RuleContext& context) {
  TreatmentRule rule;
  if (context.delta_const) {
    const double d = *context.delta_const;
    if (!std::isfinite(d)) throw PreconditionError("delta must be finite");
    rule = rule_cost_delta(model_score_fn(model), [d](std::span<const double>) { return d; });
    rule.context.delta_const = d;
  } else if (context.budget) {
    if (!data.has_cost()) {
      throw ValidationError("budget mode needs a cost column in the data");
    }
    const auto scores = model_scores(*model, data);
    std::vector<double> costs(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) costs[i] = *data[i].cost;
    rule = rule_cost_budget(model_score_fn(model), scores, costs, *context.budget);
  } else {
    throw ValidationError("cost context needs either a budget or a delta");
  }
  rule.model = std::move(model);
  return rule;
}

TreatmentRule rule_heterogeneity(std::shared_ptr<const CateModel> model,
                                 const TrialDataset& data) {
  const auto scores = model_scores(*model, data);
  TreatmentRule rule = rule_heterogeneity(model_score_fn(model), scores);
  rule.model = std::move(model);
  return rule;
}

TreatmentRule build_rule(std::shared_ptr<const CateModel> model, const TrialDataset& data,
                         const RuleContext& context) {
  switch (context.kind) {
    case ContextKind::constrained: return rule_constrained(std::move(model), data, context.q);
    case ContextKind::unconstrained: return rule_unconstrained(std::move(model));
    case ContextKind::cost: return rule_cost(std::move(model), data, context);
    case ContextKind::heterogeneity: return rule_heterogeneity(std::move(model), data);
  }
  throw PreconditionError("unknown context");
}

// ---------------------------------------------------------------------------

namespace {

struct Accumulator {
  double mass = 0.0, mass_t = 0.0;
  double value = 0.0;
  double y1 = 0.0, y0 = 0.0;
  double eff_t = 0.0, eff_s = 0.0;

  RuleEvaluation finish(std::vector<bool> treated) const {
    RuleEvaluation ev;
    ev.value = value / mass;
    ev.treated_fraction = mass_t / mass;
    const double mass_s = mass - mass_t;
    if (mass_t > 0.0) ev.effect_in_T = eff_t / mass_t;
    if (mass_s > 0.0) ev.effect_in_S = eff_s / mass_s;
    if (ev.effect_in_T && ev.effect_in_S) ev.heterogeneity = *ev.effect_in_T - *ev.effect_in_S;
    ev.baselines.treat_all = y1 / mass;
    ev.baselines.treat_none = y0 / mass;
    ev.baselines.random_q = ev.treated_fraction * ev.baselines.treat_all +
                            (1.0 - ev.treated_fraction) * ev.baselines.treat_none;
    ev.treated = std::move(treated);
    return ev;
  }
};

}  // namespace

RuleEvaluation evaluate_on_truth(const TreatmentRule& rule, const PotentialPopulation& pop) {
  Accumulator acc;
  std::vector<bool> treated(pop.size());
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const PotentialUnit& u = pop[i];
    const bool t = rule.treats(u.covariates, u.cost);
    treated[i] = t;
    acc.mass += u.mass;
    acc.y1 += u.mass * u.y1;
    acc.y0 += u.mass * u.y0;
    if (t) {
      acc.mass_t += u.mass;
      acc.value += u.mass * u.y1;
      acc.eff_t += u.mass * u.effect();
    } else {
      acc.value += u.mass * u.y0;
      acc.eff_s += u.mass * u.effect();
    }
  }
  return acc.finish(std::move(treated));
}

RuleEvaluation evaluate_on_sample(const TreatmentRule& rule, const OutcomeRegression& outcome,
                                  const TrialDataset& data) {
  Accumulator acc;
  std::vector<bool> treated(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const TrialRecord& r = data[i];
    const double m1 = outcome.predict(1, r.covariates);
    const double m0 = outcome.predict(0, r.covariates);
    const bool t = rule.treats(r.covariates, r.cost);
    treated[i] = t;
    acc.mass += 1.0;
    acc.y1 += m1;
    acc.y0 += m0;
    if (t) {
      acc.mass_t += 1.0;
      acc.value += m1;
      acc.eff_t += m1 - m0;
    } else {
      acc.value += m0;
      acc.eff_s += m1 - m0;
    }
  }
  RuleEvaluation ev = acc.finish(std::move(treated));
  ev.biased_plugin = true;
  return ev;
}

AdjustedBaselines adjusted_baselines(const TrialDataset& data, const OutcomeRegression& outcome) {
  AdjustedBaselines b;
  for (const TrialRecord& r : data.records()) {
    b.treat_all += outcome.predict(1, r.covariates);
    b.treat_none += outcome.predict(0, r.covariates);
  }
  const double n = static_cast<double>(data.size());
  b.treat_all /= n;
  b.treat_none /= n;
  b.ate = b.treat_all - b.treat_none;
  return b;
}

// ---------------------------------------------------------------------------

namespace {

ordered_json real_or_sentinel(double x) {
  if (x == std::numeric_limits<double>::infinity()) return "inf";
  if (x == -std::numeric_limits<double>::infinity()) return "-inf";
  return x;
}

double real_from_json(const ordered_json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ValidationError("bad real '" + s + "' in rule file");
  }
  return j.get<double>();
}

}  // namespace

ordered_json rule_to_json(const TreatmentRule& rule) {
  if (!rule.model) throw PreconditionError("only model-based rules can be saved");
  if (rule.delta && !rule.context.delta_const) {
    throw PreconditionError("rules with a non-constant delta cannot be saved");
  }
  ordered_json ctx{{"kind", std::string(to_string(rule.context.kind))}};
  ctx["q"] = rule.context.kind == ContextKind::constrained ? ordered_json(rule.context.q)
                                                           : ordered_json(nullptr);
  ctx["budget"] = rule.context.budget ? ordered_json(*rule.context.budget) : ordered_json(nullptr);
  ctx["delta"] =
      rule.context.delta_const ? ordered_json(*rule.context.delta_const) : ordered_json(nullptr);
  return ordered_json{{"kind", "treatment_rule"},
                      {"context", ctx},
                      {"threshold", real_or_sentinel(rule.threshold)},
                      {"cost_scaled", rule.cost_scaled},
                      {"degenerate", rule.degenerate},
                      {"model", rule.model->to_json()}};
}

TreatmentRule rule_from_json(const ordered_json& j) {
  if (j.value("kind", std::string()) != "treatment_rule") {
    throw ValidationError("not a saved treatment rule");
  }
  auto model = std::make_shared<const CateModel>(CateModel::from_json(j.at("model")));
  TreatmentRule rule;
  rule.score = model_score_fn(model);
  rule.model = model;
  const auto& ctx = j.at("context");
  rule.context.kind = parse_context_kind(ctx.at("kind").get<std::string>());
  if (!ctx.at("q").is_null()) rule.context.q = ctx.at("q").get<double>();
  if (!ctx.at("budget").is_null()) rule.context.budget = ctx.at("budget").get<double>();
  if (!ctx.at("delta").is_null()) {
    const double d = ctx.at("delta").get<double>();
    rule.context.delta_const = d;
    rule.delta = [d](std::span<const double>) { return d; };
  }
  rule.threshold = real_from_json(j.at("threshold"));
  rule.cost_scaled = j.at("cost_scaled").get<bool>();
  rule.degenerate = j.at("degenerate").get<bool>();
  return rule;
}

}  // namespace optrule

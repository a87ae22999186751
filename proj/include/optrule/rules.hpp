#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "optrule/cate.hpp"
#include "optrule/data.hpp"

namespace optrule {

using ScoreFn = std::function<double(std::span<const double> c)>;

enum class ContextKind { constrained, unconstrained, cost, heterogeneity };
std::string_view to_string(ContextKind kind);
ContextKind parse_context_kind(std::string_view text);

struct RuleContext {
  ContextKind kind = ContextKind::unconstrained;
  double q = 0.0;                     // constrained
  std::optional<double> budget;       // cost, budget mode (per capita)
  std::optional<double> delta_const;  // cost, delta mode with constant delta
};

// treat(c) <=> adjusted score > threshold, where the adjusted score is
//   score(c) - delta(c)            when delta is set,
//   score(c) / cost                when cost_scaled (positive scores only),
//   score(c)                       otherwise.
struct TreatmentRule {
  ScoreFn score;
  ScoreFn delta;
  bool cost_scaled = false;
  double threshold = 0.0;
  RuleContext context;
  bool degenerate = false;
  // Set when the score is a fitted CATE model; needed for saving the rule.
  std::shared_ptr<const CateModel> model;

  // -inf marks a unit that a cost-scaled rule never treats (score <= 0).
  double adjusted_score(std::span<const double> c, std::optional<double> cost = {}) const;
  bool treats(std::span<const double> c, std::optional<double> cost = {}) const;
};

// delta_n = max(0, b_(m+1)) with m = floor(q n) and b sorted descending; the
// positive part of the smallest delta with (1/n) sum 1(b_i > delta) <= q.
double constrained_cutoff(std::span<const double> scores, double q);

// Builders from precomputed scores (scores[i] = score(c_i) on the data the
// threshold is learned from).
TreatmentRule rule_constrained(ScoreFn score, std::span<const double> scores, double q);
TreatmentRule rule_unconstrained(ScoreFn score);
TreatmentRule rule_cost_delta(ScoreFn score, ScoreFn delta);
// Greedy prefix on score/cost over positive scores, cut at a tie-group
// boundary, with summed cost <= budget * n.
TreatmentRule rule_cost_budget(ScoreFn score, std::span<const double> scores,
                               std::span<const double> costs, double budget);
TreatmentRule rule_heterogeneity(ScoreFn score, std::span<const double> scores);

// Builders from a fitted CATE model scored on `data`.
TreatmentRule rule_constrained(std::shared_ptr<const CateModel> model, const TrialDataset& data,
                               double q);
TreatmentRule rule_unconstrained(std::shared_ptr<const CateModel> model);
TreatmentRule rule_cost(std::shared_ptr<const CateModel> model, const TrialDataset& data,
                        const RuleContext& context);
TreatmentRule rule_heterogeneity(std::shared_ptr<const CateModel> model,
                                 const TrialDataset& data);
TreatmentRule build_rule(std::shared_ptr<const CateModel> model, const TrialDataset& data,
                         const RuleContext& context);

std::vector<double> model_scores(const CateModel& model, const TrialDataset& data);

// ---------------------------------------------------------------------------

struct Baselines {
  double treat_all = 0.0;
  double treat_none = 0.0;
  double random_q = 0.0;  // random allocation at the rule's treated fraction
};

struct RuleEvaluation {
  double value = 0.0;
  double treated_fraction = 0.0;
  // nullopt when the corresponding side of the partition is empty.
  std::optional<double> effect_in_T;
  std::optional<double> effect_in_S;
  std::optional<double> heterogeneity;
  Baselines baselines;
  // Set by evaluate_on_sample: the plug-in value is biased; use cv_tmle for
  // inference.
  bool biased_plugin = false;
  std::vector<bool> treated;
};

RuleEvaluation evaluate_on_truth(const TreatmentRule& rule, const PotentialPopulation& pop);
RuleEvaluation evaluate_on_sample(const TreatmentRule& rule, const OutcomeRegression& outcome,
                                  const TrialDataset& data);

struct AdjustedBaselines {
  double treat_all = 0.0;
  double treat_none = 0.0;
  double ate = 0.0;
};

// G-formula averages of the outcome regression over the sample covariates.
AdjustedBaselines adjusted_baselines(const TrialDataset& data, const OutcomeRegression& outcome);

// ---------------------------------------------------------------------------
// Saved rule files hold the fitted model, context, and threshold. Rules with
// a non-constant delta function cannot be saved.

nlohmann::ordered_json rule_to_json(const TreatmentRule& rule);
TreatmentRule rule_from_json(const nlohmann::ordered_json& j);

}  // namespace optrule

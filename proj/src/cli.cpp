#include "optrule/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "optrule/cate.hpp"
#include "optrule/data.hpp"
#include "optrule/error.hpp"
#include "optrule/oracle.hpp"
#include "optrule/rng.hpp"
#include "optrule/rules.hpp"
#include "optrule/tmle.hpp"

namespace optrule {

using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Report text

namespace {

void dump(const ordered_json& j, int indent, std::string& out) {
  const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
  const std::string close_pad(static_cast<std::size_t>(indent), ' ');
  switch (j.type()) {
    case ordered_json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad;
        out += ordered_json(it.key()).dump();
        out += ": ";
        dump(it.value(), indent + 2, out);
      }
      out += "\n" + close_pad + "}";
      return;
    }
    case ordered_json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ",\n";
        first = false;
        out += pad;
        dump(v, indent + 2, out);
      }
      out += "\n" + close_pad + "]";
      return;
    }
    case ordered_json::value_t::number_float: {
      const double x = j.get<double>();
      if (std::isnan(x)) {
        out += "null";
      } else if (std::isinf(x)) {
        out += x > 0 ? "\"inf\"" : "\"-inf\"";
      } else {
        out += format_real(x);
      }
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

std::string serialize_report(const ordered_json& report) {
  std::string out;
  dump(report, 0, out);
  out += "\n";
  return out;
}

ordered_json parse_report(const std::string& text) { return ordered_json::parse(text); }

// ---------------------------------------------------------------------------

namespace {

ordered_json opt_json(const std::optional<double>& x) {
  return x ? ordered_json(*x) : ordered_json(nullptr);
}

ordered_json evaluation_json(const RuleEvaluation& ev) {
  return ordered_json{{"value", ev.value},
                      {"treated_fraction", ev.treated_fraction},
                      {"effect_in_T", opt_json(ev.effect_in_T)},
                      {"effect_in_S", opt_json(ev.effect_in_S)},
                      {"heterogeneity", opt_json(ev.heterogeneity)},
                      {"baselines",
                       {{"treat_all", ev.baselines.treat_all},
                        {"treat_none", ev.baselines.treat_none},
                        {"random_q", ev.baselines.random_q}}},
                      {"biased_plugin", ev.biased_plugin}};
}

ordered_json solution_json(const PotentialPopulation& pop, const OracleSolution& sol) {
  double treated_mass = 0.0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (sol.partition.treats(i)) treated_mass += pop[i].mass;
  }
  return ordered_json{{"objective", std::string(to_string(sol.objective))},
                      {"objective_value", sol.objective_value},
                      {"population_value", policy_value(pop, sol.partition)},
                      {"threshold", sol.threshold},
                      {"treated_count", sol.partition.treated_count()},
                      {"treated_fraction", treated_mass / pop.total_mass()},
                      {"degenerate", sol.degenerate}};
}

ordered_json model_summary(const CateModel& m) {
  ordered_json weights = ordered_json::object();
  ordered_json cv = ordered_json::object();
  for (std::size_t l = 0; l < m.labels.size(); ++l) {
    weights[m.labels[l]] = m.weights[l];
    cv[m.labels[l]] = m.cv_mse[l];
  }
  return ordered_json{{"learners", m.labels},
                      {"weights", weights},
                      {"cv_mse", cv},
                      {"ensemble_cv_mse", m.ensemble_cv_mse},
                      {"f_mode", std::string(to_string(m.centering))},
                      {"folds", m.folds.k}};
}

ordered_json context_json(const RuleContext& ctx) {
  return ordered_json{
      {"kind", std::string(to_string(ctx.kind))},
      {"q", ctx.kind == ContextKind::constrained ? ordered_json(ctx.q) : ordered_json(nullptr)},
      {"budget", opt_json(ctx.budget)},
      {"delta", opt_json(ctx.delta_const)}};
}

std::vector<double> unit_costs(const PotentialPopulation& pop) {
  std::vector<double> costs(pop.size(), 1.0);
  if (pop.has_cost()) {
    for (std::size_t i = 0; i < pop.size(); ++i) costs[i] = *pop[i].cost;
  }
  return costs;
}

// Oracle value, achieved value, and regret of a rule on the truth for its
// context. The constrained oracle optimizes over every set of at most q n
// units, matching the rule's at-most-q semantics.
ordered_json comparison_json(const TreatmentRule& rule, const RuleEvaluation& ev,
                             const PotentialPopulation& pop) {
  std::string metric = "policy_value";
  double oracle_value = 0.0;
  std::optional<double> achieved;
  switch (rule.context.kind) {
    case ContextKind::unconstrained:
      oracle_value = solve_unconstrained(pop).objective_value;
      achieved = ev.value;
      break;
    case ContextKind::constrained: {
      const std::vector<double> ones(pop.size(), 1.0);
      oracle_value =
          solve_cost_constrained(pop, ones, rule.context.q * pop.total_mass()).objective_value;
      achieved = ev.value;
      break;
    }
    case ContextKind::cost:
      if (rule.context.budget) {
        if (!pop.has_cost()) throw ValidationError("budget-mode regret needs a cost column in the truth file");
        oracle_value = solve_cost_constrained(pop, unit_costs(pop),
                                              *rule.context.budget * pop.total_mass())
                           .objective_value;
        achieved = ev.value;
      } else {
        metric = "net_benefit";
        double best = 0.0, got = 0.0;
        for (std::size_t i = 0; i < pop.size(); ++i) {
          const PotentialUnit& u = pop[i];
          const double net = u.effect() - rule.delta(u.covariates);
          if (net > 0.0) best += u.mass * net;
          if (ev.treated[i]) got += u.mass * net;
        }
        oracle_value = best / pop.total_mass();
        achieved = got / pop.total_mass();
      }
      break;
    case ContextKind::heterogeneity:
      metric = "heterogeneity";
      oracle_value = solve_heterogeneity(pop).objective_value;
      achieved = ev.heterogeneity;
      break;
  }
  return ordered_json{{"metric", metric},
                      {"oracle_value", oracle_value},
                      {"achieved_value", opt_json(achieved)},
                      {"regret", achieved ? ordered_json(oracle_value - *achieved)
                                          : ordered_json(nullptr)}};
}

// ---------------------------------------------------------------------------

struct FitOptions {
  std::string context = "unconstrained";
  double q = 0.0;
  double budget = 0.0;
  double delta = 0.0;
  std::string learners = "constant,linear,knn,stump";
  std::string outcome_learners;
  std::string f_mode = "zero";
  int folds = 10;
  std::uint64_t seed = 0;
  double clamp = 1e-6;
  bool alt_variance = false;
  bool no_tmle = false;
  double y_lo = 0.0;
  double y_hi = 0.0;

  CLI::Option* q_opt = nullptr;
  CLI::Option* budget_opt = nullptr;
  CLI::Option* delta_opt = nullptr;
  CLI::Option* y_lo_opt = nullptr;
  CLI::Option* y_hi_opt = nullptr;

  RuleContext rule_context() const {
    RuleContext ctx;
    ctx.kind = parse_context_kind(context);
    const bool has_q = q_opt->count() > 0;
    const bool has_budget = budget_opt->count() > 0;
    const bool has_delta = delta_opt->count() > 0;
    switch (ctx.kind) {
      case ContextKind::constrained:
        if (!has_q) throw ValidationError("--context constrained needs --q");
        if (!(q > 0.0 && q < 1.0)) throw ValidationError("--q must lie strictly inside (0,1)");
        if (has_budget || has_delta) {
          throw ValidationError("--budget/--delta-const only apply to --context cost");
        }
        ctx.q = q;
        break;
      case ContextKind::cost:
        if (has_budget == has_delta) {
          throw ValidationError("--context cost needs exactly one of --budget, --delta-const");
        }
        if (has_q) throw ValidationError("--q only applies to --context constrained");
        if (has_budget) {
          if (!(budget > 0.0) || !std::isfinite(budget)) {
            throw ValidationError("--budget must be positive");
          }
          ctx.budget = budget;
        } else {
          if (!std::isfinite(delta)) throw ValidationError("--delta-const must be finite");
          ctx.delta_const = delta;
        }
        break;
      default:
        if (has_q || has_budget || has_delta) {
          throw ValidationError("--q/--budget/--delta-const do not apply to --context " + context);
        }
    }
    return ctx;
  }

  std::vector<LearnerSpec> learner_specs(const std::string& text) const {
    auto specs = parse_learner_list(text);
    std::set<std::string> seen;
    for (const auto& s : specs) {
      s.validate();
      if (!seen.insert(s.label).second) {
        throw ValidationError("learner '" + s.label + "' listed twice");
      }
    }
    return specs;
  }

  std::optional<std::pair<double, double>> bounds() const {
    const bool lo = y_lo_opt->count() > 0, hi = y_hi_opt->count() > 0;
    if (lo != hi) throw ValidationError("--y-lo and --y-hi must be given together");
    if (!lo) return std::nullopt;
    return std::make_pair(y_lo, y_hi);
  }

  void validate() const {
    rule_context();
    learner_specs(learners);
    if (!outcome_learners.empty()) learner_specs(outcome_learners);
    parse_centering_mode(f_mode);
    if (folds < 2) throw ValidationError("--folds must be at least 2");
    if (!(clamp > 0.0 && clamp < 0.5)) throw ValidationError("--clamp must lie in (0, 0.5)");
    bounds();
  }

  ordered_json echo() const {
    const RuleContext ctx = rule_context();
    const auto b = bounds();
    return ordered_json{
        {"context", context_json(ctx)},
        {"learners", learners},
        {"outcome_learners", outcome_learners.empty() ? learners : outcome_learners},
        {"f_mode", f_mode},
        {"folds", folds},
        {"seed", seed},
        {"clamp", clamp},
        {"alt_variance", alt_variance},
        {"tmle", !no_tmle},
        {"y_bounds", b ? ordered_json::array({b->first, b->second}) : ordered_json(nullptr)}};
  }
};

void add_fit_flags(CLI::App* cmd, FitOptions& o) {
  cmd->add_option("--context", o.context, "constrained|unconstrained|cost|heterogeneity")
      ->check(CLI::IsMember({"constrained", "unconstrained", "cost", "heterogeneity"}));
  o.q_opt = cmd->add_option("--q", o.q, "treated proportion for --context constrained");
  o.budget_opt = cmd->add_option("--budget", o.budget, "per-capita cost budget (cost context)");
  o.delta_opt = cmd->add_option("--delta-const", o.delta, "constant delta(c) (cost context)");
  cmd->add_option("--learners", o.learners, "CATE learner library");
  cmd->add_option("--outcome-learners", o.outcome_learners,
                  "outcome regression library (default: --learners)");
  cmd->add_option("--f-mode", o.f_mode, "pseudo-outcome centering")
      ->check(CLI::IsMember({"zero", "outcome"}));
  cmd->add_option("--folds", o.folds, "cross-validation folds");
  cmd->add_option("--seed", o.seed, "seed");
  cmd->add_option("--clamp", o.clamp, "probability clamp before logit");
  cmd->add_flag("--alt-variance", o.alt_variance, "also report the plain influence variance");
  cmd->add_flag("--no-tmle", o.no_tmle, "skip CV-TMLE inference");
  o.y_lo_opt = cmd->add_option("--y-lo", o.y_lo, "outcome lower bound");
  o.y_hi_opt = cmd->add_option("--y-hi", o.y_hi, "outcome upper bound");
}

struct Timer {
  using clock = std::chrono::steady_clock;
  ordered_json entries = ordered_json::object();
  clock::time_point start = clock::now();

  void lap(const std::string& name) {
    const auto now = clock::now();
    entries[name] = std::chrono::duration<double>(now - start).count();
    start = now;
  }
};

struct FitResult {
  ordered_json results;
  TreatmentRule rule;
};

FitResult fit_pipeline(const TrialDataset& data, const FitOptions& o,
                       std::vector<std::string>& warnings, Timer& timer) {
  const RuleContext ctx = o.rule_context();
  const auto specs = o.learner_specs(o.learners);
  const auto outcome_specs =
      o.learner_specs(o.outcome_learners.empty() ? o.learners : o.outcome_learners);
  const CenteringMode centering = parse_centering_mode(o.f_mode);
  if (ctx.kind == ContextKind::cost && ctx.budget && !data.has_cost()) {
    throw ValidationError("--budget needs a cost column in the data");
  }

  const FoldAssignment folds = assign_folds(data.size(), o.folds, o.seed);
  auto model = std::make_shared<const CateModel>(
      fit_super_learner(data, specs, centering, folds));
  warnings.insert(warnings.end(), model->warnings.begin(), model->warnings.end());
  timer.lap("super_learner");

  FitResult fr;
  fr.rule = build_rule(model, data, ctx);
  const TreatmentRule& rule = fr.rule;

  std::size_t treated = 0;
  double treated_cost = 0.0;
  for (const TrialRecord& r : data.records()) {
    if (rule.treats(r.covariates, r.cost)) {
      ++treated;
      if (r.cost) treated_cost += *r.cost;
    }
  }
  const double n = static_cast<double>(data.size());
  const double fraction = static_cast<double>(treated) / n;
  ordered_json budget_check{{"treated_fraction_within_q", nullptr},
                            {"treated_cost_within_budget", nullptr}};
  if (ctx.kind == ContextKind::constrained) {
    budget_check["treated_fraction_within_q"] = fraction <= ctx.q;
  }
  if (ctx.budget) {
    budget_check["treated_cost_within_budget"] = treated_cost <= *ctx.budget * n * (1.0 + 1e-12);
  }

  ordered_json rule_json{{"context", context_json(ctx)},
                         {"threshold", rule.threshold},
                         {"cost_scaled", rule.cost_scaled},
                         {"degenerate", rule.degenerate},
                         {"treated_fraction", fraction},
                         {"treated_cost_per_capita",
                          data.has_cost() ? ordered_json(treated_cost / n) : ordered_json(nullptr)}};

  ordered_json tmle = nullptr;
  if (!o.no_tmle &&
      (ctx.kind == ContextKind::constrained || ctx.kind == ContextKind::unconstrained)) {
    TmleConfig cfg;
    cfg.context = ctx.kind == ContextKind::constrained ? TmleContext::constrained
                                                       : TmleContext::unconstrained;
    cfg.q = ctx.kind == ContextKind::constrained ? ctx.q : 0.5;
    cfg.cate_learners = specs;
    cfg.outcome_learners = outcome_specs;
    cfg.centering = centering;
    cfg.folds = o.folds;
    cfg.seed = o.seed;
    cfg.clamp = o.clamp;
    cfg.bounds = o.bounds();
    cfg.alt_variance = o.alt_variance;
    const TmleReport rep = cv_tmle(data, cfg);
    warnings.insert(warnings.end(), rep.warnings.begin(), rep.warnings.end());
    tmle = rep.to_json();
    timer.lap("cv_tmle");
  }

  const StackedOutcomeModel outcome = fit_outcome_regression(data, outcome_specs, folds);
  warnings.insert(warnings.end(), outcome.warnings.begin(), outcome.warnings.end());
  const RuleEvaluation plugin = evaluate_on_sample(rule, outcome, data);
  ordered_json adjusted = nullptr;
  if (!data.design().is_randomized()) {
    const AdjustedBaselines b = adjusted_baselines(data, outcome);
    adjusted = ordered_json{{"treat_all", b.treat_all}, {"treat_none", b.treat_none}, {"ate", b.ate}};
  }
  timer.lap("plugin_evaluation");

  fr.results = ordered_json{{"n", data.size()},
                            {"covariates", data.covariate_names()},
                            {"design", data.design().is_randomized() ? "randomized" : "observational"},
                            {"model", model_summary(*model)},
                            {"rule", rule_json},
                            {"tmle", tmle},
                            {"plugin_evaluation", evaluation_json(plugin)},
                            {"adjusted_baselines", adjusted},
                            {"budget_check", budget_check},
                            {"comparison", nullptr}};
  return fr;
}

// ---------------------------------------------------------------------------

struct Emitter {
  std::ostream& out;
  std::string report_path;
  bool timing = false;

  void emit(const std::string& command, ordered_json config, ordered_json results,
            const std::vector<std::string>& warnings, const Timer& timer) const {
    ordered_json report{{"schema_version", kReportSchemaVersion},
                        {"command", command},
                        {"config", std::move(config)},
                        {"results", std::move(results)},
                        {"warnings", warnings}};
    if (timing) report["timing_seconds"] = timer.entries;
    const std::string text = serialize_report(report);
    if (report_path.empty()) {
      out << text;
    } else {
      write_file_atomic(report_path, text);
    }
  }
};

std::string error_record(const std::string& kind, const std::string& message,
                         std::optional<std::size_t> row = {}) {
  ordered_json j{{"error", kind}, {"message", message}};
  if (row) j["row"] = *row;
  return j.dump();
}

int cmd_simulate(const DgpSpec& spec, const std::string& dgp, const std::string& data_path,
                 const std::string& truth_path, const Emitter& emitter) {
  Timer timer;
  DgpSpec s = spec;
  s.name = parse_dgp_name(dgp);
  s.validate();
  const Simulation sim = simulate(s);
  write_csv(sim.observed, data_path);
  write_population_csv(sim.truth, truth_path);
  timer.lap("simulate");
  std::size_t treated = 0;
  for (const auto& r : sim.observed.records()) treated += r.treatment == 1 ? 1 : 0;
  ordered_json config{{"dgp", dgp},
                      {"n", s.n},
                      {"dim", s.covariate_dim},
                      {"noise_sd", s.noise_sd},
                      {"treat_prob", s.treat_prob},
                      {"seed", s.seed},
                      {"out", data_path},
                      {"truth", truth_path}};
  ordered_json results{{"n", sim.observed.size()},
                       {"treated", treated},
                       {"true_psi", true_policy_value(s.name)}};
  if (!emitter.report_path.empty() || emitter.timing) {
    emitter.emit("simulate", config, results, {}, timer);
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Optimal treatment rules from trial data", "optrule"};
  app.require_subcommand(1);
  std::string report_path;
  bool timing = false;

  // simulate
  auto* sim = app.add_subcommand("simulate", "draw a synthetic trial with known truth");
  DgpSpec dgp_spec;
  std::string dgp_name;
  std::string data_out = "data.csv", truth_out = "truth.csv";
  sim->add_option("--dgp", dgp_name, "constant_effect|linear_cate|crossover_cate|null_effect")
      ->required();
  sim->add_option("--n", dgp_spec.n, "sample size")->required();
  sim->add_option("--dim", dgp_spec.covariate_dim, "covariate dimension");
  sim->add_option("--noise-sd", dgp_spec.noise_sd, "outcome noise sd");
  sim->add_option("--treat-prob", dgp_spec.treat_prob, "randomization probability");
  sim->add_option("--seed", dgp_spec.seed, "seed");
  sim->add_option("--out", data_out, "observed data CSV");
  sim->add_option("--truth", truth_out, "potential-outcome CSV");
  sim->add_option("--report", report_path, "report file (optional)");
  sim->add_flag("--timing", timing, "include wall-clock timings");

  // fit
  auto* fit = app.add_subcommand("fit", "fit a CATE model, build a rule, run CV-TMLE");
  FitOptions fit_opts;
  std::string data_path;
  std::string save_rule;
  double randomized = 0.0;
  fit->add_option("--data", data_path, "observed data CSV")->required();
  auto* randomized_opt =
      fit->add_option("--randomized", randomized, "randomization probability when no p column");
  add_fit_flags(fit, fit_opts);
  fit->add_option("--save-rule", save_rule, "write the fitted rule here");
  fit->add_option("--report", report_path, "report file (default: stdout)");
  fit->add_flag("--timing", timing, "include wall-clock timings");

  // oracle
  auto* orc = app.add_subcommand("oracle", "exact solutions on a potential-outcome file");
  std::string truth_path;
  double oracle_q = 0.5, oracle_budget = 0.0;
  orc->add_option("--truth", truth_path, "potential-outcome CSV")->required();
  auto* oracle_q_opt = orc->add_option("--q", oracle_q, "treated proportion (default 0.5)");
  auto* oracle_budget_opt =
      orc->add_option("--budget", oracle_budget, "per-capita cost budget (default q * mean cost)");
  orc->add_option("--report", report_path, "report file (default: stdout)");
  orc->add_flag("--timing", timing, "include wall-clock timings");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a saved rule against a truth file");
  std::string rule_path;
  ev->add_option("--rule", rule_path, "saved rule file")->required();
  ev->add_option("--truth", truth_path, "potential-outcome CSV")->required();
  ev->add_option("--report", report_path, "report file (default: stdout)");
  ev->add_flag("--timing", timing, "include wall-clock timings");

  // compare
  auto* cmp = app.add_subcommand("compare", "simulate, fit, and report regret against the oracle");
  DgpSpec cmp_spec;
  std::string cmp_dgp;
  FitOptions cmp_opts;
  cmp->add_option("--dgp", cmp_dgp, "DGP name")->required();
  cmp->add_option("--n", cmp_spec.n, "sample size")->required();
  cmp->add_option("--dim", cmp_spec.covariate_dim, "covariate dimension");
  cmp->add_option("--noise-sd", cmp_spec.noise_sd, "outcome noise sd");
  cmp->add_option("--treat-prob", cmp_spec.treat_prob, "randomization probability");
  add_fit_flags(cmp, cmp_opts);
  cmp->add_option("--report", report_path, "report file (default: stdout)");
  cmp->add_flag("--timing", timing, "include wall-clock timings");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_record("usage", e.what()) << "\n";
    return 1;
  }

  try {
    const Emitter emitter{out, report_path, timing};
    std::vector<std::string> warnings;
    Timer timer;

    if (sim->parsed()) {
      return cmd_simulate(dgp_spec, dgp_name, data_out, truth_out, emitter);
    }

    if (fit->parsed()) {
      fit_opts.validate();
      CsvLoadOptions load;
      if (randomized_opt->count() > 0) load.randomized = randomized;
      const TrialDataset data = load_csv(data_path, load);
      timer.lap("load");
      FitResult fr = fit_pipeline(data, fit_opts, warnings, timer);
      if (!save_rule.empty()) write_file_atomic(save_rule, serialize_report(rule_to_json(fr.rule)));
      ordered_json config = fit_opts.echo();
      config["data"] = data_path;
      config["randomized"] =
          randomized_opt->count() > 0 ? ordered_json(randomized) : ordered_json(nullptr);
      emitter.emit("fit", config, fr.results, warnings, timer);
      return 0;
    }

    if (orc->parsed()) {
      if (!(oracle_q > 0.0 && oracle_q < 1.0)) throw ValidationError("--q must lie in (0,1)");
      const PotentialPopulation pop = load_population_csv(truth_path);
      timer.lap("load");
      const std::vector<double> costs = unit_costs(pop);
      double mean_cost = 0.0;
      for (std::size_t i = 0; i < pop.size(); ++i) mean_cost += pop[i].mass * costs[i];
      mean_cost /= pop.total_mass();
      double budget = oracle_q * mean_cost;
      if (oracle_budget_opt->count() > 0) {
        if (!(oracle_budget > 0.0)) throw ValidationError("--budget must be positive");
        budget = oracle_budget;
      }

      ordered_json constrained = nullptr;
      try {
        constrained = solution_json(pop, solve_constrained(pop, oracle_q));
      } catch (const PreconditionError& e) {
        if (oracle_q_opt->count() > 0) throw;
        warnings.push_back(std::string("constrained context skipped: ") + e.what());
      }
      ordered_json heterogeneity = nullptr;
      if (pop.size() >= 2) {
        heterogeneity = solution_json(pop, solve_heterogeneity(pop));
      } else {
        warnings.push_back("heterogeneity context needs at least two units");
      }
      double treat_all = 0.0, treat_none = 0.0;
      for (const auto& u : pop.units()) {
        treat_all += u.mass * u.y1;
        treat_none += u.mass * u.y0;
      }
      ordered_json results{
          {"n", pop.size()},
          {"total_mass", pop.total_mass()},
          {"unit_costs", !pop.has_cost()},
          {"budget_per_capita", budget},
          {"constrained", constrained},
          {"unconstrained", solution_json(pop, solve_unconstrained(pop))},
          {"cost", solution_json(pop, solve_cost_constrained(pop, costs, budget * pop.total_mass()))},
          {"heterogeneity", heterogeneity},
          {"baselines",
           {{"treat_all", treat_all / pop.total_mass()},
            {"treat_none", treat_none / pop.total_mass()},
            {"random_q", random_allocation_value(pop, oracle_q)}}}};
      timer.lap("solve");
      ordered_json config{{"truth", truth_path}, {"q", oracle_q}, {"budget", budget}};
      emitter.emit("oracle", config, results, warnings, timer);
      return 0;
    }

    if (ev->parsed()) {
      const TreatmentRule rule = rule_from_json(parse_report(read_file(rule_path)));
      const PotentialPopulation pop = load_population_csv(truth_path);
      if (rule.model && pop.covariate_dim() != rule.model->covariate_dim) {
        throw ValidationError("truth file has " + std::to_string(pop.covariate_dim()) +
                              " covariates but the rule expects " +
                              std::to_string(rule.model->covariate_dim));
      }
      timer.lap("load");
      const RuleEvaluation evaluation = evaluate_on_truth(rule, pop);
      ordered_json results{{"rule",
                            {{"context", context_json(rule.context)},
                             {"threshold", rule.threshold},
                             {"cost_scaled", rule.cost_scaled},
                             {"degenerate", rule.degenerate}}},
                           {"evaluation", evaluation_json(evaluation)},
                           {"comparison", comparison_json(rule, evaluation, pop)}};
      timer.lap("evaluate");
      emitter.emit("evaluate", ordered_json{{"rule", rule_path}, {"truth", truth_path}}, results,
                   warnings, timer);
      return 0;
    }

    if (cmp->parsed()) {
      cmp_opts.validate();
      const RuleContext ctx = cmp_opts.rule_context();
      if (ctx.budget) throw ValidationError("compare: simulated data carry no costs; use --delta-const");
      DgpSpec s = cmp_spec;
      s.name = parse_dgp_name(cmp_dgp);
      s.seed = cmp_opts.seed;
      s.validate();
      const Simulation simd = simulate(s);
      timer.lap("simulate");
      FitResult fr = fit_pipeline(simd.observed, cmp_opts, warnings, timer);
      const RuleEvaluation truth_eval = evaluate_on_truth(fr.rule, simd.truth);
      fr.results["comparison"] = comparison_json(fr.rule, truth_eval, simd.truth);
      fr.results["truth_evaluation"] = evaluation_json(truth_eval);
      fr.results["true_psi"] =
          ctx.kind == ContextKind::unconstrained ? ordered_json(true_policy_value(s.name))
                                                 : ordered_json(nullptr);
      timer.lap("compare");
      ordered_json config = cmp_opts.echo();
      config["dgp"] = cmp_dgp;
      config["n"] = s.n;
      config["dim"] = s.covariate_dim;
      config["noise_sd"] = s.noise_sd;
      config["treat_prob"] = s.treat_prob;
      emitter.emit("compare", config, fr.results, warnings, timer);
      return 0;
    }
  } catch (const ParseError& e) {
    err << error_record("parse", e.what(), e.row()) << "\n";
    return 1;
  } catch (const ValidationError& e) {
    err << error_record("validation", e.what()) << "\n";
    return 1;
  } catch (const PreconditionError& e) {
    err << error_record("precondition", e.what()) << "\n";
    return 1;
  } catch (const NumericalError& e) {
    err << error_record("numerical", e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << error_record("error", e.what()) << "\n";
    return 1;
  }
  err << error_record("usage", "no command given") << "\n";
  return 1;
}

}  // namespace optrule

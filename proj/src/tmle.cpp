#include "optrule/tmle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "optrule/error.hpp"
#include "optrule/parallel.hpp"
#include "optrule/rng.hpp"
#include "optrule/rules.hpp"

namespace optrule {

using nlohmann::ordered_json;

std::pair<TrialDataset, OutcomeScale> scale_outcomes(
    const TrialDataset& data, std::optional<std::pair<double, double>> bounds) {
  if (data.size() == 0) throw PreconditionError("cannot scale an empty dataset");
  OutcomeScale scale;
  if (bounds) {
    scale.lo = bounds->first;
    scale.hi = bounds->second;
    if (!(scale.hi > scale.lo) || !std::isfinite(scale.lo) || !std::isfinite(scale.hi)) {
      throw ValidationError("outcome bounds need finite lo < hi");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double y = data[i].outcome;
      if (y < scale.lo || y > scale.hi) {
        throw ValidationError("outcome " + format_real(y) + " in row " + std::to_string(i + 1) +
                              " lies outside the bounds [" + format_real(scale.lo) + ", " +
                              format_real(scale.hi) + "]");
      }
    }
  } else {
    const auto [mn, mx] = std::minmax_element(
        data.records().begin(), data.records().end(),
        [](const TrialRecord& a, const TrialRecord& b) { return a.outcome < b.outcome; });
    scale.lo = mn->outcome;
    scale.hi = mx->outcome;
    if (!(scale.hi > scale.lo)) {
      scale.degenerate = true;
      scale.hi = scale.lo + 1.0;
    }
  }
  std::vector<double> y(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    y[i] = std::clamp(scale.to_unit(data[i].outcome), 0.0, 1.0);
  }
  return {data.with_outcomes(y), scale};
}

// ---------------------------------------------------------------------------

double logit(double p) { return std::log(p) - std::log1p(-p); }

double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct LogLik {
  std::span<const double> y, h, offset, w;

  double value(double eps) const {
    double ll = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (w[i] == 0.0) continue;
      const double eta = offset[i] + eps * h[i];
      ll += w[i] * (y[i] * eta - softplus(eta));
    }
    return ll;
  }

  void derivatives(double eps, double& score, double& info) const {
    score = 0.0;
    info = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (w[i] == 0.0) continue;
      const double mu = expit(offset[i] + eps * h[i]);
      score += w[i] * h[i] * (y[i] - mu);
      info += w[i] * h[i] * h[i] * mu * (1.0 - mu);
    }
  }
};

}  // namespace

double weighted_offset_logistic(std::span<const double> y, std::span<const double> h,
                                std::span<const double> offset, std::span<const double> w,
                                const LogisticOptions& options) {
  const std::size_t n = y.size();
  if (h.size() != n || offset.size() != n || w.size() != n) {
    throw PreconditionError("weighted_offset_logistic: length mismatch");
  }
  double total_w = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(h[i]) || !std::isfinite(offset[i]) ||
        !std::isfinite(w[i])) {
      throw NumericalError("weighted_offset_logistic: non-finite input");
    }
    if (w[i] < 0.0) throw PreconditionError("weighted_offset_logistic: negative weight");
    if (y[i] < 0.0 || y[i] > 1.0) {
      throw PreconditionError("weighted_offset_logistic: outcomes must lie in [0,1]");
    }
    total_w += w[i];
  }
  if (total_w == 0.0) return 0.0;

  // The score decreases in epsilon; a finite root needs its limits at
  // +inf and -inf to straddle zero.
  double limit_hi = 0.0, limit_lo = 0.0;
  bool any_h = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] == 0.0 || h[i] == 0.0) continue;
    any_h = true;
    limit_hi += w[i] * h[i] * (y[i] - (h[i] > 0.0 ? 1.0 : 0.0));
    limit_lo += w[i] * h[i] * (y[i] - (h[i] < 0.0 ? 1.0 : 0.0));
  }
  if (!any_h) return 0.0;
  if (!(limit_hi < 0.0) || !(limit_lo > 0.0)) {
    throw NumericalError("weighted_offset_logistic: separation (the likelihood has no finite maximizer)");
  }

  const LogLik f{y, h, offset, w};
  const double tol = options.score_tol * total_w;
  double eps = 0.0;
  double ll = f.value(eps);
  for (int it = 0; it < options.max_iter; ++it) {
    double score = 0.0, info = 0.0;
    f.derivatives(eps, score, info);
    if (std::abs(score) <= tol) return eps;
    if (!(info > 0.0)) {
      throw NumericalError("weighted_offset_logistic: separation (flat likelihood at epsilon = " +
                           format_real(eps) + ")");
    }
    // Near the optimum the likelihood change drowns in rounding, so a step
    // that shrinks the score is accepted too.
    auto acceptable = [&](double cand, double cand_ll) {
      if (cand_ll > ll) return true;
      double s = 0.0, i = 0.0;
      f.derivatives(cand, s, i);
      return std::abs(s) < std::abs(score);
    };
    double step = score / info;
    double next = eps + step;
    double next_ll = f.value(next);
    int halvings = 0;
    while (!acceptable(next, next_ll) && halvings < 60) {
      step *= 0.5;
      next = eps + step;
      next_ll = f.value(next);
      ++halvings;
    }
    if (std::abs(next) > options.max_abs_epsilon) {
      throw NumericalError("weighted_offset_logistic: separation (|epsilon| exceeded " +
                           format_real(options.max_abs_epsilon) + ")");
    }
    if (next == eps) return eps;
    eps = next;
    ll = next_ll;
  }
  double score = 0.0, info = 0.0;
  f.derivatives(eps, score, info);
  if (std::abs(score) <= tol) return eps;
  throw NumericalError("weighted_offset_logistic: no convergence in " +
                       std::to_string(options.max_iter) + " iterations");
}

// ---------------------------------------------------------------------------

namespace {

double clamp_prob(double p, double clamp) { return std::clamp(p, clamp, 1.0 - clamp); }

ordered_json weights_json(const std::vector<std::string>& labels,
                          const std::vector<double>& weights) {
  ordered_json out = ordered_json::object();
  for (std::size_t l = 0; l < labels.size(); ++l) out[labels[l]] = weights[l];
  return out;
}

}  // namespace

CrossFit cross_fit(const TrialDataset& scaled, const TmleConfig& config) {
  if (config.cate_learners.empty() || config.outcome_learners.empty()) {
    throw PreconditionError("cv_tmle needs at least one learner");
  }
  if (!(config.clamp > 0.0 && config.clamp < 0.5)) {
    throw PreconditionError("clamp must lie in (0, 0.5)");
  }
  const std::size_t n = scaled.size();
  const FoldAssignment folds = assign_folds(n, config.folds, config.seed);

  CrossFit fit;
  fit.fold_of = folds.fold_of;
  fit.score.resize(n);
  fit.q0.resize(n);
  fit.q1.resize(n);
  fit.y.resize(n);
  fit.a.resize(n);
  fit.p1.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const TrialRecord& r = scaled[i];
    fit.y[i] = r.outcome;
    fit.a[i] = r.treatment;
    fit.p1[i] = r.treatment == 1 ? r.propensity : 1.0 - r.propensity;
  }

  std::vector<std::vector<std::string>> fold_warnings(static_cast<std::size_t>(folds.k));
  std::vector<ordered_json> summaries(static_cast<std::size_t>(folds.k));
  parallel_for(static_cast<std::size_t>(folds.k), [&](std::size_t vi) {
    const int v = static_cast<int>(vi);
    const auto train = folds.training(v);
    const auto valid = folds.validation(v);
    const TrialDataset sub = scaled.subset(train);
    const int inner_k = std::min<int>(config.folds, static_cast<int>(train.size()));
    const FoldAssignment inner =
        assign_folds(train.size(), inner_k, derive_seed(config.seed, "tmle-inner", vi));
    const CateModel cate = fit_super_learner(sub, config.cate_learners, config.centering, inner);
    const StackedOutcomeModel outcome =
        fit_outcome_regression(sub, config.outcome_learners, inner);
    for (std::size_t i : valid) {
      const auto& c = scaled[i].covariates;
      fit.score[i] = cate.predict(c);
      fit.q0[i] = clamp_prob(outcome.predict(0, c), config.clamp);
      fit.q1[i] = clamp_prob(outcome.predict(1, c), config.clamp);
    }
    const std::string prefix = "tmle fold " + std::to_string(v + 1) + ": ";
    for (const auto& w : cate.warnings) fold_warnings[vi].push_back(prefix + w);
    for (const auto& w : outcome.warnings) fold_warnings[vi].push_back(prefix + w);
    summaries[vi] = ordered_json{{"fold", v + 1},
                                 {"n_train", train.size()},
                                 {"n_validation", valid.size()},
                                 {"cate_weights", weights_json(cate.labels, cate.weights)},
                                 {"cate_cv_mse", cate.ensemble_cv_mse},
                                 {"cate_candidate_cv_mse", weights_json(cate.labels, cate.cv_mse)},
                                 {"outcome_weights", weights_json(outcome.labels, outcome.weights)},
                                 {"outcome_cv_mse", outcome.ensemble_cv_mse},
                                 {"outcome_candidate_cv_mse",
                                  weights_json(outcome.labels, outcome.cv_mse)}};
  });
  for (auto& ws : fold_warnings) fit.warnings.insert(fit.warnings.end(), ws.begin(), ws.end());
  fit.fold_summaries = std::move(summaries);
  return fit;
}

double tmle_cutoff(std::span<const double> scores, TmleContext context, double q) {
  if (context == TmleContext::unconstrained) return 0.0;
  return constrained_cutoff(scores, q);
}

double fluctuate(const CrossFit& fit, double delta, double clamp) {
  const std::size_t n = fit.size();
  std::vector<double> h(n), offset(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int a = fit.a[i];
    h[i] = fit.clever(i, a);
    offset[i] = logit(clamp_prob(a == 1 ? fit.q1[i] : fit.q0[i], clamp));
    w[i] = fit.score[i] > delta ? 1.0 : 0.0;
  }
  return weighted_offset_logistic(fit.y, h, offset, w);
}

std::vector<double> influence_values(const CrossFit& fit, std::span<const double> qstar0,
                                     std::span<const double> qstar1, double psi) {
  std::vector<double> d(fit.size());
  for (std::size_t i = 0; i < fit.size(); ++i) {
    const int a = fit.a[i];
    const double q_obs = a == 1 ? qstar1[i] : qstar0[i];
    d[i] = fit.clever(i, a) * (fit.y[i] - q_obs) + qstar1[i] - qstar0[i] - psi;
  }
  return d;
}

Targeted target(const CrossFit& fit, double delta, double epsilon, double clamp) {
  const std::size_t n = fit.size();
  Targeted t;
  t.qstar0.resize(n);
  t.qstar1.resize(n);
  t.treated.resize(n);
  double psi_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    t.qstar0[i] = expit(logit(clamp_prob(fit.q0[i], clamp)) + epsilon * fit.clever(i, 0));
    t.qstar1[i] = expit(logit(clamp_prob(fit.q1[i], clamp)) + epsilon * fit.clever(i, 1));
    t.treated[i] = fit.score[i] > delta;
    if (t.treated[i]) psi_sum += t.qstar1[i] - t.qstar0[i];
  }
  const double nn = static_cast<double>(n);
  t.psi = psi_sum / nn;
  t.influence = influence_values(fit, t.qstar0, t.qstar1, t.psi);
  double resid = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!t.treated[i]) continue;
    const int a = fit.a[i];
    resid += fit.clever(i, a) * (fit.y[i] - (a == 1 ? t.qstar1[i] : t.qstar0[i]));
  }
  t.score_residual = resid / nn;
  return t;
}

// ---------------------------------------------------------------------------

ordered_json TmleReport::to_json() const {
  ordered_json j;
  j["context"] = context == TmleContext::constrained ? "constrained" : "unconstrained";
  j["q"] = q;
  j["n"] = n;
  j["psi_hat"] = psi_hat;
  j["sigma_hat"] = sigma_hat;
  j["ci_lo"] = ci_lo;
  j["ci_hi"] = ci_hi;
  j["epsilon_n"] = epsilon_n;
  j["delta_n"] = delta_n;
  j["scale"] = ordered_json{{"lo", scale.lo}, {"hi", scale.hi}, {"degenerate", scale.degenerate}};
  j["mean_outcome_under_rule"] = mean_outcome_under_rule;
  j["treat_none_estimate"] = treat_none_estimate;
  ordered_json diag;
  diag["treated_fraction"] = treated_fraction;
  diag["score_residual"] = score_residual;
  diag["alt_sigma_hat"] = alt_sigma_hat ? ordered_json(*alt_sigma_hat) : ordered_json(nullptr);
  diag["degenerate"] = degenerate;
  diag["folds"] = fold_summaries;
  j["diagnostics"] = diag;
  return j;
}

TmleReport cv_tmle(const TrialDataset& data, const TmleConfig& config) {
  if (data.size() < kMinTmleRecords) {
    throw PreconditionError("cv_tmle needs at least " + std::to_string(kMinTmleRecords) +
                            " records, got " + std::to_string(data.size()));
  }
  if (config.context == TmleContext::constrained && !(config.q > 0.0 && config.q < 1.0)) {
    throw PreconditionError("q must lie strictly inside (0,1)");
  }
  TmleReport report;
  report.context = config.context;
  report.q = config.context == TmleContext::constrained ? config.q : 1.0;
  report.n = data.size();

  auto [scaled, scale] = scale_outcomes(data, config.bounds);
  report.scale = scale;
  if (scale.degenerate) {
    report.degenerate = true;
    report.treat_none_estimate = scale.lo;
    report.mean_outcome_under_rule = scale.lo;
    report.warnings.push_back("constant outcome: psi_hat is 0 by construction");
    return report;
  }

  CrossFit fit = cross_fit(scaled, config);
  report.warnings = std::move(fit.warnings);
  report.fold_summaries = fit.fold_summaries;

  const double delta = tmle_cutoff(fit.score, config.context, config.q);
  std::size_t treated = 0;
  for (double s : fit.score) treated += s > delta ? 1 : 0;
  double epsilon = 0.0;
  if (treated == 0) {
    report.warnings.push_back("the rule treats no one in any fold: psi_hat is 0");
  } else {
    epsilon = fluctuate(fit, delta, config.clamp);
  }
  const Targeted t = target(fit, delta, epsilon, config.clamp);

  const double n = static_cast<double>(fit.size());
  const double q_term = report.q;
  double var = 0.0, alt = 0.0, none = 0.0;
  for (std::size_t i = 0; i < fit.size(); ++i) {
    const double w = t.treated[i] ? 1.0 : 0.0;
    const double term = w * (t.influence[i] - delta) + delta * q_term;
    var += term * term;
    alt += w * t.influence[i] * w * t.influence[i];
    none += t.qstar0[i];
  }
  var /= n;
  alt /= n;
  none /= n;

  const double width = scale.width();
  const double sigma = std::sqrt(var);
  const double half = 1.96 * sigma / std::sqrt(n);
  report.delta_n = delta;
  report.epsilon_n = epsilon;
  report.psi_hat = t.psi * width;
  report.sigma_hat = sigma * width;
  report.ci_lo = (t.psi - half) * width;
  report.ci_hi = (t.psi + half) * width;
  report.treated_fraction = static_cast<double>(treated) / n;
  report.score_residual = t.score_residual;
  if (config.alt_variance) report.alt_sigma_hat = std::sqrt(alt) * width;
  report.treat_none_estimate = scale.lo + none * width;
  report.mean_outcome_under_rule = report.treat_none_estimate + report.psi_hat;
  if (std::abs(t.score_residual) > 1e-8) {
    report.warnings.push_back("fluctuation score residual " + format_real(t.score_residual) +
                              " exceeds 1e-8");
  }
  return report;
}

}  // namespace optrule

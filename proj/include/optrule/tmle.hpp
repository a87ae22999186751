#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "optrule/cate.hpp"
#include "optrule/data.hpp"
#include "optrule/learners.hpp"

namespace optrule {

// Y -> (Y - lo) / (hi - lo).
struct OutcomeScale {
  double lo = 0.0;
  double hi = 1.0;
  // Every observed outcome equals lo; no scaling is possible.
  bool degenerate = false;

  double to_unit(double y) const { return (y - lo) / (hi - lo); }
  double width() const { return hi - lo; }
};

// Scales outcomes into [0,1] using `bounds` when given, else the observed
// range. Throws when an outcome lies outside the supplied bounds.
std::pair<TrialDataset, OutcomeScale> scale_outcomes(
    const TrialDataset& data, std::optional<std::pair<double, double>> bounds = {});

struct LogisticOptions {
  int max_iter = 50;
  double score_tol = 1e-10;
  double max_abs_epsilon = 20.0;
};

// Slope of an intercept-free weighted logistic regression of fractional
// outcomes y on covariate h with fixed offsets (Newton with step-halving).
double weighted_offset_logistic(std::span<const double> y, std::span<const double> h,
                                std::span<const double> offset, std::span<const double> w,
                                const LogisticOptions& options = {});

double logit(double p);
double expit(double x);

// ---------------------------------------------------------------------------

enum class TmleContext { constrained, unconstrained };

struct TmleConfig {
  TmleContext context = TmleContext::unconstrained;
  double q = 0.5;  // constrained only
  std::vector<LearnerSpec> cate_learners;
  std::vector<LearnerSpec> outcome_learners;
  CenteringMode centering = CenteringMode::zero;
  int folds = 10;
  std::uint64_t seed = 0;
  double clamp = 1e-6;
  std::optional<std::pair<double, double>> bounds;
  // Report the plain influence-function variance alongside the default.
  bool alt_variance = false;
};

// Per-record cross-fitted quantities on the [0,1] outcome scale. Every field
// for record i comes from fits trained without record i.
struct CrossFit {
  std::vector<int> fold_of;
  std::vector<double> score;   // b_{v(i)}(C_i)
  std::vector<double> q0, q1;  // E_{v(i)}[Y | a, C_i], clamped
  std::vector<double> y;       // scaled outcome
  std::vector<int> a;
  std::vector<double> p1;      // P(A = 1 | C_i)
  std::vector<std::string> warnings;
  std::vector<nlohmann::ordered_json> fold_summaries;

  std::size_t size() const { return y.size(); }
  // (2a - 1) / P(a | C_i)
  double clever(std::size_t i, int arm) const {
    return arm == 1 ? 1.0 / p1[i] : -1.0 / (1.0 - p1[i]);
  }
};

CrossFit cross_fit(const TrialDataset& scaled, const TmleConfig& config);

// Smallest delta >= 0 with (1/n) sum 1(score_i > delta) <= q, or 0 for the
// unconstrained context.
double tmle_cutoff(std::span<const double> scores, TmleContext context, double q);

double fluctuate(const CrossFit& fit, double delta, double clamp);

struct Targeted {
  std::vector<double> qstar0, qstar1;  // fluctuated regressions
  std::vector<bool> treated;           // 1(score_i > delta)
  double psi = 0.0;
  std::vector<double> influence;       // D_i
  double score_residual = 0.0;         // (1/n) sum w_i h_i (y_i - Q*_i)
};

Targeted target(const CrossFit& fit, double delta, double epsilon, double clamp);

// D_i = h_i (Y_i - Q*(A_i, C_i)) + Q*(1, C_i) - Q*(0, C_i) - psi.
std::vector<double> influence_values(const CrossFit& fit, std::span<const double> qstar0,
                                     std::span<const double> qstar1, double psi);

struct TmleReport {
  TmleContext context = TmleContext::unconstrained;
  double q = 1.0;
  std::size_t n = 0;
  // On the original outcome scale.
  double psi_hat = 0.0;
  double sigma_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  // On the [0,1] scale.
  double epsilon_n = 0.0;
  double delta_n = 0.0;
  OutcomeScale scale;
  double treated_fraction = 0.0;
  double score_residual = 0.0;
  std::optional<double> alt_sigma_hat;
  double treat_none_estimate = 0.0;   // original scale
  double mean_outcome_under_rule = 0.0;
  bool degenerate = false;
  std::vector<nlohmann::ordered_json> fold_summaries;
  std::vector<std::string> warnings;

  nlohmann::ordered_json to_json() const;
};

inline constexpr std::size_t kMinTmleRecords = 50;

TmleReport cv_tmle(const TrialDataset& data, const TmleConfig& config);

}  // namespace optrule

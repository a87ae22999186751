#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "optrule/data.hpp"
#include "optrule/learners.hpp"

namespace optrule {

// f(a, c) used to center the pseudo-outcome.
using CenteringFn = std::function<double(int a, std::span<const double> c)>;

// (2a - 1) / P(A = a | c) * (y - f(a, c)) + f(1, c) - f(0, c)
double pseudo_outcome(const TrialRecord& record, const CenteringFn& f);

enum class CenteringMode { zero, outcome_regression };
std::string_view to_string(CenteringMode mode);
CenteringMode parse_centering_mode(std::string_view text);

// ---------------------------------------------------------------------------

// Balanced random fold labels in {0, ..., k-1}.
struct FoldAssignment {
  std::vector<int> fold_of;
  int k = 10;

  std::size_t size() const { return fold_of.size(); }
  std::vector<std::size_t> training(int v) const;
  std::vector<std::size_t> validation(int v) const;
  std::size_t fold_size(int v) const;
};

FoldAssignment assign_folds(std::size_t n, int k, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct SimplexLsOptions {
  double tol = 1e-10;
  int max_iter = 10000;
};

// (1/n) sum_i (t_i - alpha . x_i)^2
double stacked_mse(std::span<const double> targets, const Matrix& columns,
                   std::span<const double> weights);

// Minimizes stacked_mse over the probability simplex by projected gradient
// from the uniform point and every vertex, returning the best iterate.
std::vector<double> simplex_least_squares(std::span<const double> targets,
                                          const Matrix& columns,
                                          const SimplexLsOptions& options = {});

// Euclidean projection onto {w >= 0, sum w = 1}.
std::vector<double> project_to_simplex(std::span<const double> v);

// ---------------------------------------------------------------------------

class OutcomeRegression {
 public:
  virtual ~OutcomeRegression() = default;
  // Estimate of E[Y | A = a, C = c].
  virtual double predict(int a, std::span<const double> c) const = 0;
};

// Per-arm least squares; the cheap centering regression used inside the
// CATE super-learner.
class ArmLinearOutcome final : public OutcomeRegression {
 public:
  ArmLinearOutcome(LearnerPtr control, LearnerPtr treated)
      : control_(std::move(control)), treated_(std::move(treated)) {}
  double predict(int a, std::span<const double> c) const override {
    return (a == 1 ? treated_ : control_)->predict(c);
  }

 private:
  LearnerPtr control_;
  LearnerPtr treated_;
};

std::unique_ptr<ArmLinearOutcome> fit_arm_linear(const TrialDataset& data,
                                                 std::span<const std::size_t> rows,
                                                 std::vector<std::string>* warnings);

// Cross-validated convex stack of arm-stratified learners: candidate l
// predicts E[Y | a, c] from the learner fit on arm a alone.
class StackedOutcomeModel final : public OutcomeRegression {
 public:
  double predict(int a, std::span<const double> c) const override;

  std::vector<std::string> labels;
  std::vector<LearnerPtr> control_fits;
  std::vector<LearnerPtr> treated_fits;
  std::vector<double> weights;
  std::vector<double> cv_mse;
  double ensemble_cv_mse = 0.0;
  std::vector<std::string> warnings;
};

StackedOutcomeModel fit_outcome_regression(const TrialDataset& data,
                                           std::span<const LearnerSpec> specs,
                                           const FoldAssignment& folds);

// ---------------------------------------------------------------------------

// Super-learner estimate of c -> E[Y | A=1, c] - E[Y | A=0, c].
struct CateModel {
  std::vector<std::string> labels;
  std::vector<LearnerPtr> learners;  // full-data fits
  std::vector<double> weights;       // on the simplex
  std::vector<double> cv_mse;        // per candidate (simplex vertices)
  double ensemble_cv_mse = 0.0;
  FoldAssignment folds;
  CenteringMode centering = CenteringMode::zero;
  std::size_t covariate_dim = 0;
  std::vector<std::string> warnings;

  std::vector<double> learner_predictions(std::span<const double> c) const;
  double predict(std::span<const double> c) const;

  nlohmann::ordered_json to_json() const;
  static CateModel from_json(const nlohmann::ordered_json& j);
};

CateModel fit_super_learner(const TrialDataset& data, std::span<const LearnerSpec> specs,
                            CenteringMode centering, const FoldAssignment& folds);

double predict_cate(const CateModel& model, std::span<const double> c);

// Pseudo-outcomes of all records under `centering`, with any centering
// regression fit on `fit_rows` (all rows when empty).
std::vector<double> pseudo_outcomes(const TrialDataset& data, CenteringMode centering,
                                    std::span<const std::size_t> fit_rows = {},
                                    std::vector<std::string>* warnings = nullptr);

Matrix covariate_matrix(const TrialDataset& data);
Matrix covariate_matrix(const TrialDataset& data, std::span<const std::size_t> rows);

}  // namespace optrule

#include "optrule/cate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "optrule/error.hpp"
#include "optrule/parallel.hpp"
#include "optrule/rng.hpp"

namespace optrule {

using nlohmann::ordered_json;

double pseudo_outcome(const TrialRecord& r, const CenteringFn& f) {
  if (!(r.propensity > 0.0 && r.propensity < 1.0)) {
    throw PreconditionError("pseudo_outcome: propensity must lie strictly inside (0,1)");
  }
  const double f_obs = f(r.treatment, r.covariates);
  const double f1 = f(1, r.covariates);
  const double f0 = f(0, r.covariates);
  if (!std::isfinite(f_obs) || !std::isfinite(f1) || !std::isfinite(f0)) {
    throw NumericalError("pseudo_outcome: centering function returned a non-finite value");
  }
  const double sign = r.treatment == 1 ? 1.0 : -1.0;
  return sign / r.propensity * (r.outcome - f_obs) + f1 - f0;
}

std::string_view to_string(CenteringMode mode) {
  return mode == CenteringMode::zero ? "zero" : "outcome";
}

CenteringMode parse_centering_mode(std::string_view text) {
  if (text == "zero") return CenteringMode::zero;
  if (text == "outcome" || text == "outcome_regression") return CenteringMode::outcome_regression;
  throw ValidationError("unknown f-mode '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> FoldAssignment::training(int v) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] != v) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldAssignment::validation(int v) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == v) out.push_back(i);
  }
  return out;
}

std::size_t FoldAssignment::fold_size(int v) const {
  return static_cast<std::size_t>(std::count(fold_of.begin(), fold_of.end(), v));
}

FoldAssignment assign_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw PreconditionError("fold count must be at least 2");
  if (n < static_cast<std::size_t>(k)) {
    throw PreconditionError("cannot split " + std::to_string(n) + " records into " +
                            std::to_string(k) + " folds");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  CounterRng rng(derive_seed(seed, "folds", n));
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng.below(i + 1)]);
  }
  FoldAssignment folds;
  folds.k = k;
  folds.fold_of.assign(n, 0);
  for (std::size_t j = 0; j < n; ++j) folds.fold_of[perm[j]] = static_cast<int>(j % k);
  return folds;
}

// ---------------------------------------------------------------------------

double stacked_mse(std::span<const double> targets, const Matrix& columns,
                   std::span<const double> weights) {
  const Eigen::Index n = columns.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double fit = 0.0;
    for (Eigen::Index l = 0; l < columns.cols(); ++l) fit += weights[l] * columns(i, l);
    const double r = targets[i] - fit;
    total += r * r;
  }
  return total / static_cast<double>(n);
}

std::vector<double> project_to_simplex(std::span<const double> v) {
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cum = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cum += sorted[j];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - t > 0.0) theta = t;
  }
  std::vector<double> w(v.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    w[j] = std::max(v[j] - theta, 0.0);
    sum += w[j];
  }
  for (double& x : w) x /= sum;
  return w;
}

namespace {

struct Quadratic {
  Eigen::MatrixXd gram;  // X'X / n
  Eigen::VectorXd lin;   // X't / n
  double constant = 0.0; // t't / n
  const Matrix* columns = nullptr;
  Eigen::VectorXd targets;

  // Residual form; the expanded quadratic loses relative precision near 0.
  double value(const Eigen::VectorXd& a) const {
    return (targets - *columns * a).squaredNorm() / static_cast<double>(targets.size());
  }
};

bool lexicographically_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(),
                                      b.data() + b.size());
}

Eigen::VectorXd to_simplex(const Eigen::VectorXd& v) {
  const auto w = project_to_simplex(std::span<const double>(v.data(), v.size()));
  return Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

// Exact minimizer on the face spanned by the current support, if feasible.
std::optional<Eigen::VectorXd> polish_on_support(const Quadratic& q, const Eigen::VectorXd& a) {
  std::vector<Eigen::Index> support;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    if (a[j] > 0.0) support.push_back(j);
  }
  const Eigen::Index s = static_cast<Eigen::Index>(support.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
  Eigen::VectorXd rhs(s + 1);
  for (Eigen::Index r = 0; r < s; ++r) {
    for (Eigen::Index c = 0; c < s; ++c) kkt(r, c) = 2.0 * q.gram(support[r], support[c]);
    kkt(r, s) = 1.0;
    kkt(s, r) = 1.0;
    rhs[r] = 2.0 * q.lin[support[r]];
  }
  rhs[s] = 1.0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (!lu.isInvertible()) return std::nullopt;
  const Eigen::VectorXd sol = lu.solve(rhs);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(a.size());
  for (Eigen::Index r = 0; r < s; ++r) {
    if (!(sol[r] >= -1e-12) || !std::isfinite(sol[r])) return std::nullopt;
    out[support[r]] = std::max(sol[r], 0.0);
  }
  out /= out.sum();
  return out;
}

}  // namespace

std::vector<double> simplex_least_squares(std::span<const double> targets,
                                          const Matrix& columns,
                                          const SimplexLsOptions& options) {
  const Eigen::Index n = columns.rows();
  const Eigen::Index m = columns.cols();
  if (m < 1) throw PreconditionError("simplex_least_squares: need at least one column");
  if (static_cast<std::size_t>(n) != targets.size() || n == 0) {
    throw PreconditionError("simplex_least_squares: row count mismatch");
  }
  const Eigen::Map<const Eigen::VectorXd> t(targets.data(), n);
  if (!t.allFinite() || !columns.allFinite()) {
    throw NumericalError("simplex_least_squares: non-finite input");
  }
  if (m == 1) return {1.0};

  const double inv_n = 1.0 / static_cast<double>(n);
  Quadratic q;
  q.gram = columns.transpose() * columns * inv_n;
  q.lin = columns.transpose() * t * inv_n;
  q.constant = t.squaredNorm() * inv_n;
  q.columns = &columns;
  q.targets = t;
  const double lipschitz =
      2.0 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(q.gram, Eigen::EigenvaluesOnly)
                .eigenvalues()
                .maxCoeff();

  std::vector<Eigen::VectorXd> starts;
  starts.push_back(Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m)));
  for (Eigen::Index j = 0; j < m; ++j) starts.push_back(Eigen::VectorXd::Unit(m, j));

  Eigen::VectorXd best;
  double best_value = 0.0;
  auto consider = [&](const Eigen::VectorXd& a) {
    const double v = q.value(a);
    if (best.size() == 0) {
      best = a;
      best_value = v;
      return;
    }
    const double tie = 1e-14 * std::abs(best_value);
    if (v < best_value - tie || (std::abs(v - best_value) <= tie && lexicographically_less(a, best))) {
      best = a;
      best_value = v;
    }
  };

  for (const Eigen::VectorXd& start : starts) {
    Eigen::VectorXd a = start;
    double value = q.value(a);
    consider(a);
    if (lipschitz > 0.0) {
      const double step = 1.0 / lipschitz;
      for (int it = 0; it < options.max_iter; ++it) {
        const Eigen::VectorXd grad = 2.0 * (q.gram * a - q.lin);
        const Eigen::VectorXd next = to_simplex(a - step * grad);
        const double next_value = q.value(next);
        if (!(next_value <= value)) break;
        const double decrease = value - next_value;
        a = next;
        value = next_value;
        if (decrease < options.tol * std::max(1.0, std::abs(q.constant))) break;
      }
    }
    consider(a);
    if (auto polished = polish_on_support(q, a)) consider(*polished);
  }
  return std::vector<double>(best.data(), best.data() + m);
}

// ---------------------------------------------------------------------------

Matrix covariate_matrix(const TrialDataset& data) {
  Matrix x(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(data.covariate_dim()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& c = data[i].covariates;
    for (std::size_t j = 0; j < c.size(); ++j) x(i, j) = c[j];
  }
  return x;
}

Matrix covariate_matrix(const TrialDataset& data, std::span<const std::size_t> rows) {
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(data.covariate_dim()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& c = data[rows[r]].covariates;
    for (std::size_t j = 0; j < c.size(); ++j) x(r, j) = c[j];
  }
  return x;
}

namespace {

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

std::vector<std::size_t> arm_rows(const TrialDataset& data, std::span<const std::size_t> rows,
                                  int arm) {
  std::vector<std::size_t> out;
  for (std::size_t i : rows) {
    if (data[i].treatment == arm) out.push_back(i);
  }
  return out;
}

LearnerFit fit_on_rows(const LearnerSpec& spec, const Matrix& x_all,
                       std::span<const double> y_all, std::span<const std::size_t> rows) {
  Matrix x(static_cast<Eigen::Index>(rows.size()), x_all.cols());
  std::vector<double> y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) = x_all.row(static_cast<Eigen::Index>(rows[r]));
    y[r] = y_all[rows[r]];
  }
  return fit_learner(spec, x, y);
}

void append_warning(std::vector<std::string>* sink, const std::optional<std::string>& w,
                    const std::string& context) {
  if (sink && w) sink->push_back(context + *w);
}

void check_folds(const TrialDataset& data, const FoldAssignment& folds) {
  if (folds.size() != data.size()) {
    throw PreconditionError("fold assignment does not match the dataset size");
  }
  for (int v = 0; v < folds.k; ++v) {
    if (folds.fold_size(v) == 0) throw PreconditionError("empty fold " + std::to_string(v));
  }
}

}  // namespace

std::unique_ptr<ArmLinearOutcome> fit_arm_linear(const TrialDataset& data,
                                                 std::span<const std::size_t> rows,
                                                 std::vector<std::string>* warnings) {
  const Matrix x = covariate_matrix(data);
  std::vector<double> y(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) y[i] = data[i].outcome;
  LearnerPtr fits[2];
  for (int arm = 0; arm < 2; ++arm) {
    const auto idx = arm_rows(data, rows, arm);
    if (idx.empty()) {
      throw PreconditionError(std::string("no ") + (arm == 1 ? "treated" : "control") +
                              " records to fit the outcome regression");
    }
    LearnerFit fit = fit_on_rows(LearnerSpec::linear(), x, y, idx);
    append_warning(warnings, fit.warning, "centering regression: ");
    fits[arm] = std::move(fit.model);
  }
  return std::make_unique<ArmLinearOutcome>(fits[0], fits[1]);
}

std::vector<double> pseudo_outcomes(const TrialDataset& data, CenteringMode centering,
                                    std::span<const std::size_t> fit_rows,
                                    std::vector<std::string>* warnings) {
  std::vector<double> out(data.size());
  if (centering == CenteringMode::zero) {
    const CenteringFn zero = [](int, std::span<const double>) { return 0.0; };
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = pseudo_outcome(data[i], zero);
    return out;
  }
  const std::vector<std::size_t> rows =
      fit_rows.empty() ? all_rows(data.size())
                       : std::vector<std::size_t>(fit_rows.begin(), fit_rows.end());
  const auto reg = fit_arm_linear(data, rows, warnings);
  const CenteringFn f = [&](int a, std::span<const double> c) { return reg->predict(a, c); };
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = pseudo_outcome(data[i], f);
  return out;
}

// ---------------------------------------------------------------------------

double StackedOutcomeModel::predict(int a, std::span<const double> c) const {
  const auto& fits = a == 1 ? treated_fits : control_fits;
  double v = 0.0;
  for (std::size_t l = 0; l < fits.size(); ++l) {
    if (weights[l] != 0.0) v += weights[l] * fits[l]->predict(c);
  }
  return v;
}

namespace {

struct FoldColumns {
  std::vector<std::size_t> rows;
  std::vector<std::vector<double>> predictions;  // [learner][row]
  std::vector<double> targets;
  std::vector<std::string> warnings;
};

void finish_stack(const std::vector<FoldColumns>& per_fold, std::size_t n, std::size_t m,
                  std::vector<double>& weights, std::vector<double>& cv_mse,
                  double& ensemble_cv_mse, std::vector<std::string>& warnings) {
  Matrix columns(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  std::vector<double> targets(n);
  for (const FoldColumns& fold : per_fold) {
    for (std::size_t r = 0; r < fold.rows.size(); ++r) {
      const std::size_t i = fold.rows[r];
      targets[i] = fold.targets[r];
      for (std::size_t l = 0; l < m; ++l) columns(i, l) = fold.predictions[l][r];
    }
    warnings.insert(warnings.end(), fold.warnings.begin(), fold.warnings.end());
  }
  weights = simplex_least_squares(targets, columns);
  cv_mse.assign(m, 0.0);
  for (std::size_t l = 0; l < m; ++l) {
    std::vector<double> vertex(m, 0.0);
    vertex[l] = 1.0;
    cv_mse[l] = stacked_mse(targets, columns, vertex);
  }
  ensemble_cv_mse = stacked_mse(targets, columns, weights);
}

}  // namespace

StackedOutcomeModel fit_outcome_regression(const TrialDataset& data,
                                           std::span<const LearnerSpec> specs,
                                           const FoldAssignment& folds) {
  if (specs.empty()) throw PreconditionError("at least one learner is required");
  check_folds(data, folds);
  const std::size_t n = data.size();
  const std::size_t m = specs.size();
  const Matrix x = covariate_matrix(data);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = data[i].outcome;

  std::vector<FoldColumns> per_fold(static_cast<std::size_t>(folds.k));
  parallel_for(per_fold.size(), [&](std::size_t vi) {
    const int v = static_cast<int>(vi);
    FoldColumns& out = per_fold[vi];
    const auto train = folds.training(v);
    out.rows = folds.validation(v);
    out.predictions.assign(m, std::vector<double>(out.rows.size()));
    out.targets.resize(out.rows.size());
    for (std::size_t r = 0; r < out.rows.size(); ++r) out.targets[r] = y[out.rows[r]];
    for (int arm = 0; arm < 2; ++arm) {
      const auto idx = arm_rows(data, train, arm);
      if (idx.empty()) {
        throw PreconditionError("a training split has no records in one arm");
      }
      for (std::size_t l = 0; l < m; ++l) {
        LearnerFit fit = fit_on_rows(specs[l], x, y, idx);
        append_warning(&out.warnings, fit.warning,
                       "outcome regression fold " + std::to_string(v + 1) + ": ");
        for (std::size_t r = 0; r < out.rows.size(); ++r) {
          const std::size_t i = out.rows[r];
          if (data[i].treatment == arm) {
            out.predictions[l][r] = fit.model->predict(row_of(x, static_cast<Eigen::Index>(i)));
          }
        }
      }
    }
  });

  StackedOutcomeModel model;
  for (const auto& s : specs) model.labels.push_back(s.label);
  finish_stack(per_fold, n, m, model.weights, model.cv_mse, model.ensemble_cv_mse,
               model.warnings);

  const auto rows = all_rows(n);
  for (int arm = 0; arm < 2; ++arm) {
    const auto idx = arm_rows(data, rows, arm);
    if (idx.empty()) throw PreconditionError("no records in one treatment arm");
    for (std::size_t l = 0; l < m; ++l) {
      LearnerFit fit = fit_on_rows(specs[l], x, y, idx);
      append_warning(&model.warnings, fit.warning, "outcome regression: ");
      (arm == 1 ? model.treated_fits : model.control_fits).push_back(std::move(fit.model));
    }
  }
  return model;
}

// ---------------------------------------------------------------------------

std::vector<double> CateModel::learner_predictions(std::span<const double> c) const {
  if (c.size() != covariate_dim) {
    throw PreconditionError("covariate dimension " + std::to_string(c.size()) +
                            " does not match the model's " + std::to_string(covariate_dim));
  }
  std::vector<double> out(learners.size());
  for (std::size_t l = 0; l < learners.size(); ++l) out[l] = learners[l]->predict(c);
  return out;
}

double CateModel::predict(std::span<const double> c) const {
  if (c.size() != covariate_dim) {
    throw PreconditionError("covariate dimension " + std::to_string(c.size()) +
                            " does not match the model's " + std::to_string(covariate_dim));
  }
  double v = 0.0;
  for (std::size_t l = 0; l < learners.size(); ++l) {
    if (weights[l] != 0.0) v += weights[l] * learners[l]->predict(c);
  }
  return v;
}

double predict_cate(const CateModel& model, std::span<const double> c) {
  return model.predict(c);
}

ordered_json CateModel::to_json() const {
  ordered_json learners_json = ordered_json::array();
  for (const auto& l : learners) learners_json.push_back(l->to_json());
  return ordered_json{{"labels", labels},
                      {"weights", weights},
                      {"cv_mse", cv_mse},
                      {"ensemble_cv_mse", ensemble_cv_mse},
                      {"folds", folds.k},
                      {"f_mode", std::string(to_string(centering))},
                      {"covariate_dim", covariate_dim},
                      {"learners", learners_json}};
}

CateModel CateModel::from_json(const ordered_json& j) {
  CateModel m;
  m.labels = j.at("labels").get<std::vector<std::string>>();
  m.weights = j.at("weights").get<std::vector<double>>();
  m.cv_mse = j.at("cv_mse").get<std::vector<double>>();
  m.ensemble_cv_mse = j.at("ensemble_cv_mse").get<double>();
  m.folds.k = j.at("folds").get<int>();
  m.centering = parse_centering_mode(j.at("f_mode").get<std::string>());
  m.covariate_dim = j.at("covariate_dim").get<std::size_t>();
  for (const auto& l : j.at("learners")) m.learners.push_back(learner_from_json(l));
  if (m.learners.size() != m.weights.size() || m.labels.size() != m.weights.size()) {
    throw ValidationError("cate model: learner and weight counts differ");
  }
  return m;
}

CateModel fit_super_learner(const TrialDataset& data, std::span<const LearnerSpec> specs,
                            CenteringMode centering, const FoldAssignment& folds) {
  if (specs.empty()) throw PreconditionError("at least one learner is required");
  check_folds(data, folds);
  for (const auto& s : specs) s.validate();
  const std::size_t n = data.size();
  const std::size_t m = specs.size();
  const Matrix x = covariate_matrix(data);

  // With zero centering the pseudo-outcomes do not depend on the split.
  std::vector<double> shared;
  if (centering == CenteringMode::zero) shared = pseudo_outcomes(data, centering);

  std::vector<FoldColumns> per_fold(static_cast<std::size_t>(folds.k));
  parallel_for(per_fold.size(), [&](std::size_t vi) {
    const int v = static_cast<int>(vi);
    FoldColumns& out = per_fold[vi];
    const auto train = folds.training(v);
    out.rows = folds.validation(v);
    const std::vector<double> ytilde =
        centering == CenteringMode::zero ? shared
                                         : pseudo_outcomes(data, centering, train, &out.warnings);
    out.targets.resize(out.rows.size());
    for (std::size_t r = 0; r < out.rows.size(); ++r) out.targets[r] = ytilde[out.rows[r]];
    out.predictions.assign(m, std::vector<double>(out.rows.size()));
    for (std::size_t l = 0; l < m; ++l) {
      LearnerFit fit = fit_on_rows(specs[l], x, ytilde, train);
      append_warning(&out.warnings, fit.warning, "cate fold " + std::to_string(v + 1) + ": ");
      for (std::size_t r = 0; r < out.rows.size(); ++r) {
        out.predictions[l][r] =
            fit.model->predict(row_of(x, static_cast<Eigen::Index>(out.rows[r])));
      }
    }
  });

  CateModel model;
  model.folds = folds;
  model.centering = centering;
  model.covariate_dim = data.covariate_dim();
  for (const auto& s : specs) model.labels.push_back(s.label);
  finish_stack(per_fold, n, m, model.weights, model.cv_mse, model.ensemble_cv_mse,
               model.warnings);

  const std::vector<double> ytilde =
      centering == CenteringMode::zero ? shared
                                       : pseudo_outcomes(data, centering, {}, &model.warnings);
  const auto rows = all_rows(n);
  for (std::size_t l = 0; l < m; ++l) {
    LearnerFit fit = fit_on_rows(specs[l], x, ytilde, rows);
    append_warning(&model.warnings, fit.warning, "cate: ");
    model.learners.push_back(std::move(fit.model));
  }
  return model;
}

}  // namespace optrule

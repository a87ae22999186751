#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace optrule {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::span<const double> row_of(const Matrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

enum class LearnerKind { constant_mean, linear, knn, tree };

// Candidate regression algorithm. Text forms accepted by parse():
//   constant | linear[:ridge] | knn[:k] | stump[:depth]
struct LearnerSpec {
  LearnerKind kind = LearnerKind::constant_mean;
  // linear: negative selects the default trace-scaled jitter; 0 is exact OLS.
  double ridge = -1.0;
  // knn: 0 selects ceil(sqrt(n_train)).
  std::size_t k = 0;
  // tree: depth in 1..4.
  int depth = 1;
  std::size_t min_leaf = 5;
  std::string label;

  static LearnerSpec constant();
  static LearnerSpec linear(double ridge = -1.0);
  static LearnerSpec knn(std::size_t k = 0);
  static LearnerSpec stump(int depth = 1);
  static LearnerSpec parse(std::string_view text);

  void validate() const;
};

std::vector<LearnerSpec> parse_learner_list(std::string_view text);

class FittedLearner {
 public:
  virtual ~FittedLearner() = default;
  virtual double predict(std::span<const double> x) const = 0;
  virtual std::string_view kind_name() const = 0;
  virtual nlohmann::ordered_json to_json() const = 0;
};

using LearnerPtr = std::shared_ptr<const FittedLearner>;

struct LearnerFit {
  LearnerPtr model;
  // Set when the requested learner could not be fit and a constant mean was
  // substituted.
  std::optional<std::string> warning;
};

// Fits `spec` to rows of `x` and targets `y`. Never throws for degenerate
// designs: those fall back to the constant mean with a warning.
LearnerFit fit_learner(const LearnerSpec& spec, const Matrix& x, std::span<const double> y);

LearnerPtr learner_from_json(const nlohmann::ordered_json& j);

}  // namespace optrule

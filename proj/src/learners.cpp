#include "optrule/learners.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "optrule/error.hpp"

namespace optrule {

using nlohmann::ordered_json;

LearnerSpec LearnerSpec::constant() {
  LearnerSpec s;
  s.kind = LearnerKind::constant_mean;
  s.label = "constant";
  return s;
}

LearnerSpec LearnerSpec::linear(double ridge) {
  LearnerSpec s;
  s.kind = LearnerKind::linear;
  s.ridge = ridge;
  s.label = "linear";
  return s;
}

LearnerSpec LearnerSpec::knn(std::size_t k) {
  LearnerSpec s;
  s.kind = LearnerKind::knn;
  s.k = k;
  s.label = "knn";
  return s;
}

LearnerSpec LearnerSpec::stump(int depth) {
  LearnerSpec s;
  s.kind = LearnerKind::tree;
  s.depth = depth;
  s.label = depth == 1 ? "stump" : "stump:" + std::to_string(depth);
  return s;
}

void LearnerSpec::validate() const {
  if (kind == LearnerKind::linear && !std::isfinite(ridge)) {
    throw ValidationError("linear learner: ridge must be finite");
  }
  if (kind == LearnerKind::tree && (depth < 1 || depth > 4)) {
    throw ValidationError("tree learner: depth must be in 1..4");
  }
  if (kind == LearnerKind::tree && min_leaf == 0) {
    throw ValidationError("tree learner: min_leaf must be positive");
  }
}

namespace {

template <typename T>
T parse_number(std::string_view text, std::string_view what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ValidationError("invalid " + std::string(what) + " '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

LearnerSpec LearnerSpec::parse(std::string_view text) {
  const std::size_t colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  const std::optional<std::string_view> arg =
      colon == std::string_view::npos ? std::nullopt
                                      : std::optional<std::string_view>(text.substr(colon + 1));
  LearnerSpec spec;
  if (name == "constant" && !arg) {
    spec = constant();
  } else if (name == "linear") {
    spec = linear(arg ? parse_number<double>(*arg, "ridge") : -1.0);
    if (arg && spec.ridge < 0.0) throw ValidationError("ridge must be nonnegative");
  } else if (name == "knn") {
    spec = knn(arg ? parse_number<std::size_t>(*arg, "k") : 0);
    if (arg && spec.k == 0) throw ValidationError("knn: k must be positive");
  } else if (name == "stump") {
    spec = stump(arg ? parse_number<int>(*arg, "depth") : 1);
  } else {
    throw ValidationError("unknown learner '" + std::string(text) + "'");
  }
  spec.label = std::string(text);
  spec.validate();
  return spec;
}

std::vector<LearnerSpec> parse_learner_list(std::string_view text) {
  std::vector<LearnerSpec> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t comma = text.find(',', start);
    if (comma == std::string_view::npos) comma = text.size();
    const std::string_view item = text.substr(start, comma - start);
    if (item.empty()) throw ValidationError("empty entry in learner list");
    out.push_back(LearnerSpec::parse(item));
    start = comma + 1;
  }
  if (out.empty()) throw ValidationError("learner list must be nonempty");
  return out;
}

// ---------------------------------------------------------------------------

namespace {

class ConstantModel final : public FittedLearner {
 public:
  explicit ConstantModel(double value) : value_(value) {}
  double predict(std::span<const double>) const override { return value_; }
  std::string_view kind_name() const override { return "constant"; }
  ordered_json to_json() const override {
    return ordered_json{{"kind", "constant"}, {"value", value_}};
  }

 private:
  double value_;
};

class LinearModel final : public FittedLearner {
 public:
  LinearModel(double intercept, std::vector<double> coef)
      : intercept_(intercept), coef_(std::move(coef)) {}
  double predict(std::span<const double> x) const override {
    double v = intercept_;
    for (std::size_t j = 0; j < coef_.size(); ++j) v += coef_[j] * x[j];
    return v;
  }
  std::string_view kind_name() const override { return "linear"; }
  ordered_json to_json() const override {
    return ordered_json{{"kind", "linear"}, {"intercept", intercept_}, {"coef", coef_}};
  }

 private:
  double intercept_;
  std::vector<double> coef_;
};

class KnnModel final : public FittedLearner {
 public:
  KnnModel(Matrix x, std::vector<double> y, std::vector<double> scale, std::size_t k)
      : x_(std::move(x)), y_(std::move(y)), scale_(std::move(scale)), k_(k) {}

  double predict(std::span<const double> q) const override {
    const Eigen::Index n = x_.rows();
    const Eigen::Index p = x_.cols();
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double* row = x_.data() + i * p;
      double d = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        const double diff = (row[j] - q[j]) / scale_[j];
        d += diff * diff;
      }
      dist[i] = {d, i};
    }
    const auto kth = dist.begin() + static_cast<std::ptrdiff_t>(k_ - 1);
    std::nth_element(dist.begin(), kth, dist.end());
    double sum = 0.0;
    for (auto it = dist.begin(); it <= kth; ++it) sum += y_[it->second];
    return sum / static_cast<double>(k_);
  }
  std::string_view kind_name() const override { return "knn"; }
  ordered_json to_json() const override {
    std::vector<double> flat(x_.data(), x_.data() + x_.size());
    return ordered_json{{"kind", "knn"}, {"k", k_}, {"dim", x_.cols()},
                        {"scale", scale_}, {"x", flat}, {"y", y_}};
  }

 private:
  Matrix x_;
  std::vector<double> y_;
  std::vector<double> scale_;
  std::size_t k_;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;
  int left = -1;
  int right = -1;
};

class TreeModel final : public FittedLearner {
 public:
  explicit TreeModel(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}
  double predict(std::span<const double> x) const override {
    int at = 0;
    while (nodes_[at].feature >= 0) {
      const TreeNode& node = nodes_[at];
      at = x[node.feature] <= node.threshold ? node.left : node.right;
    }
    return nodes_[at].value;
  }
  std::string_view kind_name() const override { return "tree"; }
  ordered_json to_json() const override {
    ordered_json nodes = ordered_json::array();
    for (const auto& n : nodes_) {
      nodes.push_back(ordered_json{{"feature", n.feature}, {"threshold", n.threshold},
                                   {"value", n.value}, {"left", n.left},
                                   {"right", n.right}});
    }
    return ordered_json{{"kind", "tree"}, {"nodes", nodes}};
  }

 private:
  std::vector<TreeNode> nodes_;
};

double mean_of(std::span<const double> y) {
  return std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
}

LearnerFit fallback(std::span<const double> y, const std::string& why) {
  return {std::make_shared<ConstantModel>(mean_of(y)), why + "; using constant mean"};
}

LearnerFit fit_linear(const LearnerSpec& spec, const Matrix& x, std::span<const double> y) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (p == 0) return {std::make_shared<ConstantModel>(mean_of(y)), std::nullopt};
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const double y_mean = yv.mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  Eigen::MatrixXd gram = xc.transpose() * xc;
  const double ridge = spec.ridge < 0.0 ? 1e-8 * gram.trace() / static_cast<double>(p)
                                        : spec.ridge;
  gram.diagonal().array() += ridge;
  const Eigen::VectorXd rhs = xc.transpose() * (yv.array() - y_mean).matrix();

  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const Eigen::VectorXd d = ldlt.vectorD();
  const double scale = std::max(1.0, gram.diagonal().cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-12 * scale) {
    return fallback(y, spec.label + ": singular design");
  }
  const Eigen::VectorXd beta = ldlt.solve(rhs);
  if (!beta.allFinite()) return fallback(y, spec.label + ": non-finite coefficients");
  const double intercept = y_mean - x_mean.dot(beta);
  return {std::make_shared<LinearModel>(
              intercept, std::vector<double>(beta.data(), beta.data() + p)),
          std::nullopt};
}

LearnerFit fit_knn(const LearnerSpec& spec, const Matrix& x, std::span<const double> y) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  std::size_t k = spec.k;
  if (k == 0) k = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  std::optional<std::string> warning;
  if (k > n) {
    warning = spec.label + ": k = " + std::to_string(k) + " exceeds n = " +
              std::to_string(n) + "; using k = n";
    k = n;
  }
  std::vector<double> scale(static_cast<std::size_t>(x.cols()), 1.0);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mu = x.col(j).mean();
    const double var = (x.col(j).array() - mu).square().mean();
    if (var > 0.0) scale[j] = std::sqrt(var);
  }
  return {std::make_shared<KnnModel>(x, std::vector<double>(y.begin(), y.end()),
                                     std::move(scale), k),
          warning};
}

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, std::span<const double> y, int max_depth, std::size_t min_leaf)
      : x_(x), y_(y), max_depth_(max_depth), min_leaf_(min_leaf) {}

  std::vector<TreeNode> build() {
    std::vector<std::size_t> idx(static_cast<std::size_t>(x_.rows()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    grow(std::move(idx), 0);
    return std::move(nodes_);
  }

 private:
  int grow(std::vector<std::size_t> idx, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double sum = 0.0;
    for (std::size_t i : idx) sum += y_[i];
    const double n = static_cast<double>(idx.size());
    nodes_[id].value = sum / n;
    if (depth >= max_depth_ || idx.size() < 2 * min_leaf_) return id;

    const double base = sum * sum / n;
    double best_gain = 1e-12 * std::max(1.0, std::abs(base));
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> order = idx;
    for (Eigen::Index f = 0; f < x_.cols(); ++f) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = x_(a, f), vb = x_(b, f);
        return va != vb ? va < vb : a < b;
      });
      double left_sum = 0.0;
      for (std::size_t j = 0; j + 1 < order.size(); ++j) {
        left_sum += y_[order[j]];
        const std::size_t n_left = j + 1;
        const std::size_t n_right = order.size() - n_left;
        if (n_left < min_leaf_ || n_right < min_leaf_) continue;
        const double lo = x_(order[j], f), hi = x_(order[j + 1], f);
        if (!(lo < hi)) continue;
        const double right_sum = sum - left_sum;
        // Reduction in squared error relative to the parent mean.
        const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                            right_sum * right_sum / static_cast<double>(n_right) - base;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (lo + hi);
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (std::size_t i : idx) {
      (x_(i, best_feature) <= best_threshold ? left : right).push_back(i);
    }
    nodes_[id].feature = best_feature;
    nodes_[id].threshold = best_threshold;
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  const Matrix& x_;
  std::span<const double> y_;
  int max_depth_;
  std::size_t min_leaf_;
  std::vector<TreeNode> nodes_;
};

}  // namespace

LearnerFit fit_learner(const LearnerSpec& spec, const Matrix& x, std::span<const double> y) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw PreconditionError("fit_learner: row count mismatch");
  }
  if (y.empty()) throw PreconditionError("fit_learner: no observations");
  switch (spec.kind) {
    case LearnerKind::constant_mean:
      return {std::make_shared<ConstantModel>(mean_of(y)), std::nullopt};
    case LearnerKind::linear:
      return fit_linear(spec, x, y);
    case LearnerKind::knn:
      return fit_knn(spec, x, y);
    case LearnerKind::tree:
      return {std::make_shared<TreeModel>(
                  TreeBuilder(x, y, spec.depth, spec.min_leaf).build()),
              std::nullopt};
  }
  throw PreconditionError("unknown learner kind");
}

LearnerPtr learner_from_json(const ordered_json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "constant") return std::make_shared<ConstantModel>(j.at("value").get<double>());
  if (kind == "linear") {
    return std::make_shared<LinearModel>(j.at("intercept").get<double>(),
                                         j.at("coef").get<std::vector<double>>());
  }
  if (kind == "knn") {
    const auto flat = j.at("x").get<std::vector<double>>();
    const auto dim = j.at("dim").get<Eigen::Index>();
    const auto y = j.at("y").get<std::vector<double>>();
    if (dim <= 0 || flat.size() != y.size() * static_cast<std::size_t>(dim)) {
      throw ValidationError("knn model: inconsistent training matrix");
    }
    Matrix x = Eigen::Map<const Matrix>(flat.data(), static_cast<Eigen::Index>(y.size()), dim);
    return std::make_shared<KnnModel>(std::move(x), y, j.at("scale").get<std::vector<double>>(),
                                      j.at("k").get<std::size_t>());
  }
  if (kind == "tree") {
    std::vector<TreeNode> nodes;
    for (const auto& n : j.at("nodes")) {
      nodes.push_back(TreeNode{n.at("feature").get<int>(), n.at("threshold").get<double>(),
                               n.at("value").get<double>(), n.at("left").get<int>(),
                               n.at("right").get<int>()});
    }
    if (nodes.empty()) throw ValidationError("tree model: no nodes");
    return std::make_shared<TreeModel>(std::move(nodes));
  }
  throw ValidationError("unknown learner kind '" + kind + "'");
}

}  // namespace optrule

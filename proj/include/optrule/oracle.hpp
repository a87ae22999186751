#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "optrule/data.hpp"

namespace optrule {

// Split of a population into the treated set T and its complement S.
class Partition {
 public:
  Partition() = default;
  explicit Partition(std::vector<bool> treated) : treated_(std::move(treated)) {}
  static Partition from_indices(std::size_t n, std::span<const std::size_t> treated);
  static Partition from_mask(std::size_t n, std::uint64_t mask);

  std::size_t size() const { return treated_.size(); }
  bool treats(std::size_t i) const { return treated_[i]; }
  std::size_t treated_count() const;
  std::vector<std::size_t> treated_indices() const;
  const std::vector<bool>& mask() const { return treated_; }

  friend bool operator==(const Partition&, const Partition&) = default;

 private:
  std::vector<bool> treated_;
};

enum class OracleObjective {
  constrained_value,
  unconstrained_value,
  cost_value,
  heterogeneity
};

std::string_view to_string(OracleObjective objective);

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

// `threshold` is kappa (or k for the cost context): T = {effect > threshold}
// up to index-ordered promotion of units tied at the threshold. -inf means
// everyone is treated.
struct OracleSolution {
  Partition partition;
  double threshold = 0.0;
  double objective_value = 0.0;
  OracleObjective objective = OracleObjective::unconstrained_value;
  bool degenerate = false;
};

// Mass-weighted mean outcome when T is treated and S is not.
double policy_value(const PotentialPopulation& pop, const Partition& part);

// q E[Y1 | T] + (1 - q) E[Y0 | S]; requires mass(T)/mass(Omega) = q.
double constrained_value(const PotentialPopulation& pop, const Partition& part, double q);

// q E[Y1] + (1 - q) E[Y0].
double random_allocation_value(const PotentialPopulation& pop, double q);

// E[V | T] - E[V | S] with V = y1 - y0; both sides must be nonempty.
double heterogeneity_objective(const PotentialPopulation& pop, const Partition& part);

// Unit indices sorted by descending score, ties by ascending index.
std::vector<std::size_t> descending_order(std::span<const double> scores);

OracleSolution solve_constrained(const PotentialPopulation& pop, double q);
OracleSolution solve_unconstrained(const PotentialPopulation& pop);
// `budget` bounds sum over T of mass * cost.
OracleSolution solve_cost_constrained(const PotentialPopulation& pop,
                                      std::span<const double> costs, double budget);
OracleSolution solve_heterogeneity(const PotentialPopulation& pop);

// ---------------------------------------------------------------------------
// Exhaustive enumeration, capped at kMaxEnumerationUnits units.

inline constexpr std::size_t kMaxEnumerationUnits = 20;

void for_each_partition(std::size_t n, const std::function<void(const Partition&)>& visit);
void for_each_partition_of_size(std::size_t n, std::size_t m,
                                const std::function<void(const Partition&)>& visit);

// ---------------------------------------------------------------------------
// Continuous heterogeneity threshold from a tabulated effect density.

// Piecewise-linear density on an increasing grid.
class TabulatedDensity {
 public:
  TabulatedDensity(std::vector<double> grid, std::vector<double> density);

  const std::vector<double>& grid() const { return grid_; }
  const std::vector<double>& density() const { return density_; }
  double spacing() const;
  // P(V <= x), integral of v p(v) over v <= x.
  double cdf(double x) const;
  double partial_first_moment(double x) const;
  double mass() const { return mass_; }
  double first_moment() const { return first_moment_; }

 private:
  std::vector<double> grid_;
  std::vector<double> density_;
  double mass_ = 0.0;
  double first_moment_ = 0.0;
};

inline constexpr std::size_t kMinDensityGridPoints = 16;

// P(V<=k)^2 {-k P(V>k) + int_k^inf v p} + P(V>k)^2 {-k P(V<=k) + int_-inf^k v p}
double kappa_stationarity_residual(double kappa, const TabulatedDensity& density);

// Roots of the residual bracketed by sign changes between consecutive
// interior grid points, refined by bisection to `tol`. Empty when no sign
// change exists.
std::vector<double> bracket_stationarity_roots(const TabulatedDensity& density,
                                               double tol = 1e-10);

// E[V | V > k] - E[V | V <= k] under the density.
double density_heterogeneity(double kappa, const TabulatedDensity& density);

}  // namespace optrule

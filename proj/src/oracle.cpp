#include "optrule/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "optrule/error.hpp"

namespace optrule {

Partition Partition::from_indices(std::size_t n, std::span<const std::size_t> treated) {
  std::vector<bool> mask(n, false);
  for (std::size_t i : treated) {
    if (i >= n) throw PreconditionError("partition index out of range");
    mask[i] = true;
  }
  return Partition(std::move(mask));
}

Partition Partition::from_mask(std::size_t n, std::uint64_t bits) {
  std::vector<bool> mask(n, false);
  for (std::size_t i = 0; i < n; ++i) mask[i] = ((bits >> i) & 1U) != 0;
  return Partition(std::move(mask));
}

std::size_t Partition::treated_count() const {
  return static_cast<std::size_t>(std::count(treated_.begin(), treated_.end(), true));
}

std::vector<std::size_t> Partition::treated_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < treated_.size(); ++i) {
    if (treated_[i]) out.push_back(i);
  }
  return out;
}

std::string_view to_string(OracleObjective objective) {
  switch (objective) {
    case OracleObjective::constrained_value: return "constrained_value";
    case OracleObjective::unconstrained_value: return "unconstrained_value";
    case OracleObjective::cost_value: return "cost_value";
    case OracleObjective::heterogeneity: return "heterogeneity";
  }
  return "unknown";
}

namespace {

void check_partition(const PotentialPopulation& pop, const Partition& part) {
  if (part.size() != pop.size()) {
    throw PreconditionError("partition size does not match population size");
  }
}

double treated_mass(const PotentialPopulation& pop, const Partition& part) {
  double m = 0.0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (part.treats(i)) m += pop[i].mass;
  }
  return m;
}

}  // namespace

double policy_value(const PotentialPopulation& pop, const Partition& part) {
  check_partition(pop, part);
  double total = 0.0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const PotentialUnit& u = pop[i];
    total += u.mass * (part.treats(i) ? u.y1 : u.y0);
  }
  return total / pop.total_mass();
}

double constrained_value(const PotentialPopulation& pop, const Partition& part, double q) {
  check_partition(pop, part);
  const double share = treated_mass(pop, part) / pop.total_mass();
  if (!(std::abs(share - q) <= 1e-12)) {
    std::ostringstream msg;
    msg << "constrained_value: treated proportion " << share << " differs from q = " << q;
    throw PreconditionError(msg.str());
  }
  return policy_value(pop, part);
}

double random_allocation_value(const PotentialPopulation& pop, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw PreconditionError("q must lie in [0,1]");
  double e1 = 0.0;
  double e0 = 0.0;
  for (const PotentialUnit& u : pop.units()) {
    e1 += u.mass * u.y1;
    e0 += u.mass * u.y0;
  }
  e1 /= pop.total_mass();
  e0 /= pop.total_mass();
  return q * e1 + (1.0 - q) * e0;
}

double heterogeneity_objective(const PotentialPopulation& pop, const Partition& part) {
  check_partition(pop, part);
  double sum_t = 0.0, mass_t = 0.0, sum_s = 0.0, mass_s = 0.0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const PotentialUnit& u = pop[i];
    if (part.treats(i)) {
      sum_t += u.mass * u.effect();
      mass_t += u.mass;
    } else {
      sum_s += u.mass * u.effect();
      mass_s += u.mass;
    }
  }
  if (mass_t == 0.0 || mass_s == 0.0) {
    throw PreconditionError("heterogeneity_objective: both T and S must be nonempty");
  }
  return sum_t / mass_t - sum_s / mass_s;
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return order;
}

namespace {

Partition prefix_partition(std::size_t n, std::span<const std::size_t> order,
                           std::size_t length) {
  std::vector<bool> mask(n, false);
  for (std::size_t j = 0; j < length; ++j) mask[order[j]] = true;
  return Partition(std::move(mask));
}

}  // namespace

OracleSolution solve_constrained(const PotentialPopulation& pop, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw PreconditionError("q must lie in [0,1]");
  const std::size_t n = pop.size();
  const std::vector<double> effects = pop.effects();
  const std::vector<std::size_t> order = descending_order(effects);

  // Cumulative treated share of each prefix of the sorted order.
  std::vector<double> share(n + 1, 0.0);
  double cum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    cum += pop[order[j]].mass;
    share[j + 1] = cum / pop.total_mass();
  }
  share[n] = 1.0;

  std::size_t m = n + 1;
  if (pop.is_unweighted()) {
    const double target = q * static_cast<double>(n);
    const double rounded = std::round(target);
    if (std::abs(target - rounded) <= 1e-9 * std::max(1.0, target)) {
      m = static_cast<std::size_t>(rounded);
    }
  } else {
    for (std::size_t j = 0; j <= n; ++j) {
      if (std::abs(share[j] - q) <= 1e-12) {
        m = j;
        break;
      }
    }
  }
  if (m > n) {
    std::size_t hi = 0;
    while (hi <= n && share[hi] < q) ++hi;
    std::ostringstream msg;
    msg.precision(17);
    msg << "q = " << q << " is not attainable by whole units; nearest attainable "
        << "proportions are " << share[hi == 0 ? 0 : hi - 1] << " and "
        << share[std::min(hi, n)];
    throw PreconditionError(msg.str());
  }

  OracleSolution sol;
  sol.partition = prefix_partition(n, order, m);
  sol.threshold = m < n ? effects[order[m]] : kNegInf;
  sol.objective_value = policy_value(pop, sol.partition);
  sol.objective = OracleObjective::constrained_value;
  return sol;
}

OracleSolution solve_unconstrained(const PotentialPopulation& pop) {
  std::vector<bool> mask(pop.size());
  for (std::size_t i = 0; i < pop.size(); ++i) mask[i] = pop[i].effect() > 0.0;
  OracleSolution sol;
  sol.partition = Partition(std::move(mask));
  sol.threshold = 0.0;
  sol.objective_value = policy_value(pop, sol.partition);
  sol.objective = OracleObjective::unconstrained_value;
  return sol;
}

OracleSolution solve_cost_constrained(const PotentialPopulation& pop,
                                      std::span<const double> costs, double budget) {
  const std::size_t n = pop.size();
  if (costs.size() != n) throw PreconditionError("one cost per unit required");
  if (!(std::isfinite(budget) && budget > 0.0)) {
    throw PreconditionError("budget must be positive");
  }
  double total_cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(std::isfinite(costs[i]) && costs[i] > 0.0)) {
      throw PreconditionError("costs must be positive");
    }
    total_cost += pop[i].mass * costs[i];
  }
  const double slack = 1e-12 * std::max(1.0, budget);
  if (total_cost <= budget + slack) {
    OracleSolution sol = solve_unconstrained(pop);
    sol.objective = OracleObjective::cost_value;
    return sol;
  }

  std::vector<double> ratio(n);
  for (std::size_t i = 0; i < n; ++i) ratio[i] = pop[i].effect() / costs[i];
  const std::vector<std::size_t> order = descending_order(ratio);

  // Scan prefixes of the ratio order; keep the best feasible one, preferring
  // the shorter prefix on equal value.
  double best_gain = 0.0;
  std::size_t best_len = 0;
  double gain = 0.0;
  double spent = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t i = order[j];
    spent += pop[i].mass * costs[i];
    if (spent > budget + slack) break;
    gain += pop[i].mass * pop[i].effect();
    if (gain > best_gain) {
      best_gain = gain;
      best_len = j + 1;
    }
  }
  OracleSolution sol;
  sol.partition = prefix_partition(n, order, best_len);
  sol.threshold = best_len < n ? ratio[order[best_len]] : kNegInf;
  sol.objective_value = policy_value(pop, sol.partition);
  sol.objective = OracleObjective::cost_value;
  return sol;
}

OracleSolution solve_heterogeneity(const PotentialPopulation& pop) {
  const std::size_t n = pop.size();
  if (n < 2) throw PreconditionError("heterogeneity needs at least two units");
  const std::vector<double> effects = pop.effects();
  const std::vector<std::size_t> order = descending_order(effects);

  double total_sum = 0.0;
  for (const PotentialUnit& u : pop.units()) total_sum += u.mass * u.effect();

  bool found = false;
  double best = 0.0;
  std::size_t best_len = 0;
  double sum_t = 0.0, mass_t = 0.0;
  for (std::size_t j = 1; j < n; ++j) {
    const PotentialUnit& u = pop[order[j - 1]];
    sum_t += u.mass * u.effect();
    mass_t += u.mass;
    // Only splits between distinct effects are threshold rules.
    if (!(effects[order[j - 1]] > effects[order[j]])) continue;
    const double mass_s = pop.total_mass() - mass_t;
    const double h = sum_t / mass_t - (total_sum - sum_t) / mass_s;
    if (!found || h > best) {
      found = true;
      best = h;
      best_len = j;
    }
  }

  OracleSolution sol;
  sol.objective = OracleObjective::heterogeneity;
  if (!found) {
    // All effects equal: any split has zero heterogeneity.
    std::vector<bool> mask(n, false);
    mask[n - 1] = true;
    sol.partition = Partition(std::move(mask));
    sol.threshold = effects.front();
    sol.objective_value = 0.0;
    sol.degenerate = true;
    return sol;
  }
  sol.partition = prefix_partition(n, order, best_len);
  sol.threshold = effects[order[best_len]];
  sol.objective_value = heterogeneity_objective(pop, sol.partition);
  return sol;
}

void for_each_partition(std::size_t n, const std::function<void(const Partition&)>& visit) {
  if (n > kMaxEnumerationUnits) {
    throw PreconditionError("enumeration is capped at " +
                            std::to_string(kMaxEnumerationUnits) + " units");
  }
  const std::uint64_t count = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < count; ++mask) visit(Partition::from_mask(n, mask));
}

void for_each_partition_of_size(std::size_t n, std::size_t m,
                                const std::function<void(const Partition&)>& visit) {
  if (n > kMaxEnumerationUnits) {
    throw PreconditionError("enumeration is capped at " +
                            std::to_string(kMaxEnumerationUnits) + " units");
  }
  if (m > n) return;
  if (m == 0) {
    visit(Partition::from_mask(n, 0));
    return;
  }
  const std::uint64_t limit = std::uint64_t{1} << n;
  std::uint64_t mask = (std::uint64_t{1} << m) - 1;
  while (mask < limit) {
    visit(Partition::from_mask(n, mask));
    // Gosper's hack: next integer with the same popcount.
    const std::uint64_t c = mask & (~mask + 1);
    const std::uint64_t r = mask + c;
    mask = (((r ^ mask) >> 2) / c) | r;
  }
}

// ---------------------------------------------------------------------------

TabulatedDensity::TabulatedDensity(std::vector<double> grid, std::vector<double> density)
    : grid_(std::move(grid)), density_(std::move(density)) {
  if (grid_.size() != density_.size()) {
    throw PreconditionError("density grid and values differ in length");
  }
  if (grid_.size() < kMinDensityGridPoints) {
    throw PreconditionError("density grid too coarse: need at least " +
                            std::to_string(kMinDensityGridPoints) + " points");
  }
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    if (!std::isfinite(grid_[i]) || !std::isfinite(density_[i]) || density_[i] < 0.0) {
      throw PreconditionError("density must be finite and nonnegative");
    }
    if (i > 0 && !(grid_[i] > grid_[i - 1])) {
      throw PreconditionError("density grid must be strictly increasing");
    }
  }
  mass_ = cdf(grid_.back());
  first_moment_ = partial_first_moment(grid_.back());
  if (std::abs(mass_ - 1.0) > 1e-6) {
    throw PreconditionError("density integrates to " + std::to_string(mass_) +
                            ", not 1 within 1e-6");
  }
}

double TabulatedDensity::spacing() const {
  return (grid_.back() - grid_.front()) / static_cast<double>(grid_.size() - 1);
}

namespace {

// Exact integrals of the linear interpolant on [a, b] with end values pa, pb.
double segment_mass(double a, double b, double pa, double pb) {
  return 0.5 * (b - a) * (pa + pb);
}

double segment_moment(double a, double b, double pa, double pb) {
  return (b - a) / 6.0 * (a * (2.0 * pa + pb) + b * (pa + 2.0 * pb));
}

}  // namespace

double TabulatedDensity::cdf(double x) const {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < grid_.size(); ++i) {
    const double a = grid_[i];
    const double b = grid_[i + 1];
    if (x <= a) break;
    if (x >= b) {
      total += segment_mass(a, b, density_[i], density_[i + 1]);
    } else {
      const double px = density_[i] + (density_[i + 1] - density_[i]) * (x - a) / (b - a);
      total += segment_mass(a, x, density_[i], px);
      break;
    }
  }
  return total;
}

double TabulatedDensity::partial_first_moment(double x) const {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < grid_.size(); ++i) {
    const double a = grid_[i];
    const double b = grid_[i + 1];
    if (x <= a) break;
    if (x >= b) {
      total += segment_moment(a, b, density_[i], density_[i + 1]);
    } else {
      const double px = density_[i] + (density_[i + 1] - density_[i]) * (x - a) / (b - a);
      total += segment_moment(a, x, density_[i], px);
      break;
    }
  }
  return total;
}

double kappa_stationarity_residual(double kappa, const TabulatedDensity& density) {
  const double below = density.cdf(kappa) / density.mass();
  const double above = 1.0 - below;
  const double moment_below = density.partial_first_moment(kappa) / density.mass();
  const double moment_above = density.first_moment() / density.mass() - moment_below;
  return below * below * (-kappa * above + moment_above) +
         above * above * (-kappa * below + moment_below);
}

std::vector<double> bracket_stationarity_roots(const TabulatedDensity& density, double tol) {
  const auto& grid = density.grid();
  std::vector<double> xs;
  std::vector<double> rs;
  for (double x : grid) {
    const double f = density.cdf(x) / density.mass();
    if (f > 0.0 && f < 1.0) {
      xs.push_back(x);
      rs.push_back(kappa_stationarity_residual(x, density));
    }
  }
  std::vector<double> roots;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (rs[i] == 0.0) {
      roots.push_back(xs[i]);
      continue;
    }
    if (i + 1 < xs.size() && rs[i + 1] != 0.0 && (rs[i] < 0.0) != (rs[i + 1] < 0.0)) {
      double lo = xs[i], hi = xs[i + 1];
      double r_lo = rs[i];
      while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        const double r_mid = kappa_stationarity_residual(mid, density);
        if (r_mid == 0.0) {
          lo = hi = mid;
          break;
        }
        if ((r_mid < 0.0) == (r_lo < 0.0)) {
          lo = mid;
          r_lo = r_mid;
        } else {
          hi = mid;
        }
      }
      roots.push_back(0.5 * (lo + hi));
    }
  }
  return roots;
}

double density_heterogeneity(double kappa, const TabulatedDensity& density) {
  const double below = density.cdf(kappa);
  const double above = density.mass() - below;
  if (below <= 0.0 || above <= 0.0) {
    throw PreconditionError("kappa must split the density into two nonempty parts");
  }
  const double moment_below = density.partial_first_moment(kappa);
  const double moment_above = density.first_moment() - moment_below;
  return moment_above / above - moment_below / below;
}

}  // namespace optrule

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace optrule {

// One trial participant. `propensity` is P(A = a | C = c) for the arm that
// was actually received.
struct TrialRecord {
  std::vector<double> covariates;
  int treatment = 0;
  double outcome = 0.0;
  double propensity = 0.5;
  std::optional<double> cost;

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct Design {
  enum class Kind { randomized, observational };
  Kind kind = Kind::observational;
  // Probability of assignment to treatment; meaningful for randomized only.
  double treat_prob = 0.5;

  static Design randomized(double p) { return {Kind::randomized, p}; }
  static Design observational() { return {Kind::observational, 0.0}; }
  bool is_randomized() const { return kind == Kind::randomized; }
};

// Immutable after construction. The constructor validates every record.
class TrialDataset {
 public:
  TrialDataset(std::vector<TrialRecord> records,
               std::vector<std::string> covariate_names, Design design);

  const std::vector<TrialRecord>& records() const { return records_; }
  const TrialRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  std::size_t covariate_dim() const { return covariate_names_.size(); }
  const std::vector<std::string>& covariate_names() const {
    return covariate_names_;
  }
  const Design& design() const { return design_; }
  bool has_cost() const;

  // Records at `indices`, in that order, with the same names and design.
  TrialDataset subset(std::span<const std::size_t> indices) const;
  // Same records with outcomes replaced.
  TrialDataset with_outcomes(std::span<const double> outcomes) const;

 private:
  std::vector<TrialRecord> records_;
  std::vector<std::string> covariate_names_;
  Design design_;
};

// Both potential outcomes of one unit. The effect y1 - y0 is derived.
struct PotentialUnit {
  std::vector<double> covariates;
  double y0 = 0.0;
  double y1 = 0.0;
  double mass = 1.0;
  std::optional<double> cost;

  double effect() const { return y1 - y0; }
};

class PotentialPopulation {
 public:
  PotentialPopulation(std::vector<PotentialUnit> units,
                      std::vector<std::string> covariate_names = {});

  const std::vector<PotentialUnit>& units() const { return units_; }
  const PotentialUnit& operator[](std::size_t i) const { return units_[i]; }
  std::size_t size() const { return units_.size(); }
  std::size_t covariate_dim() const { return covariate_names_.size(); }
  const std::vector<std::string>& covariate_names() const {
    return covariate_names_;
  }
  double total_mass() const { return total_mass_; }
  // True when every unit carries the same mass.
  bool is_unweighted() const;
  bool has_cost() const;
  std::vector<double> effects() const;

 private:
  std::vector<PotentialUnit> units_;
  std::vector<std::string> covariate_names_;
  double total_mass_ = 0.0;
};

// ---------------------------------------------------------------------------
// Synthetic data-generating processes.
//
// Every DGP draws C_j ~ Uniform(0, 1) independently for j = 1..p and sets
//   y0 = mu0(c) + e,   y1 = y0 + cate(c),   e ~ N(0, noise_sd^2),
// with mu0(c) = 0.5 c_1 + 0.25 * mean(c_2..c_p) (second term absent for p = 1).
// The noise is shared between arms, so y1 - y0 = cate(c) for every unit.
//
//   constant_effect  cate(c) = 0.25                 psi = 0.25
//   linear_cate      cate(c) = c_1 - 0.5            psi = 0.125
//   crossover_cate   cate(c) = 0.5 - 2|c_1 - 0.5|   psi = 0.125
//   null_effect      cate(c) = 0                    psi = 0
//
// psi is E[1{cate(C) > 0} cate(C)], the gain of the unconstrained optimal
// rule over treating nobody.
// ---------------------------------------------------------------------------
enum class DgpName { constant_effect, linear_cate, crossover_cate, null_effect };

std::string_view to_string(DgpName name);
DgpName parse_dgp_name(std::string_view text);

struct DgpSpec {
  DgpName name = DgpName::linear_cate;
  std::size_t n = 1000;
  std::size_t covariate_dim = 1;
  double noise_sd = 0.25;
  std::uint64_t seed = 0;
  double treat_prob = 0.5;

  void validate() const;
};

double true_cate(DgpName name, std::span<const double> covariates);
double true_policy_value(DgpName name);

struct Simulation {
  TrialDataset observed;
  PotentialPopulation truth;
  DgpName dgp;
};

Simulation simulate(const DgpSpec& spec);

// Reveals one potential outcome per unit with A ~ Bernoulli(p).
TrialDataset reveal(const PotentialPopulation& pop, double p,
                    std::uint64_t seed);

// ---------------------------------------------------------------------------
// CSV I/O. Reserved observed-data columns: y, a, p, cost. Reserved
// potential-outcome columns: y0, y1, cate, mass, cost. All other columns are
// covariates in file order.
// ---------------------------------------------------------------------------
struct CsvLoadOptions {
  // When set, the dataset is a randomized trial with this treatment
  // probability. A `p` column, if present, must agree with it.
  std::optional<double> randomized;
};

TrialDataset load_csv(const std::string& path, const CsvLoadOptions& options = {});
TrialDataset parse_csv(std::string_view text, const CsvLoadOptions& options = {});
std::string to_csv(const TrialDataset& data);
void write_csv(const TrialDataset& data, const std::string& path);

PotentialPopulation load_population_csv(const std::string& path);
PotentialPopulation parse_population_csv(std::string_view text);
// Truth-file layout: y0,y1,cate[,mass][,cost],covariates...
std::string to_population_csv(const PotentialPopulation& pop);
void write_population_csv(const PotentialPopulation& pop, const std::string& path);

// Writes `contents` to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::string& path, std::string_view contents);
std::string read_file(const std::string& path);

// Decimal text with 17 significant digits; round-trips every finite double.
std::string format_real(double x);

}  // namespace optrule

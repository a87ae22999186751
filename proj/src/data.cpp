#include "optrule/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <utility>

#include "optrule/error.hpp"
#include "optrule/rng.hpp"

namespace optrule {

namespace {

bool is_interior_probability(double p) {
  return std::isfinite(p) && p > 0.0 && p < 1.0;
}

void validate_record(const TrialRecord& r, std::size_t dim, std::size_t row) {
  const std::string where = "row " + std::to_string(row);
  if (r.covariates.size() != dim) {
    throw ValidationError(where + ": expected " + std::to_string(dim) +
                          " covariates, got " +
                          std::to_string(r.covariates.size()));
  }
  for (double c : r.covariates) {
    if (!std::isfinite(c)) throw ValidationError(where + ": non-finite covariate");
  }
  if (r.treatment != 0 && r.treatment != 1) {
    throw ValidationError(where + ": treatment must be 0 or 1");
  }
  if (!std::isfinite(r.outcome)) throw ValidationError(where + ": non-finite outcome");
  if (!is_interior_probability(r.propensity)) {
    throw ValidationError(where + ": propensity must lie strictly inside (0,1)");
  }
  if (r.cost && !(std::isfinite(*r.cost) && *r.cost > 0.0)) {
    throw ValidationError(where + ": cost must be positive");
  }
}

}  // namespace

TrialDataset::TrialDataset(std::vector<TrialRecord> records,
                           std::vector<std::string> covariate_names,
                           Design design)
    : records_(std::move(records)),
      covariate_names_(std::move(covariate_names)),
      design_(design) {
  if (design_.is_randomized() && !is_interior_probability(design_.treat_prob)) {
    throw ValidationError("randomization probability must lie strictly inside (0,1)");
  }
  bool any_cost = false;
  bool all_cost = true;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const TrialRecord& r = records_[i];
    validate_record(r, covariate_names_.size(), i + 1);
    if (design_.is_randomized()) {
      const double expected =
          r.treatment == 1 ? design_.treat_prob : 1.0 - design_.treat_prob;
      if (std::abs(r.propensity - expected) > 1e-12) {
        throw ValidationError("row " + std::to_string(i + 1) +
                              ": propensity disagrees with the randomization probability");
      }
    }
    any_cost = any_cost || r.cost.has_value();
    all_cost = all_cost && r.cost.has_value();
  }
  if (any_cost && !all_cost) {
    throw ValidationError("cost must be given for every record or for none");
  }
}

bool TrialDataset::has_cost() const {
  return !records_.empty() && records_.front().cost.has_value();
}

TrialDataset TrialDataset::subset(std::span<const std::size_t> indices) const {
  std::vector<TrialRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records_.at(i));
  return TrialDataset(std::move(out), covariate_names_, design_);
}

TrialDataset TrialDataset::with_outcomes(std::span<const double> outcomes) const {
  if (outcomes.size() != records_.size()) {
    throw PreconditionError("with_outcomes: size mismatch");
  }
  std::vector<TrialRecord> out = records_;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].outcome = outcomes[i];
  return TrialDataset(std::move(out), covariate_names_, design_);
}

PotentialPopulation::PotentialPopulation(std::vector<PotentialUnit> units,
                                         std::vector<std::string> covariate_names)
    : units_(std::move(units)), covariate_names_(std::move(covariate_names)) {
  if (units_.empty()) throw ValidationError("population must be nonempty");
  if (covariate_names_.empty() && !units_.front().covariates.empty()) {
    for (std::size_t j = 0; j < units_.front().covariates.size(); ++j) {
      covariate_names_.push_back("c" + std::to_string(j + 1));
    }
  }
  const bool with_cost = units_.front().cost.has_value();
  for (std::size_t i = 0; i < units_.size(); ++i) {
    const PotentialUnit& u = units_[i];
    const std::string where = "unit " + std::to_string(i + 1);
    if (u.covariates.size() != covariate_names_.size()) {
      throw ValidationError(where + ": covariate dimension mismatch");
    }
    if (!std::isfinite(u.y0) || !std::isfinite(u.y1)) {
      throw ValidationError(where + ": non-finite potential outcome");
    }
    if (!(std::isfinite(u.mass) && u.mass > 0.0)) {
      throw ValidationError(where + ": mass must be positive");
    }
    if (u.cost.has_value() != with_cost) {
      throw ValidationError("cost must be given for every unit or for none");
    }
    if (u.cost && !(std::isfinite(*u.cost) && *u.cost > 0.0)) {
      throw ValidationError(where + ": cost must be positive");
    }
    total_mass_ += u.mass;
  }
}

bool PotentialPopulation::is_unweighted() const {
  return std::all_of(units_.begin(), units_.end(), [&](const PotentialUnit& u) {
    return u.mass == units_.front().mass;
  });
}

bool PotentialPopulation::has_cost() const { return units_.front().cost.has_value(); }

std::vector<double> PotentialPopulation::effects() const {
  std::vector<double> out;
  out.reserve(units_.size());
  for (const auto& u : units_) out.push_back(u.effect());
  return out;
}

// ---------------------------------------------------------------------------
// DGPs

std::string_view to_string(DgpName name) {
  switch (name) {
    case DgpName::constant_effect: return "constant_effect";
    case DgpName::linear_cate: return "linear_cate";
    case DgpName::crossover_cate: return "crossover_cate";
    case DgpName::null_effect: return "null_effect";
  }
  return "unknown";
}

DgpName parse_dgp_name(std::string_view text) {
  for (DgpName d : {DgpName::constant_effect, DgpName::linear_cate,
                    DgpName::crossover_cate, DgpName::null_effect}) {
    if (to_string(d) == text) return d;
  }
  throw ValidationError("unknown dgp '" + std::string(text) + "'");
}

void DgpSpec::validate() const {
  if (n == 0) throw ValidationError("dgp: n must be positive");
  if (covariate_dim == 0) throw ValidationError("dgp: covariate_dim must be positive");
  if (!(std::isfinite(noise_sd) && noise_sd >= 0.0)) {
    throw ValidationError("dgp: noise_sd must be a nonnegative real");
  }
  if (!is_interior_probability(treat_prob)) {
    throw ValidationError("dgp: treatment probability must lie strictly inside (0,1)");
  }
}

double true_cate(DgpName name, std::span<const double> c) {
  const double c1 = c.empty() ? 0.0 : c[0];
  switch (name) {
    case DgpName::constant_effect: return 0.25;
    case DgpName::linear_cate: return c1 - 0.5;
    case DgpName::crossover_cate: return 0.5 - 2.0 * std::abs(c1 - 0.5);
    case DgpName::null_effect: return 0.0;
  }
  return 0.0;
}

double true_policy_value(DgpName name) {
  switch (name) {
    case DgpName::constant_effect: return 0.25;
    case DgpName::linear_cate: return 0.125;
    case DgpName::crossover_cate: return 0.125;
    case DgpName::null_effect: return 0.0;
  }
  return 0.0;
}

namespace {

double baseline_mean(std::span<const double> c) {
  double mu = 0.5 * c[0];
  if (c.size() > 1) {
    double rest = 0.0;
    for (std::size_t j = 1; j < c.size(); ++j) rest += c[j];
    mu += 0.25 * rest / static_cast<double>(c.size() - 1);
  }
  return mu;
}

std::vector<std::string> default_names(std::size_t p) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p; ++j) names.push_back("c" + std::to_string(j + 1));
  return names;
}

}  // namespace

Simulation simulate(const DgpSpec& spec) {
  spec.validate();
  CounterRng rng(derive_seed(spec.seed, "simulate"));
  std::vector<PotentialUnit> units;
  units.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    PotentialUnit u;
    u.covariates.resize(spec.covariate_dim);
    for (double& c : u.covariates) c = rng.uniform();
    const double noise = spec.noise_sd > 0.0 ? spec.noise_sd * rng.normal() : 0.0;
    u.y0 = baseline_mean(u.covariates) + noise;
    u.y1 = u.y0 + true_cate(spec.name, u.covariates);
    units.push_back(std::move(u));
  }
  PotentialPopulation truth(std::move(units), default_names(spec.covariate_dim));
  TrialDataset observed =
      reveal(truth, spec.treat_prob, derive_seed(spec.seed, "assignment"));
  return Simulation{std::move(observed), std::move(truth), spec.name};
}

TrialDataset reveal(const PotentialPopulation& pop, double p, std::uint64_t seed) {
  if (!is_interior_probability(p)) {
    throw PreconditionError("reveal: treatment probability must lie strictly inside (0,1)");
  }
  CounterRng rng(seed);
  std::vector<TrialRecord> records;
  records.reserve(pop.size());
  for (const PotentialUnit& u : pop.units()) {
    TrialRecord r;
    r.covariates = u.covariates;
    r.treatment = rng.bernoulli(p) ? 1 : 0;
    r.outcome = r.treatment == 1 ? u.y1 : u.y0;
    r.propensity = r.treatment == 1 ? p : 1.0 - p;
    r.cost = u.cost;
    records.push_back(std::move(r));
  }
  return TrialDataset(std::move(records), pop.covariate_names(), Design::randomized(p));
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string_view>> rows;
};

CsvTable split_csv(std::string_view text) {
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  CsvTable table;
  bool have_header = false;
  std::size_t pos = 0;
  std::size_t row = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty()) {
      if (nl >= text.size()) break;
      continue;
    }
    auto fields = split_fields(line);
    if (!have_header) {
      for (auto f : fields) {
        if (f.empty()) throw ParseError(0, "header: empty column name");
        table.header.emplace_back(f);
      }
      for (std::size_t i = 0; i < table.header.size(); ++i) {
        for (std::size_t j = i + 1; j < table.header.size(); ++j) {
          if (table.header[i] == table.header[j]) {
            throw ParseError(0, "header: duplicate column '" + table.header[i] + "'");
          }
        }
      }
      have_header = true;
    } else {
      ++row;
      if (fields.size() != table.header.size()) {
        throw ParseError(row, "row " + std::to_string(row) + ": expected " +
                                  std::to_string(table.header.size()) +
                                  " fields, got " + std::to_string(fields.size()));
      }
      table.rows.push_back(std::move(fields));
    }
    if (nl >= text.size()) break;
  }
  if (!have_header) throw ParseError(0, "missing header row");
  return table;
}

double parse_real(std::string_view field, std::size_t row, const std::string& column) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (field.empty() || ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw ParseError(row, "row " + std::to_string(row) + ": malformed number '" +
                              std::string(field) + "' in column '" + column + "'");
  }
  return value;
}

std::optional<std::size_t> find_column(const std::vector<std::string>& header,
                                       std::string_view name) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  return std::nullopt;
}

}  // namespace

std::string format_real(double x) {
  if (x == 0.0) return std::signbit(x) ? "-0" : "0";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

TrialDataset parse_csv(std::string_view text, const CsvLoadOptions& options) {
  const CsvTable table = split_csv(text);
  const auto y_col = find_column(table.header, "y");
  const auto a_col = find_column(table.header, "a");
  const auto p_col = find_column(table.header, "p");
  const auto cost_col = find_column(table.header, "cost");
  if (!y_col) throw ParseError(0, "missing required column 'y'");
  if (!a_col) throw ParseError(0, "missing required column 'a'");
  if (!p_col && !options.randomized) {
    throw ValidationError(
        "no 'p' column: supply propensities or a randomization probability");
  }
  if (options.randomized && !is_interior_probability(*options.randomized)) {
    throw ValidationError("randomization probability must lie strictly inside (0,1)");
  }

  std::vector<std::size_t> cov_cols;
  std::vector<std::string> cov_names;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (j == *y_col || j == *a_col || (p_col && j == *p_col) ||
        (cost_col && j == *cost_col)) {
      continue;
    }
    cov_cols.push_back(j);
    cov_names.push_back(table.header[j]);
  }

  std::vector<TrialRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& fields = table.rows[i];
    const std::size_t row = i + 1;
    TrialRecord r;
    r.outcome = parse_real(fields[*y_col], row, "y");
    const std::string_view a_text = fields[*a_col];
    if (a_text == "0") {
      r.treatment = 0;
    } else if (a_text == "1") {
      r.treatment = 1;
    } else {
      // Distinguish numbers outside {0,1} from non-numbers.
      parse_real(a_text, row, "a");
      throw ValidationError("row " + std::to_string(row) +
                            ": treatment 'a' must be 0 or 1, got '" +
                            std::string(a_text) + "'");
    }
    if (p_col) {
      r.propensity = parse_real(fields[*p_col], row, "p");
      if (!is_interior_probability(r.propensity)) {
        throw ValidationError("row " + std::to_string(row) +
                              ": propensity 'p' must lie strictly inside (0,1)");
      }
    } else {
      r.propensity = r.treatment == 1 ? *options.randomized : 1.0 - *options.randomized;
    }
    if (cost_col) {
      const double cost = parse_real(fields[*cost_col], row, "cost");
      if (cost <= 0.0) {
        throw ValidationError("row " + std::to_string(row) + ": cost must be positive");
      }
      r.cost = cost;
    }
    r.covariates.reserve(cov_cols.size());
    for (std::size_t j : cov_cols) {
      r.covariates.push_back(parse_real(fields[j], row, table.header[j]));
    }
    records.push_back(std::move(r));
  }
  const Design design = options.randomized ? Design::randomized(*options.randomized)
                                           : Design::observational();
  return TrialDataset(std::move(records), std::move(cov_names), design);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrialDataset load_csv(const std::string& path, const CsvLoadOptions& options) {
  return parse_csv(read_file(path), options);
}

std::string to_csv(const TrialDataset& data) {
  std::string out = "y,a,p";
  const bool with_cost = data.has_cost();
  if (with_cost) out += ",cost";
  for (const auto& name : data.covariate_names()) out += "," + name;
  out += "\n";
  for (const TrialRecord& r : data.records()) {
    out += format_real(r.outcome);
    out += r.treatment == 1 ? ",1," : ",0,";
    out += format_real(r.propensity);
    if (with_cost) out += "," + format_real(*r.cost);
    for (double c : r.covariates) out += "," + format_real(c);
    out += "\n";
  }
  return out;
}

void write_csv(const TrialDataset& data, const std::string& path) {
  write_file_atomic(path, to_csv(data));
}

PotentialPopulation parse_population_csv(std::string_view text) {
  const CsvTable table = split_csv(text);
  const auto y0_col = find_column(table.header, "y0");
  const auto y1_col = find_column(table.header, "y1");
  const auto cate_col = find_column(table.header, "cate");
  const auto mass_col = find_column(table.header, "mass");
  const auto cost_col = find_column(table.header, "cost");
  if (!y0_col || !y1_col) throw ParseError(0, "missing required columns 'y0' and 'y1'");

  std::vector<std::size_t> cov_cols;
  std::vector<std::string> cov_names;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (j == *y0_col || j == *y1_col || (cate_col && j == *cate_col) ||
        (mass_col && j == *mass_col) || (cost_col && j == *cost_col)) {
      continue;
    }
    cov_cols.push_back(j);
    cov_names.push_back(table.header[j]);
  }
  if (table.rows.empty()) throw ValidationError("population must be nonempty");

  std::vector<PotentialUnit> units;
  units.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& fields = table.rows[i];
    const std::size_t row = i + 1;
    PotentialUnit u;
    u.y0 = parse_real(fields[*y0_col], row, "y0");
    u.y1 = parse_real(fields[*y1_col], row, "y1");
    if (mass_col) {
      u.mass = parse_real(fields[*mass_col], row, "mass");
      if (u.mass <= 0.0) {
        throw ValidationError("row " + std::to_string(row) + ": mass must be positive");
      }
    }
    if (cost_col) {
      u.cost = parse_real(fields[*cost_col], row, "cost");
      if (*u.cost <= 0.0) {
        throw ValidationError("row " + std::to_string(row) + ": cost must be positive");
      }
    }
    for (std::size_t j : cov_cols) {
      u.covariates.push_back(parse_real(fields[j], row, table.header[j]));
    }
    units.push_back(std::move(u));
  }
  return PotentialPopulation(std::move(units), std::move(cov_names));
}

PotentialPopulation load_population_csv(const std::string& path) {
  return parse_population_csv(read_file(path));
}

std::string to_population_csv(const PotentialPopulation& pop) {
  const bool weighted = !pop.is_unweighted() || pop[0].mass != 1.0;
  const bool with_cost = pop.has_cost();
  std::string out = "y0,y1,cate";
  if (weighted) out += ",mass";
  if (with_cost) out += ",cost";
  for (const auto& name : pop.covariate_names()) out += "," + name;
  out += "\n";
  for (const PotentialUnit& u : pop.units()) {
    out += format_real(u.y0) + "," + format_real(u.y1) + "," + format_real(u.effect());
    if (weighted) out += "," + format_real(u.mass);
    if (with_cost) out += "," + format_real(*u.cost);
    for (double c : u.covariates) out += "," + format_real(c);
    out += "\n";
  }
  return out;
}

void write_population_csv(const PotentialPopulation& pop, const std::string& path) {
  write_file_atomic(path, to_population_csv(pop));
}

void write_file_atomic(const std::string& path, std::string_view contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw Error("cannot rename '" + tmp.string() + "' to '" + path + "': " + ec.message());
}

}  // namespace optrule

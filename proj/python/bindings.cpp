#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "optrule/cate.hpp"
#include "optrule/cli.hpp"
#include "optrule/data.hpp"
#include "optrule/error.hpp"
#include "optrule/learners.hpp"
#include "optrule/oracle.hpp"
#include "optrule/rules.hpp"
#include "optrule/tmle.hpp"

namespace py = pybind11;
using namespace optrule;

namespace {

// JSON objects cross the boundary as Python dicts via the json module.
py::object to_python(const nlohmann::ordered_json& j) {
  return py::module_::import("json").attr("loads")(serialize_report(j));
}

py::dict solution_dict(const OracleSolution& sol) {
  py::dict d;
  d["treated"] = sol.partition.treated_indices();
  d["threshold"] = sol.threshold;
  d["objective_value"] = sol.objective_value;
  d["objective"] = std::string(to_string(sol.objective));
  d["degenerate"] = sol.degenerate;
  return d;
}

PotentialPopulation population_from(const std::vector<double>& y0, const std::vector<double>& y1,
                                    std::optional<std::vector<double>> mass) {
  if (y0.size() != y1.size()) throw PreconditionError("y0 and y1 lengths differ");
  if (mass && mass->size() != y0.size()) throw PreconditionError("mass length differs");
  std::vector<PotentialUnit> units;
  for (std::size_t i = 0; i < y0.size(); ++i) {
    units.push_back({{static_cast<double>(i)}, y0[i], y1[i], mass ? (*mass)[i] : 1.0, {}});
  }
  return PotentialPopulation(std::move(units), {"index"});
}

}  // namespace

PYBIND11_MODULE(_optrule, m) {
  m.doc() = "Optimal treatment rules: oracles, CATE super-learner, CV-TMLE";

  auto base = py::register_exception<Error>(m, "OptruleError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<PreconditionError>(m, "PreconditionError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  py::class_<TrialDataset>(m, "TrialDataset")
      .def_property_readonly("size", &TrialDataset::size)
      .def("__len__", &TrialDataset::size)
      .def_property_readonly("covariate_names", &TrialDataset::covariate_names)
      .def_property_readonly("randomized",
                             [](const TrialDataset& d) { return d.design().is_randomized(); })
      .def("outcomes",
           [](const TrialDataset& d) {
             std::vector<double> y;
             for (const auto& r : d.records()) y.push_back(r.outcome);
             return y;
           })
      .def("treatments",
           [](const TrialDataset& d) {
             std::vector<int> a;
             for (const auto& r : d.records()) a.push_back(r.treatment);
             return a;
           })
      .def("covariates",
           [](const TrialDataset& d) {
             std::vector<std::vector<double>> c;
             for (const auto& r : d.records()) c.push_back(r.covariates);
             return c;
           })
      .def("to_csv", [](const TrialDataset& d) { return to_csv(d); });

  py::class_<PotentialPopulation>(m, "PotentialPopulation")
      .def(py::init(&population_from), py::arg("y0"), py::arg("y1"),
           py::arg("mass") = std::nullopt)
      .def_property_readonly("size", &PotentialPopulation::size)
      .def("__len__", &PotentialPopulation::size)
      .def("effects", &PotentialPopulation::effects)
      .def_property_readonly("total_mass", &PotentialPopulation::total_mass)
      .def("to_csv", [](const PotentialPopulation& p) { return to_population_csv(p); });

  m.def(
      "simulate",
      [](const std::string& dgp, std::size_t n, std::size_t dim, double noise_sd,
         double treat_prob, std::uint64_t seed) {
        DgpSpec spec;
        spec.name = parse_dgp_name(dgp);
        spec.n = n;
        spec.covariate_dim = dim;
        spec.noise_sd = noise_sd;
        spec.treat_prob = treat_prob;
        spec.seed = seed;
        Simulation sim = simulate(spec);
        return std::make_pair(std::move(sim.observed), std::move(sim.truth));
      },
      py::arg("dgp") = "linear_cate", py::arg("n") = 1000, py::arg("dim") = 1,
      py::arg("noise_sd") = 0.25, py::arg("treat_prob") = 0.5, py::arg("seed") = 0,
      "Simulate a randomized trial; returns (observed dataset, potential-outcome population).");

  m.def("true_cate", [](const std::string& dgp, const std::vector<double>& c) {
    return true_cate(parse_dgp_name(dgp), c);
  });

  m.def(
      "parse_csv",
      [](const std::string& text, std::optional<double> randomized) {
        CsvLoadOptions opts;
        opts.randomized = randomized;
        return parse_csv(text, opts);
      },
      py::arg("text"), py::arg("randomized") = std::nullopt);
  m.def(
      "load_csv",
      [](const std::string& path, std::optional<double> randomized) {
        CsvLoadOptions opts;
        opts.randomized = randomized;
        return load_csv(path, opts);
      },
      py::arg("path"), py::arg("randomized") = std::nullopt);
  m.def("parse_population_csv", [](const std::string& text) { return parse_population_csv(text); });
  m.def("load_population_csv", &load_population_csv);

  // Oracles
  m.def("solve_constrained",
        [](const PotentialPopulation& p, double q) { return solution_dict(solve_constrained(p, q)); },
        py::arg("population"), py::arg("q"));
  m.def("solve_unconstrained",
        [](const PotentialPopulation& p) { return solution_dict(solve_unconstrained(p)); });
  m.def(
      "solve_cost_constrained",
      [](const PotentialPopulation& p, const std::vector<double>& costs, double budget) {
        return solution_dict(solve_cost_constrained(p, costs, budget));
      },
      py::arg("population"), py::arg("costs"), py::arg("budget"));
  m.def("solve_heterogeneity",
        [](const PotentialPopulation& p) { return solution_dict(solve_heterogeneity(p)); });
  m.def("heterogeneity_objective",
        [](const PotentialPopulation& p, const std::vector<std::size_t>& treated) {
          return heterogeneity_objective(p, Partition::from_indices(p.size(), treated));
        });
  m.def("policy_value", [](const PotentialPopulation& p, const std::vector<std::size_t>& treated) {
    return policy_value(p, Partition::from_indices(p.size(), treated));
  });

  // CATE
  m.def(
      "pseudo_outcomes",
      [](const TrialDataset& d, const std::string& f_mode) {
        return pseudo_outcomes(d, parse_centering_mode(f_mode));
      },
      py::arg("data"), py::arg("f_mode") = "zero");

  py::class_<CateModel, std::shared_ptr<CateModel>>(m, "CateModel")
      .def_readonly("labels", &CateModel::labels)
      .def_readonly("weights", &CateModel::weights)
      .def_readonly("cv_mse", &CateModel::cv_mse)
      .def_readonly("ensemble_cv_mse", &CateModel::ensemble_cv_mse)
      .def_readonly("warnings", &CateModel::warnings)
      .def("predict",
           [](const CateModel& model, const std::vector<double>& c) { return model.predict(c); })
      .def("predict_many",
           [](const CateModel& model, const std::vector<std::vector<double>>& rows) {
             std::vector<double> out;
             out.reserve(rows.size());
             for (const auto& c : rows) out.push_back(model.predict(c));
             return out;
           })
      .def("to_dict", [](const CateModel& model) { return to_python(model.to_json()); });

  m.def(
      "fit_super_learner",
      [](const TrialDataset& d, const std::string& learners, const std::string& f_mode, int folds,
         std::uint64_t seed) {
        const auto specs = parse_learner_list(learners);
        return std::make_shared<CateModel>(fit_super_learner(
            d, specs, parse_centering_mode(f_mode), assign_folds(d.size(), folds, seed)));
      },
      py::arg("data"), py::arg("learners") = "constant,linear,knn,stump",
      py::arg("f_mode") = "zero", py::arg("folds") = 10, py::arg("seed") = 0);

  m.def(
      "treated_by_rule",
      [](std::shared_ptr<CateModel> model, const TrialDataset& d, const std::string& context,
         double q) {
        RuleContext ctx;
        ctx.kind = parse_context_kind(context);
        ctx.q = q;
        if (ctx.kind == ContextKind::cost) ctx.delta_const = 0.0;
        const TreatmentRule rule = build_rule(model, d, ctx);
        std::vector<bool> out;
        for (const auto& r : d.records()) out.push_back(rule.treats(r.covariates, r.cost));
        return out;
      },
      py::arg("model"), py::arg("data"), py::arg("context") = "unconstrained",
      py::arg("q") = 0.0);

  // CV-TMLE
  m.def(
      "cv_tmle",
      [](const TrialDataset& d, const std::string& context, double q, const std::string& learners,
         std::optional<std::string> outcome_learners, const std::string& f_mode, int folds,
         std::uint64_t seed, double clamp, std::optional<std::pair<double, double>> bounds,
         bool alt_variance) {
        TmleConfig cfg;
        if (context == "constrained") {
          cfg.context = TmleContext::constrained;
        } else if (context == "unconstrained") {
          cfg.context = TmleContext::unconstrained;
        } else {
          throw PreconditionError("cv_tmle supports the constrained and unconstrained contexts");
        }
        cfg.q = q;
        cfg.cate_learners = parse_learner_list(learners);
        cfg.outcome_learners = parse_learner_list(outcome_learners.value_or(learners));
        cfg.centering = parse_centering_mode(f_mode);
        cfg.folds = folds;
        cfg.seed = seed;
        cfg.clamp = clamp;
        cfg.bounds = bounds;
        cfg.alt_variance = alt_variance;
        TmleReport rep;
        {
          py::gil_scoped_release release;
          rep = cv_tmle(d, cfg);
        }
        py::dict out = to_python(rep.to_json());
        out["warnings"] = rep.warnings;
        return out;
      },
      py::arg("data"), py::arg("context") = "unconstrained", py::arg("q") = 0.5,
      py::arg("learners") = "constant,linear,knn,stump", py::arg("outcome_learners") = std::nullopt,
      py::arg("f_mode") = "zero", py::arg("folds") = 10, py::arg("seed") = 0,
      py::arg("clamp") = 1e-6, py::arg("bounds") = std::nullopt, py::arg("alt_variance") = false);

  // CLI
  m.def(
      "run",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run one CLI command; returns (exit_code, stdout, stderr).");
  m.attr("REPORT_SCHEMA_VERSION") = kReportSchemaVersion;
}

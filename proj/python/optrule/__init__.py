"""Optimal treatment rules for randomized trials.

Thin wrapper over the C++ library: simulation, oracles, the CATE
super-learner, CV-TMLE and the command-line runner.
"""

import json as _json

from ._optrule import (  # noqa: F401
    REPORT_SCHEMA_VERSION,
    CateModel,
    NumericalError,
    OptruleError,
    ParseError,
    PotentialPopulation,
    PreconditionError,
    TrialDataset,
    ValidationError,
    cv_tmle,
    fit_super_learner,
    heterogeneity_objective,
    load_csv,
    load_population_csv,
    parse_csv,
    parse_population_csv,
    policy_value,
    pseudo_outcomes,
    run,
    simulate,
    solve_constrained,
    solve_cost_constrained,
    solve_heterogeneity,
    solve_unconstrained,
    treated_by_rule,
    true_cate,
)

__version__ = "0.1.0"


def run_report(args):
    """Run a CLI command and return its parsed report, or None when the
    command wrote its report elsewhere (or, like simulate, printed nothing).

    Raises OptruleError with the error record's message on failure.
    """
    code, out, err = run(list(args))
    if code != 0:
        record = _json.loads(err)
        raise OptruleError(f"{record['error']}: {record['message']}")
    return _json.loads(out) if out else None

# -*- coding: utf-8 -*-
"""metapop.verify module.

Property suite tying each proven property of the model to a numerical check.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from metapop.chain import (
    chain_rates,
    characteristic_function,
    dominant_eigenvalue_check,
    lambda0,
    m1_distance,
    mean_G,
    r0,
    renewal_identity_oracle,
    stationary_distribution,
)
from metapop.const import CONFIDENCE_SE, Classification
from metapop.exceptions import MetapopError, NoEquilibrium
from metapop.meanfield import (
    IntegrationControls,
    TruncatedState,
    comparison_bound_check,
    convergence_diagnose,
    extinction_target,
    integrate,
    two_truncation_distance,
)
from metapop.model import (
    BUNDLED_MODELS,
    RateModel,
    bundled_model,
    check_h1,
    normalize_rho,
)
from metapop.stochastic import (
    compare_with_mean_field,
    coupled_pair_run,
    r0_monte_carlo,
    second_difference_experiment,
    simulate_metapopulation,
)
from metapop.threshold import (
    no_equilibrium_when_h2_fails,
    s_tilde,
    solve_fixed_point,
    with_parameter,
)

_LOGGER = logging.getLogger(__name__)

# Truncation of the mean-field runs of the suite.
_ODE_N = 80


@dataclass
class VerifyContext:
    """Models and effort of a suite run."""

    quick: bool = False
    seed: int = 0
    models: Dict[str, RateModel] = field(default_factory=dict)

    def model(self, name: str) -> RateModel:
        """Return a model by name, bundled unless overridden."""
        if name not in self.models:
            self.models[name] = bundled_model(name)
        return self.models[name]

    def pick(self, full: Any, quick: Any) -> Any:
        """Return the full or the quick setting."""
        return quick if self.quick else full


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one check."""

    name: str
    criterion: int
    passed: bool
    details: Mapping[str, Any]
    seconds: float


Check = Callable[[VerifyContext], Dict[str, Any]]


def _sign_changes(values: np.ndarray) -> int:
    signs = np.sign(values)
    signs = signs[signs != 0]
    return int(np.count_nonzero(np.diff(signs)))


def check_hypotheses(context: VerifyContext) -> Dict[str, Any]:
    """Bundled models satisfy or violate (H1)/(H2) as documented."""
    expected = {
        "constant_subcritical": (True, True),
        "constant_linear": (True, True),
        "logistic": (True, True),
        "logistic_mild": (True, True),
        "table_concave": (True, True),
        "ricker": (False, True),
        "h2_violating": (True, False),
    }
    observed = {}
    for name in expected:
        report = check_h1(normalize_rho(context.model(name)))
        observed[name] = (report.h1_holds, report.h2_holds)
    mismatched = [name for name in expected if observed[name] != expected[name]]
    return {"passed": not mismatched, "mismatched": mismatched}


def check_closed_form_mean(context: VerifyContext) -> Dict[str, Any]:
    """G(s) = s / 2 for constant rates b = 1, d = 2, gamma = 1, nu = 0."""
    model = context.model("constant_subcritical")
    errors = {}
    for s in (0.5, 1.0, 3.0, 10.0):
        solution = stationary_distribution(chain_rates(model, s), tol=1e-12)
        errors[s] = abs(solution.mean - s / 2.0)
    worst = max(errors.values())
    return {"passed": worst < 1e-8, "max_error": worst}


def check_closed_form_r0(context: VerifyContext) -> Dict[str, Any]:
    """R0 = 2/3 for constant rates b = d = 1, gamma = 1, nu = 0.5."""
    model = context.model("constant_linear")
    value = r0(model)
    estimate = r0_monte_carlo(model, context.pick(100000, 20000), context.seed)
    exact = 2.0 / 3.0
    return {
        "passed": abs(value - exact) < 1e-8
        and abs(estimate.mean - exact) <= CONFIDENCE_SE * estimate.se,
        "r0": value,
        "monte_carlo": estimate.mean,
        "monte_carlo_se": estimate.se,
    }


def _nu_grid(context: VerifyContext) -> np.ndarray:
    return np.linspace(0.1, 3.0, context.pick(20, 6))


def check_threshold_dichotomy(context: VerifyContext) -> Dict[str, Any]:
    """s* > 0 exactly when R0 > 1 + 1e-6 and G(s) - s changes sign at most once."""
    base = context.model("logistic")
    failures = []
    for nu in _nu_grid(context):
        model = with_parameter(base, "nu", float(nu))
        report = solve_fixed_point(model)
        persistent = report.classification == Classification.PERSISTENT
        if persistent != (report.s_star > 0) or persistent != (report.r0 > 1.0 + 1e-6):
            failures.append(float(nu))
            continue
        bound = report.s_tilde or 1.0
        grid = np.linspace(0.0, 2.0 * bound, context.pick(21, 9))[1:]
        if persistent:
            grid = np.unique(np.append(grid, 0.5 * report.s_star))
        changes = _sign_changes(np.array([mean_G(model, s) - s for s in grid]))
        if changes != (1 if persistent else 0):
            failures.append(float(nu))
    return {"passed": not failures, "failed_nu": failures}


def check_concavity(context: VerifyContext) -> Dict[str, Any]:
    """G is increasing and strictly concave on a grid of [0, 2 s_tilde]."""
    worst: Dict[str, List[float]] = {}
    passed = True
    for name in ("logistic", "logistic_mild", "table_concave"):
        model = context.model(name)
        bound = s_tilde(model) or 1.0
        grid = np.linspace(0.0, 2.0 * bound, context.pick(30, 10) + 1)
        values = np.array([mean_G(model, s) for s in grid])
        first = np.diff(values)
        second = np.diff(values, n=2)
        worst[name] = [float(first.min()), float(second.max())]
        passed = passed and bool(np.all(first > 0)) and bool(np.all(second < 0))
    return {"passed": passed, "min_first_max_second": worst}


def check_spectral(context: VerifyContext) -> Dict[str, Any]:
    """chi(0) = R0, sign(lambda0) = sign(R0 - 1), root agrees with the eigenvalue."""
    base = context.model("logistic")
    value = r0(base)
    chi_gap = abs(characteristic_function(base, 0.0) - value)
    root = lambda0(base)
    eigen_gap = math.inf
    if root is not None:
        eigen_gap = abs(root - dominant_eigenvalue_check(base, 400))

    mismatched = []
    for nu in _nu_grid(context):
        model = with_parameter(base, "nu", float(nu))
        reproduction = r0(model)
        if abs(reproduction - 1.0) < 1e-6:
            continue
        current = lambda0(model)
        if (current is not None and current > 0) != (reproduction > 1.0):
            mismatched.append(float(nu))
    return {
        "passed": chi_gap < 1e-6 and eigen_gap < 1e-5 and not mismatched,
        "chi_gap": chi_gap,
        "eigen_gap": eigen_gap,
        "sign_mismatch_nu": mismatched,
    }


def _starts() -> Dict[str, TruncatedState]:
    return {
        "delta_1": TruncatedState.point_mass(_ODE_N, 1),
        "delta_5": TruncatedState.point_mass(_ODE_N, 5),
        "uniform_10": TruncatedState.uniform(_ODE_N, 10),
    }


def check_convergence(context: VerifyContext) -> Dict[str, Any]:
    """Trajectories converge to the equilibrium picked by R0 and keep their mass."""
    horizon = 300.0
    controls = IntegrationControls(sample_dt=1.0)
    results: Dict[str, Any] = {}
    passed = True
    for name, limit in (("logistic", 1e-3), ("constant_subcritical", 1e-4)):
        model = context.model(name)
        report = solve_fixed_point(model)
        if report.classification == Classification.PERSISTENT:
            target = stationary_distribution(chain_rates(normalize_rho(model), report.s_star))
        else:
            target = extinction_target()
        for label, start in _starts().items():
            trajectory = integrate(model, start, horizon, controls)
            diagnosis = convergence_diagnose(trajectory, target)
            defect = float(trajectory.mass_defect.max())
            results[f"{name}/{label}"] = [diagnosis.final_distance, defect]
            passed = passed and diagnosis.final_distance < limit and defect < 1e-9
    return {"passed": passed, "T": horizon, "distance_and_defect": results}


def check_bounds(context: VerifyContext) -> Dict[str, Any]:
    """Every trajectory stays below its comparison envelope."""
    controls = IntegrationControls(sample_dt=0.5)
    checked = 0
    for name in ("logistic", "logistic_mild", "table_concave", "constant_subcritical"):
        model = context.model(name)
        for start in _starts().values():
            trajectory = integrate(model, start, 100.0, controls)
            comparison_bound_check(model, trajectory)
            checked += 1
    return {"passed": True, "trajectories": checked}


def check_mean_field(context: VerifyContext) -> Dict[str, Any]:
    """Empirical frequencies of n patches follow the mean-field solution."""
    model = context.model("logistic")
    n = context.pick(2000, 500)
    horizon = context.pick(50.0, 20.0)
    seeds = [context.seed + index for index in range(context.pick(3, 1))]
    trajectory = integrate(
        model,
        TruncatedState.point_mass(_ODE_N, 1),
        horizon,
        IntegrationControls(sample_dt=horizon / 10),
    )
    excess = {}
    for seed in seeds:
        run = simulate_metapopulation(model, n, [0, n], horizon, seed, horizon / 10)
        excess[seed] = compare_with_mean_field(run, trajectory).excess
    return {"passed": max(excess.values()) <= 0.0, "n": n, "excess": excess}


def check_coupling(context: VerifyContext) -> Dict[str, Any]:
    """Coupled pairs stay ordered and second differences are negative."""
    model = context.model("logistic")
    report = coupled_pair_run(
        model, 1.0, 5, 2, 4.0, context.seed, reps=context.pick(10000, 2000)
    )
    within_bound = bool(
        np.all(report.prob_differ <= report.prob_bound + CONFIDENCE_SE * report.prob_se + 1e-12)
    )
    rows = second_difference_experiment(
        model,
        1.0,
        range(0, 6),
        (0.5, 1.0, 2.0),
        context.pick(20000, 5000),
        context.seed,
    )
    negative = all(row.negative_at_confidence for row in rows)
    consistent = all(
        abs(row.second_difference - row.exact_second_difference)
        <= CONFIDENCE_SE * row.second_difference_se + 1e-9
        for row in rows
    )
    return {
        "passed": within_bound and negative,
        "events_checked": report.events_checked,
        "probability_within_bound": within_bound,
        "second_differences_negative": negative,
        "negative_at_confidence": sum(row.negative_at_confidence for row in rows),
        "exact_second_differences_negative": all(
            row.exact_second_difference < 0 for row in rows
        ),
        "monte_carlo_consistent": consistent,
        "rows": len(rows),
    }


def check_oracles(context: VerifyContext) -> Dict[str, Any]:
    """The linear solve and the regeneration formula agree; truncation does not matter."""
    worst = 0.0
    for name in BUNDLED_MODELS:
        model = normalize_rho(context.model(name))
        report = check_h1(model)
        if model.nu <= 0 or not report.h2_holds:
            continue
        for s in (0.5, 1.0, 2.0):
            direct = stationary_distribution(chain_rates(model, s), tol=1e-13)
            renewal = renewal_identity_oracle(model, s, tol=1e-13)
            worst = max(worst, m1_distance(direct.pi, renewal.pi))
    truncation_gap = two_truncation_distance(
        context.model("logistic"),
        TruncatedState.point_mass(60, 1),
        20.0,
        IntegrationControls(sample_dt=0.5),
    )
    return {
        "passed": worst < 1e-9 and truncation_gap < 1e-6,
        "max_m1_distance": worst,
        "two_truncation_distance": truncation_gap,
    }


def check_no_equilibrium(context: VerifyContext) -> Dict[str, Any]:
    """A model violating (H2) has G(s) >= s and no threshold report."""
    model = context.model("h2_violating")
    diagnostic = no_equilibrium_when_h2_fails(model)
    try:
        solve_fixed_point(model)
    except NoEquilibrium:
        refused = True
    else:
        refused = False
    return {
        "passed": diagnostic.holds and refused,
        "ratio_bound": diagnostic.ratio_bound,
        "refused": refused,
    }


SUITE: Dict[str, Tuple[int, Check]] = {
    "hypotheses": (0, check_hypotheses),
    "closed_form_mean": (1, check_closed_form_mean),
    "closed_form_r0": (2, check_closed_form_r0),
    "threshold_dichotomy": (3, check_threshold_dichotomy),
    "concavity": (4, check_concavity),
    "spectral": (5, check_spectral),
    "convergence": (6, check_convergence),
    "bounds": (7, check_bounds),
    "mean_field": (8, check_mean_field),
    "coupling": (9, check_coupling),
    "oracles": (10, check_oracles),
    "no_equilibrium": (11, check_no_equilibrium),
}


def run_check(name: str, context: VerifyContext) -> CheckResult:
    """Run one check, errors of this library count as failures."""
    criterion, check = SUITE[name]
    start = time.perf_counter()
    try:
        details = check(context)
    except MetapopError as err:
        _LOGGER.debug("Check %s raised %r", name, err)
        details = {"passed": False, "error": f"{type(err).__name__}: {err.message}"}
    seconds = time.perf_counter() - start
    passed = bool(details.pop("passed"))
    _LOGGER.debug("Check %s: %s in %.1fs", name, passed, seconds)
    return CheckResult(
        name=name, criterion=criterion, passed=passed, details=details, seconds=seconds
    )


def run_suite(
    context: VerifyContext, names: Optional[Sequence[str]] = None
) -> List[CheckResult]:
    """Run the named checks, all of them by default."""
    selected = list(names) if names else list(SUITE)
    unknown = [name for name in selected if name not in SUITE]
    if unknown:
        raise KeyError(f"Unknown checks: {unknown}")
    return [run_check(name, context) for name in selected]

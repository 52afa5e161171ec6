# -*- coding: utf-8 -*-
"""metapop.threshold module."""

import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from metapop.chain import lambda0, mean_G, r0
from metapop.const import (
    CRITICAL_BAND,
    DEFAULT_SCALAR_TOL,
    Classification,
    NoEquilibriumDiagnostic,
    SweepPoint,
    ThresholdReport,
)
from metapop.exceptions import (
    FixedPointFailure,
    InvalidArgument,
    InvalidModel,
    NoBound,
    NoEquilibrium,
    TruncationDiverged,
)
from metapop.model import (
    RateModel,
    check_h1,
    check_h2,
    continuous_extension,
    model_from_mapping,
    normalize_rho,
)

_LOGGER = logging.getLogger(__name__)

_MAX_DOUBLINGS = 60
_MAX_SIZE_DOUBLINGS = 1000
_MAX_HALVINGS = 60
_MAX_DAMPED_ITERATIONS = 100000

# Relative gap of G(s) above the comparison line still accepted as G(s) >= s.
_COMPARISON_SLACK = 1e-6

# With gamma + a <= 0 the comparison mean gamma s / (gamma + a) is infinite, so
# every ratio is a valid lower bound. Any ratio above 1 rules out s = G(s).
_DIVERGENT_COMPARISON_RATIO = 2.0


def s_tilde(model: RateModel, tol: float = DEFAULT_SCALAR_TOL) -> float:
    """Return inf{x > 0 : b(x) < d(x) + nu} on the continuous extension.

    Patch sizes beyond this value shrink on average, so the mean patch size
    is eventually bounded by it.
    """
    model = normalize_rho(model)
    if not check_h2(model).h2_holds:
        raise NoBound(message="(H2) is violated, the mean patch size is unbounded")
    rates = continuous_extension(model)

    def declining(x: float) -> bool:
        return bool(rates.b(x) < rates.d(x) + model.nu)

    # Below 1 the extension is constant, so 0 is returned as soon as x = 1 declines.
    if declining(1.0):
        return 0.0

    low, high = 1.0, 2.0
    for _ in range(_MAX_SIZE_DOUBLINGS):
        if declining(high):
            break
        low, high = high, 2.0 * high
    else:
        raise NoBound(message="Unable to find a declining patch size")

    while high - low > tol * max(1.0, high):
        middle = 0.5 * (low + high)
        if declining(middle):
            high = middle
        else:
            low = middle
    _LOGGER.debug("s_tilde in [%s, %s]", low, high)
    return 0.5 * (low + high)


def _require_hypotheses(model: RateModel) -> None:
    report = check_h1(model)
    if not report.h1_holds:
        raise InvalidModel(
            message=f"(H1) violated at i={report.first_violation_index}, "
            "the fixed point need not be unique"
        )
    if not report.h2_holds:
        raise NoEquilibrium(diagnostic=no_equilibrium_when_h2_fails(model))


def _classify(value: float) -> Classification:
    if abs(value - 1.0) < CRITICAL_BAND:
        return Classification.CRITICAL
    if value < 1.0:
        return Classification.EXTINCT
    return Classification.PERSISTENT


def _lower_bracket(model: RateModel, bound: float) -> Optional[float]:
    s_low = min(0.1, bound / 100.0) if bound > 0 else 0.1
    for _ in range(_MAX_HALVINGS):
        if mean_G(model, s_low) > s_low:
            return s_low
        s_low /= 2.0
    return None


def _upper_bracket(model: RateModel, bound: float) -> float:
    s_high = bound * 1.1 if bound > 0 else 1.0
    for _ in range(_MAX_DOUBLINGS):
        if mean_G(model, s_high) < s_high:
            return s_high
        _LOGGER.debug("G(%s) >= %s, doubling", s_high, s_high)
        s_high *= 2.0
    raise FixedPointFailure(
        message=f"G(s) >= s up to s={s_high}, inconsistent with (H2)"
    )


def solve_fixed_point(model: RateModel, tol: float = DEFAULT_SCALAR_TOL) -> ThresholdReport:
    """Solve s = G(s) and classify persistence."""
    if tol <= 0:
        raise InvalidArgument(message=f"Tolerance must be > 0, got {tol}")
    model = normalize_rho(model)
    _require_hypotheses(model)

    reproduction = r0(model)
    bound = s_tilde(model)
    classification = _classify(reproduction)
    if reproduction <= 1.0 + CRITICAL_BAND:
        if classification == Classification.CRITICAL:
            _LOGGER.warning(
                "R0 = %s is within %s of 1, treated as extinct",
                reproduction,
                CRITICAL_BAND,
            )
        return ThresholdReport(
            r0=reproduction,
            s_star=0.0,
            classification=classification,
            s_tilde=bound,
            iterations=0,
            residual=0.0,
        )

    s_low = _lower_bracket(model, bound)
    if s_low is None:
        _LOGGER.warning(
            "G(s) <= s near 0 although R0 = %s, classified critical", reproduction
        )
        return ThresholdReport(
            r0=reproduction,
            s_star=0.0,
            classification=Classification.CRITICAL,
            s_tilde=bound,
            iterations=_MAX_HALVINGS,
            residual=0.0,
        )
    s_high = _upper_bracket(model, bound)

    s_star, result = brentq(
        lambda s: mean_G(model, s) - s, s_low, s_high, xtol=tol, full_output=True
    )
    residual = abs(mean_G(model, s_star) - s_star)
    _LOGGER.debug(
        "s* = %s after %s iterations, residual %s", s_star, result.iterations, residual
    )
    return ThresholdReport(
        r0=reproduction,
        s_star=float(s_star),
        classification=Classification.PERSISTENT,
        s_tilde=bound,
        iterations=result.iterations,
        residual=residual,
    )


def damped_fixed_point(
    model: RateModel,
    s0: Optional[float] = None,
    tol: float = DEFAULT_SCALAR_TOL,
    max_iterations: int = _MAX_DAMPED_ITERATIONS,
) -> Tuple[float, int]:
    """Iterate s <- (s + G(s)) / 2 until |G(s) - s| < tol.

    Returns the limit and the number of iterations.
    """
    model = normalize_rho(model)
    if s0 is None:
        s0 = s_tilde(model) or 1.0
    s = float(s0)
    for iteration in range(1, max_iterations + 1):
        g_value = mean_G(model, s)
        if abs(g_value - s) < tol:
            return s, iteration
        s = 0.5 * (s + g_value)
    raise FixedPointFailure(message=f"Damped iteration stalled at s={s}")


def _ratio_bound(model: RateModel) -> float:
    # Stationary mean of the linear comparison chain is gamma s / (gamma + a).
    a = check_h2(model).a
    if a <= -model.gamma:
        return _DIVERGENT_COMPARISON_RATIO
    return model.gamma / (model.gamma + a)


def no_equilibrium_when_h2_fails(
    model: RateModel, s_grid: Optional[Sequence[float]] = None
) -> NoEquilibriumDiagnostic:
    """Show G(s) >= s on a grid for a model violating (H2)."""
    model = normalize_rho(model)
    report = check_h2(model)
    if report.h2_holds:
        raise InvalidArgument(message="(H2) holds, use solve_fixed_point")
    if s_grid is None:
        s_grid = np.geomspace(0.01, 10.0, 12)

    ratio = _ratio_bound(model) if model.gamma > 0 else 0.0
    values: List[float] = []
    for s in s_grid:
        try:
            values.append(mean_G(model, float(s)))
        except TruncationDiverged:
            # The stationary mean is infinite.
            values.append(math.inf)
    holds = all(
        g_value >= ratio * s * (1.0 - _COMPARISON_SLACK)
        for s, g_value in zip(s_grid, values)
    )
    return NoEquilibriumDiagnostic(
        s_grid=tuple(float(s) for s in s_grid),
        g_values=tuple(values),
        ratio_bound=ratio,
        margin=report.margin,
        holds=holds,
    )


def _r0_or_inf(model: RateModel) -> float:
    try:
        return r0(model)
    except TruncationDiverged:
        return math.inf


def with_parameter(model: RateModel, name: str, value: float) -> RateModel:
    """Return a copy of the model with one parameter replaced."""
    data: Dict[str, Any] = model.as_dict()
    if name in ("gamma", "nu", "rho", "death_shift"):
        data[name] = value
    elif name in data["params"]:
        data["params"][name] = value
    else:
        raise InvalidArgument(message=f"Unknown parameter {name}")
    return model_from_mapping(data)


def _warn_if_not_monotone(points: Sequence[SweepPoint]) -> None:
    # s* should not grow with the catastrophe rate; not a hard invariant.
    values = [point.s_star for point in points if not math.isnan(point.s_star)]
    for previous, current in zip(values, values[1:]):
        if current > previous + DEFAULT_SCALAR_TOL * max(1.0, previous):
            _LOGGER.warning("s* increases along the nu sweep: %s -> %s", previous, current)
            return


def sweep(
    model: RateModel,
    parameter: str,
    values: Sequence[float],
    tol: float = DEFAULT_SCALAR_TOL,
) -> List[SweepPoint]:
    """Evaluate the threshold quantities along a grid of one parameter."""
    points = []
    for value in values:
        current = normalize_rho(with_parameter(model, parameter, value))
        if not check_h2(current).h2_holds:
            _LOGGER.debug("%s=%s violates (H2)", parameter, value)
            points.append(
                SweepPoint(
                    parameter=parameter,
                    value=float(value),
                    r0=_r0_or_inf(current),
                    lambda0=None,
                    s_star=math.nan,
                    s_tilde=math.inf,
                    classification=None,
                )
            )
            continue
        report = solve_fixed_point(current, tol)
        points.append(
            SweepPoint(
                parameter=parameter,
                value=float(value),
                r0=report.r0,
                lambda0=lambda0(current),
                s_star=report.s_star,
                s_tilde=report.s_tilde,
                classification=report.classification,
            )
        )
    if parameter == "nu":
        _warn_if_not_monotone(points)
    return points

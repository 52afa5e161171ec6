# -*- coding: utf-8 -*-
"""metapop.meanfield module.

Truncated deterministic dynamics of the patch occupancy distribution p(t).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from metapop.chain import m1_distance
from metapop.const import (
    ACCEPTED_MASS_DEFECT,
    BURN_IN_FRACTION,
    CAP_MASS_LIMIT,
    CLAMP_THRESHOLD,
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    MAX_MASS_DEFECT,
    MAX_UNDERSHOOT,
    EquilibriumSolution,
)
from metapop.exceptions import (
    ComparisonViolated,
    IntegrationDiverged,
    InvalidArgument,
    InvalidModel,
    NumericalError,
    StiffnessError,
)
from metapop.model import RateModel, check_h1, continuous_extension, normalize_rho
from metapop.threshold import s_tilde

_LOGGER = logging.getLogger(__name__)

# Tolerances of the one dimensional comparison problems.
_SCALAR_RTOL = 1e-11
_SCALAR_ATOL = 1e-13


@dataclass(frozen=True)
class TruncatedState:
    """Occupancy distribution p_0..p_N at time t."""

    p: np.ndarray
    t: float = 0.0

    @property
    def n(self) -> int:
        """Truncation level N."""
        return self.p.size - 1

    @property
    def mean(self) -> float:
        """Mean patch size s = sum_j j p_j."""
        return float(np.dot(np.arange(self.p.size), self.p))

    @classmethod
    def point_mass(cls, n: int, j: int) -> "TruncatedState":
        """Return delta_j on 0..n."""
        if not 0 <= j <= n:
            raise InvalidArgument(message=f"State {j} outside 0..{n}")
        p = np.zeros(n + 1)
        p[j] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, n: int, high: int) -> "TruncatedState":
        """Return the uniform law on 0..high."""
        if not 0 <= high <= n:
            raise InvalidArgument(message=f"State {high} outside 0..{n}")
        p = np.zeros(n + 1)
        p[: high + 1] = 1.0 / (high + 1)
        return cls(p)

    @classmethod
    def from_distribution(cls, pi: np.ndarray, n: int) -> "TruncatedState":
        """Cut or pad a distribution to 0..n and renormalize."""
        p = np.zeros(n + 1)
        size = min(pi.size, n + 1)
        p[:size] = pi[:size]
        return cls(p / p.sum())


@dataclass(frozen=True)
class IntegrationControls:
    """Tolerances and sampling of the mean-field integrator."""

    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    sample_dt: float = 0.1
    renormalize: bool = False
    cap_mass_limit: float = CAP_MASS_LIMIT


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution of the truncated system."""

    t: np.ndarray
    p: np.ndarray
    s: np.ndarray
    mass_defect: np.ndarray
    clamped_mass: float
    min_entry: float
    controls: IntegrationControls
    steps: int

    @property
    def n(self) -> int:
        """Truncation level N."""
        return self.p.shape[1] - 1

    @property
    def samples(self) -> List[Tuple[float, TruncatedState, float, float]]:
        """Return (t, state, s(t), mass defect) per sample."""
        return [
            (float(t), TruncatedState(p, float(t)), float(s), float(defect))
            for t, p, s, defect in zip(self.t, self.p, self.s, self.mass_defect)
        ]

    def final_state(self) -> TruncatedState:
        """Return the state at the last sample."""
        return TruncatedState(self.p[-1], float(self.t[-1]))


@dataclass(frozen=True)
class ScalarComparison:
    """Solution of x' = x (b(x) - d(x) - gamma - nu) + gamma s."""

    s: float
    x0: float
    t: np.ndarray
    x: np.ndarray
    dense: Any = field(repr=False, compare=False)

    def at(self, time: float) -> float:
        """Evaluate x(t)."""
        return float(self.dense(time)[0])


@dataclass(frozen=True)
class ConvergenceReport:
    """Distance of a trajectory to an equilibrium."""

    distances: np.ndarray
    final_distance: float
    monotone_tail: bool
    burn_in_time: float
    mean_error: float


class _Rates:
    """Transition rates of the truncated system, independent of s."""

    def __init__(self, model: RateModel, n: int) -> None:
        """Initialize."""
        states = np.arange(n + 1)
        positive = np.maximum(states, 1)
        self.gamma = model.gamma
        self.nu = model.nu
        self.states = states.astype(float)
        self.births = np.where(states > 0, states * model.b(positive), 0.0)
        self.deaths = np.where(states > 0, states * model.d(positive), 0.0)
        self.down = self.deaths + self.gamma * self.states

    def derivative(self, p: np.ndarray) -> np.ndarray:
        """Return dp/dt, the immigration level is read off p."""
        # Round-off negatives act as zero so they cannot grow.
        p = np.maximum(p, 0.0)
        s = float(np.dot(self.states, p))
        up = self.births + self.gamma * s
        # No births or immigration out of the cap state.
        up[-1] = 0.0
        dp = -(up + self.down) * p
        dp[1:] += up[:-1] * p[:-1]
        dp[:-1] += self.down[1:] * p[1:]
        dp[1:] -= self.nu * p[1:]
        dp[0] += self.nu * p[1:].sum()
        return dp


def _check_conservation(dp: np.ndarray) -> None:
    total = float(dp.sum())
    if abs(total) > 1e-9 * (1.0 + float(np.abs(dp).sum())):
        raise NumericalError(message=f"Truncated right side does not conserve mass: {total}")


def rhs(model: RateModel, state: TruncatedState) -> np.ndarray:
    """Return dp/dt of the truncated system at a state."""
    model = normalize_rho(model)
    dp = _Rates(model, state.n).derivative(np.asarray(state.p, dtype=float))
    _check_conservation(dp)
    return dp


def _validate_start(p0: TruncatedState) -> None:
    if np.any(p0.p < 0) or abs(float(p0.p.sum()) - 1.0) > 1e-12:
        raise InvalidArgument(message="Initial condition is not a probability vector")


def _sample_times(total: float, stride: float) -> np.ndarray:
    count = int(math.floor(total / stride + 1e-9))
    times = np.arange(count + 1) * stride
    if total - times[-1] > 1e-12 * max(1.0, total):
        times = np.append(times, total)
    return times


def integrate(
    model: RateModel,
    p0: TruncatedState,
    T: float,
    controls: Optional[IntegrationControls] = None,
) -> Trajectory:
    """Integrate the truncated system on [0, T] with an explicit adaptive pair."""
    # pylint: disable=invalid-name,too-many-locals
    controls = controls or IntegrationControls()
    if T <= 0 or controls.sample_dt <= 0:
        raise InvalidArgument(message=f"Need T > 0 and stride > 0, got {T}, {controls.sample_dt}")
    _validate_start(p0)
    model = normalize_rho(model)
    report = check_h1(model)
    if not (report.h1_holds and report.h2_holds):
        raise InvalidModel(message=f"Integration requires (H1) and (H2): {report}")
    if not model.finite_death_limit:
        _LOGGER.warning("d_inf = inf, convergence to equilibrium is not guaranteed")

    rates = _Rates(model, p0.n)
    times = _sample_times(T, controls.sample_dt)
    result = solve_ivp(
        lambda _t, p: rates.derivative(p),
        (0.0, T),
        np.asarray(p0.p, dtype=float),
        method="RK45",
        t_eval=times,
        rtol=controls.rtol,
        atol=controls.atol,
    )
    if result.status == -1:
        raise StiffnessError(
            message=f"Integrator failed: {result.message}; "
            "try a larger truncation or smaller rates"
        )
    _LOGGER.debug(
        "Integrated to T=%s with %s right side evaluations", T, result.nfev
    )

    p = result.y.T.copy()
    min_entry = float(p.min())
    if min_entry < -MAX_UNDERSHOOT:
        raise NumericalError(
            message=f"Solution undershoots zero by {-min_entry:.3g}, tighten rtol/atol"
        )
    if min_entry < -CLAMP_THRESHOLD:
        _LOGGER.warning("Negative entry %s beyond round-off clamped", min_entry)
    negative = p < 0
    clamped_mass = float(-p[negative].sum())
    p[negative] = 0.0

    mass_defect = np.abs(p.sum(axis=1) - 1.0)
    worst = float(mass_defect.max())
    if worst > MAX_MASS_DEFECT:
        raise IntegrationDiverged(message=f"Mass defect {worst:.3g} exceeds {MAX_MASS_DEFECT}")
    if worst > ACCEPTED_MASS_DEFECT:
        _LOGGER.warning("Mass defect %s above %s", worst, ACCEPTED_MASS_DEFECT)
    if controls.renormalize:
        p /= p.sum(axis=1, keepdims=True)

    cap_mass = float(p[:, -1].max())
    if cap_mass > controls.cap_mass_limit:
        raise IntegrationDiverged(
            message=f"Mass {cap_mass:.3g} reached the truncation cap N={p0.n}, increase N"
        )

    return Trajectory(
        t=result.t,
        p=p,
        s=p @ rates.states,
        mass_defect=mass_defect,
        clamped_mass=clamped_mass,
        min_entry=min_entry,
        controls=controls,
        steps=int(result.nfev),
    )


def _slope(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Return d values / dt with fourth order differences on a uniform grid."""
    steps = np.diff(times)
    h = float(steps.mean())
    if values.size < 5 or np.ptp(steps) > 1e-9 * h:
        return np.gradient(values, times, edge_order=2)
    slope = np.empty_like(values)
    slope[2:-2] = (values[:-4] - 8.0 * values[1:-3] + 8.0 * values[3:-1] - values[4:]) / (12.0 * h)
    head = values[:5]
    tail = values[-5:][::-1]
    slope[0] = np.dot([-25.0, 48.0, -36.0, 16.0, -3.0], head) / (12.0 * h)
    slope[1] = np.dot([-3.0, -10.0, 18.0, -6.0, 1.0], head) / (12.0 * h)
    slope[-1] = -np.dot([-25.0, 48.0, -36.0, 16.0, -3.0], tail) / (12.0 * h)
    slope[-2] = -np.dot([-3.0, -10.0, 18.0, -6.0, 1.0], tail) / (12.0 * h)
    return slope


def mean_ode_check(model: RateModel, trajectory: Trajectory) -> float:
    """Return max |ds/dt - (sum j b_j p_j - sum j d_j p_j - nu s)| over samples."""
    model = normalize_rho(model)
    if trajectory.t.size < 3:
        raise InvalidArgument(message="Need at least three samples")
    rates = _Rates(model, trajectory.n)
    slope = _slope(trajectory.s, trajectory.t)
    drift = trajectory.p @ (rates.births - rates.deaths) - model.nu * trajectory.s
    return float(np.max(np.abs(slope - drift)))


def scalar_comparison(
    model: RateModel, s_const: float, x0: float, T: float
) -> ScalarComparison:
    """Solve the mean of a single patch chain with constant rates frozen at its mean."""
    # pylint: disable=invalid-name
    model = normalize_rho(model)
    rates = continuous_extension(model)
    loss = model.gamma + model.nu

    def field_(_t: float, x: np.ndarray) -> np.ndarray:
        size = max(float(x[0]), 0.0)
        return np.array(
            [size * (float(rates.b(size) - rates.d(size)) - loss) + model.gamma * s_const]
        )

    result = solve_ivp(
        field_,
        (0.0, T),
        [x0],
        method="RK45",
        dense_output=True,
        rtol=_SCALAR_RTOL,
        atol=_SCALAR_ATOL,
    )
    if result.status == -1:
        raise StiffnessError(message=result.message)
    return ScalarComparison(
        s=s_const, x0=x0, t=result.t, x=result.y[0], dense=result.sol
    )


def comparison_envelope(model: RateModel, y0: float, times: np.ndarray) -> np.ndarray:
    """Return y(t) solving y' = (b(y) - d(y) - nu) y, y(0) = y0, at the given times."""
    model = normalize_rho(model)
    if y0 == 0:
        return np.zeros_like(times)
    rates = continuous_extension(model)

    def field_(_t: float, y: np.ndarray) -> np.ndarray:
        size = max(float(y[0]), 0.0)
        return np.array([size * float(rates.b(size) - rates.d(size) - model.nu)])

    result = solve_ivp(
        field_,
        (float(times[0]), float(times[-1])),
        [y0],
        method="RK45",
        t_eval=times,
        rtol=_SCALAR_RTOL,
        atol=_SCALAR_ATOL,
    )
    if result.status == -1:
        raise StiffnessError(message=result.message)
    return result.y[0]


def comparison_bound_check(
    model: RateModel,
    trajectory: Trajectory,
    tol: float = 1e-6,
    burn_in: float = BURN_IN_FRACTION,
) -> bool:
    """Verify s(t) <= y(t) and, after burn-in, s(t) <= max(s(0), s_tilde)."""
    envelope = comparison_envelope(model, float(trajectory.s[0]), trajectory.t)
    excess = trajectory.s - envelope
    worst = int(np.argmax(excess))
    if excess[worst] > tol:
        raise ComparisonViolated(
            time=float(trajectory.t[worst]),
            value=float(trajectory.s[worst]),
            bound=float(envelope[worst]),
        )

    ceiling = max(float(trajectory.s[0]), s_tilde(model)) + tol
    late = trajectory.t >= burn_in * trajectory.t[-1]
    above = np.flatnonzero(late & (trajectory.s > ceiling))
    if above.size:
        index = int(above[0])
        raise ComparisonViolated(
            time=float(trajectory.t[index]),
            value=float(trajectory.s[index]),
            bound=ceiling,
        )
    return True


def convergence_diagnose(
    trajectory: Trajectory,
    target: EquilibriumSolution,
    burn_in: float = BURN_IN_FRACTION,
) -> ConvergenceReport:
    """Return the m1 distance of each sample to the target equilibrium."""
    distances = np.array([m1_distance(p, target.pi) for p in trajectory.p])
    burn_in_time = burn_in * float(trajectory.t[-1])
    tail = distances[trajectory.t >= burn_in_time]
    monotone = bool(np.all(np.diff(tail) <= 1e-12))
    if not monotone:
        _LOGGER.warning("Distance to equilibrium is not monotone after t=%s", burn_in_time)
    return ConvergenceReport(
        distances=distances,
        final_distance=float(distances[-1]),
        monotone_tail=monotone,
        burn_in_time=burn_in_time,
        mean_error=abs(float(trajectory.s[-1]) - target.mean),
    )


def extinction_target() -> EquilibriumSolution:
    """Return the extinction equilibrium e0."""
    return EquilibriumSolution(
        pi=np.array([1.0]), mean=0.0, n=0, tail_mass=0.0, residual=0.0, s=0.0
    )


def two_truncation_distance(
    model: RateModel,
    p0: TruncatedState,
    T: float,
    controls: Optional[IntegrationControls] = None,
) -> float:
    """Return max over samples of the m1 distance between runs at N and 2N."""
    # pylint: disable=invalid-name
    coarse = integrate(model, p0, T, controls)
    fine = integrate(model, TruncatedState.from_distribution(p0.p, 2 * p0.n), T, controls)
    return max(m1_distance(a, b) for a, b in zip(coarse.p, fine.p))


def sample_rows(trajectory: Trajectory, cap: int) -> Sequence[Sequence[float]]:
    """Return rows t, s, mass_defect, p_0..p_K with K = min(cap, N)."""
    width = min(cap, trajectory.n) + 1
    return [
        [float(t), float(s), float(defect), *map(float, p[:width])]
        for t, s, defect, p in zip(
            trajectory.t, trajectory.s, trajectory.mass_defect, trajectory.p
        )
    ]

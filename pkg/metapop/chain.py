# -*- coding: utf-8 -*-
"""metapop.chain module.

Computations on the immigration, birth, death and catastrophe chain of a
single patch: stationary law, its mean G(s), the reproduction number and the
characteristic equation of the linearization at extinction.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse
from scipy.linalg import (
    LinAlgError,
    eigvals,
    eigvalsh_tridiagonal,
    lu_factor,
    lu_solve,
    solve_banded,
)
from scipy.optimize import brentq
from scipy.sparse.linalg import expm_multiply

from metapop.const import (
    DEFAULT_SCALAR_TOL,
    DEFAULT_SOLVE_TOL,
    N_INITIAL,
    N_MAX,
    EquilibriumSolution,
    SpectralReport,
)
from metapop.exceptions import (
    InvalidArgument,
    NumericalError,
    SpectralDomainError,
    TruncationDiverged,
)
from metapop.model import IndexLike, RateModel, normalize_rho, require_normalized

_LOGGER = logging.getLogger(__name__)

# Relative distance kept from the pole of the resolvent when bracketing.
_POLE_MARGIN = 1e-6

_MAX_BRACKET_DOUBLINGS = 200
_INVERSE_ITERATIONS = 100


@dataclass(frozen=True)
class TruncationPolicy:
    """Geometric growth of the truncation level."""

    n_initial: int = N_INITIAL
    n_max: int = N_MAX

    def levels(self) -> Iterable[int]:
        """Yield N_initial, 2 N_initial, ... up to and including N_max."""
        n = self.n_initial
        while True:
            yield min(n, self.n_max)
            if n >= self.n_max:
                return
            n = max(2 * n, self.n_initial)


DEFAULT_POLICY = TruncationPolicy()


@dataclass(frozen=True)
class ChainSpec:
    """Transition rates of the single patch chain for immigration level s."""

    model: RateModel
    s: float

    @property
    def kill(self) -> float:
        """Catastrophe rate, a jump to 0 from any state j >= 1."""
        return self.model.nu

    def up(self, j: IndexLike) -> np.ndarray:
        """Rate j b_j + gamma s of j -> j + 1."""
        j = np.asarray(j)
        births = np.where(j > 0, j * self.model.b(np.maximum(j, 1)), 0.0)
        return births + self.model.gamma * self.s

    def down(self, j: IndexLike) -> np.ndarray:
        """Rate j (d_j + gamma) of j -> j - 1."""
        j = np.asarray(j)
        return np.where(
            j > 0, j * (self.model.d(np.maximum(j, 1)) + self.model.gamma), 0.0
        )

    def truncated_rates(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Return up/down rates of states 0..n, nothing leaves n upwards."""
        states = np.arange(n + 1)
        up = self.up(states)
        up[n] = 0.0
        return up, self.down(states)


def chain_rates(model: RateModel, s: float) -> ChainSpec:
    """Return the chain with immigration level s of a normalized model."""
    if s < 0 or not math.isfinite(s):
        raise InvalidArgument(message=f"Immigration level must be >= 0, got {s}")
    require_normalized(model)
    return ChainSpec(model, float(s))


def m1_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Return |p_0 - q_0| + sum_j j |p_j - q_j|."""
    size = max(p.size, q.size)
    diff = np.abs(np.pad(p, (0, size - p.size)) - np.pad(q, (0, size - q.size)))
    weights = np.arange(size, dtype=float)
    weights[0] = 1.0
    return float(np.dot(weights, diff))


def balance_residual(pi: np.ndarray, up: np.ndarray, down: np.ndarray, nu: float) -> float:
    """Return the sup norm of pi Q for the truncated generator Q."""
    flow = -(up + down) * pi
    flow[1:] += up[:-1] * pi[:-1]
    flow[:-1] += down[1:] * pi[1:]
    flow[1:] -= nu * pi[1:]
    flow[0] += nu * pi[1:].sum()
    return float(np.max(np.abs(flow)))


def _tail_mass(pi: np.ndarray) -> float:
    n = pi.size - 1
    start = max(n - int(math.isqrt(n)), 0) + 1
    return float(np.dot(np.arange(start, n + 1), pi[start:]))


def _solve_global_balance(up: np.ndarray, down: np.ndarray, nu: float) -> np.ndarray:
    """Solve pi Q = 0 with pi_0 = 1 fixed, then normalize.

    The balance rows of states 1..n do not see the catastrophe column, so they
    form a tridiagonal system driven by the immigration flux out of state 0.
    """
    n = up.size - 1
    bands = np.zeros((3, n))
    bands[0, 1:] = down[2:]
    bands[1] = -(up[1:] + down[1:] + nu)
    bands[2, :-1] = up[1:n]
    rhs = np.zeros(n)
    rhs[0] = -up[0]
    tail = solve_banded((1, 1), bands, rhs, check_finite=False)
    pi = np.concatenate(([1.0], np.maximum(tail, 0.0)))
    return pi / pi.sum()


def _solve_regeneration(up: np.ndarray, down: np.ndarray, nu: float) -> np.ndarray:
    """Return nu e_0 (nu - Q_X)^-1 for the catastrophe-free generator Q_X."""
    n = up.size - 1
    bands = np.zeros((3, n + 1))
    bands[0, 1:] = -down[1:]
    bands[1] = nu + up + down
    bands[2, :-1] = -up[:n]
    rhs = np.zeros(n + 1)
    rhs[0] = nu
    pi = np.maximum(solve_banded((1, 1), bands, rhs, check_finite=False), 0.0)
    return pi / pi.sum()


def _detailed_balance(up: np.ndarray, down: np.ndarray) -> np.ndarray:
    """Product form (j b_j + gamma s) pi_j = (j + 1)(d_{j+1} + gamma) pi_{j+1}."""
    with np.errstate(divide="ignore"):
        log_ratio = np.log(up[:-1]) - np.log(down[1:])
    log_pi = np.concatenate(([0.0], np.cumsum(log_ratio)))
    pi = np.exp(log_pi - log_pi.max())
    return pi / pi.sum()


def _truncated_equilibrium(
    spec: ChainSpec,
    tol: float,
    policy: TruncationPolicy,
    solver: Callable[[np.ndarray, np.ndarray, float], np.ndarray],
) -> EquilibriumSolution:
    if tol <= 0:
        raise InvalidArgument(message=f"Tolerance must be > 0, got {tol}")

    tail = residual = math.inf
    n = policy.n_initial
    for n in policy.levels():
        up, down = spec.truncated_rates(n)
        pi = solver(up, down, spec.kill)
        tail = _tail_mass(pi)
        residual = balance_residual(pi, up, down, spec.kill)
        _LOGGER.debug(
            "s=%s N=%s tail=%.3g residual=%.3g", spec.s, n, tail, residual
        )
        if tail < tol and residual < tol:
            mean = float(np.dot(np.arange(n + 1), pi))
            return EquilibriumSolution(
                pi=pi, mean=mean, n=n, tail_mass=tail, residual=residual, s=spec.s
            )

    raise TruncationDiverged(n=n, tail=tail if tail >= tol else residual)


def stationary_distribution(
    spec: ChainSpec,
    tol: float = DEFAULT_SOLVE_TOL,
    policy: TruncationPolicy = DEFAULT_POLICY,
) -> EquilibriumSolution:
    """Return the stationary distribution of the chain, truncated adaptively."""
    if tol <= 0:
        raise InvalidArgument(message=f"Tolerance must be > 0, got {tol}")
    if spec.s == 0:
        return EquilibriumSolution(
            pi=np.array([1.0]), mean=0.0, n=0, tail_mass=0.0, residual=0.0, s=0.0
        )

    solution = _truncated_equilibrium(spec, tol, policy, _solve_global_balance)

    if spec.kill == 0:
        up, down = spec.truncated_rates(solution.n)
        if np.all(down[1:] > 0) and np.all(up[:-1] > 0):
            product = _detailed_balance(up, down)
            mismatch = float(np.max(np.abs(product - solution.pi)))
            if mismatch > tol:
                raise NumericalError(
                    message=f"Detailed balance disagrees with the linear solve by {mismatch:.3g}"
                )
    return solution


def detailed_balance_distribution(spec: ChainSpec, n: int) -> np.ndarray:
    """Return the product form law of a catastrophe-free chain on 0..n."""
    if spec.kill != 0:
        raise InvalidArgument(message="Detailed balance requires nu = 0")
    up, down = spec.truncated_rates(n)
    return _detailed_balance(up, down)


def mean_G(model: RateModel, s: float, tol: float = DEFAULT_SOLVE_TOL) -> float:
    """Return G(s), the mean of the stationary law with immigration level s."""
    # pylint: disable=invalid-name
    if s == 0:
        return 0.0
    spec = chain_rates(normalize_rho(model), s)
    return stationary_distribution(spec, tol).mean


def renewal_identity_oracle(
    model: RateModel, s: float, tol: float = DEFAULT_SOLVE_TOL
) -> EquilibriumSolution:
    """Return the stationary law as the nu-exponentially sampled law of X from 0.

    X is the catastrophe-free chain, restarted from 0 at every catastrophe.
    """
    model = normalize_rho(model)
    if model.nu <= 0:
        raise InvalidArgument(message="Regeneration needs catastrophes, nu = 0")
    spec = chain_rates(model, s)
    if s == 0:
        return stationary_distribution(spec, tol)
    return _truncated_equilibrium(spec, tol, DEFAULT_POLICY, _solve_regeneration)


def _killed_rates(model: RateModel, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return up/down rates of states 1..n of the zero immigration chain."""
    states = np.arange(1, n + 1)
    up = states * model.b(states)
    up[-1] = 0.0
    down = states * (model.d(states) + model.gamma)
    return up, down


def _resolvent_bands(model: RateModel, lam: float, n: int) -> np.ndarray:
    """Return (lambda - A) in banded form, A the killed generator on 1..n."""
    up, down = _killed_rates(model, n)
    bands = np.zeros((3, n))
    bands[0, 1:] = -up[:-1]
    bands[1] = lam + up + down + model.nu
    bands[2, :-1] = -down[1:]
    return bands


def _transpose_bands(bands: np.ndarray) -> np.ndarray:
    transposed = np.zeros_like(bands)
    transposed[0, 1:] = bands[2, :-1]
    transposed[1] = bands[1]
    transposed[2, :-1] = bands[0, 1:]
    return transposed


def _solve_resolvent(bands: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    try:
        solution = solve_banded((1, 1), bands, rhs, check_finite=False)
    except (LinAlgError, ValueError) as err:
        raise SpectralDomainError(message=f"Resolvent singular at lambda={lam}") from err
    if not np.all(np.isfinite(solution)) or np.any(solution < 0):
        raise SpectralDomainError(
            message=f"lambda={lam} lies outside the resolvent set of the killed generator"
        )
    return solution


def backward_resolvent(model: RateModel, lam: float, n: int) -> np.ndarray:
    """Return u = (lambda - A)^-1 e with e_j = j, u_j = int e^(-lambda t) E^(j) Z_t dt."""
    states = np.arange(1, n + 1, dtype=float)
    return _solve_resolvent(_resolvent_bands(model, lam, n), states, lam)


def forward_resolvent(model: RateModel, lam: float, n: int) -> np.ndarray:
    """Return v = (lambda - A)^-1 e^1 acting on distributions, v_i = Phat_1i(lambda)."""
    rhs = np.zeros(n)
    rhs[0] = 1.0
    bands = _transpose_bands(_resolvent_bands(model, lam, n))
    return _solve_resolvent(bands, rhs, lam)


def spectral_truncation(
    model: RateModel,
    tol: float = DEFAULT_SOLVE_TOL,
    policy: TruncationPolicy = DEFAULT_POLICY,
) -> int:
    """Return a truncation level at which R0 has converged."""
    model = normalize_rho(model)
    previous = math.nan
    value = math.nan
    n = policy.n_initial
    for n in policy.levels():
        value = model.gamma * backward_resolvent(model, 0.0, n)[0]
        if abs(value - previous) <= tol * max(1.0, abs(value)):
            return n
        _LOGGER.debug("R0 at N=%s: %s", n, value)
        previous = value
    raise TruncationDiverged(n=n, tail=abs(value - previous))


def r0(model: RateModel, tol: float = DEFAULT_SOLVE_TOL) -> float:
    """Return R0 = G'(0) = gamma int E^(1) Z_t^(0) dt by the resolvent at 0."""
    # pylint: disable=invalid-name
    model = normalize_rho(model)
    if model.gamma == 0:
        return 0.0
    n = spectral_truncation(model, tol)
    return float(model.gamma * backward_resolvent(model, 0.0, n)[0])


def r0_upper_bound(model: RateModel) -> float:
    """Return gamma / (d_1 + gamma + nu - b_1), the constant rate comparison bound."""
    model = normalize_rho(model)
    denominator = float(model.d(1) + model.gamma + model.nu - model.b(1))
    if denominator <= 0:
        return math.inf
    return model.gamma / denominator


def g_derivative(
    model: RateModel, s: float, h: float, tol: float = DEFAULT_SOLVE_TOL
) -> float:
    """Return a finite difference approximation of G'(s)."""
    if h <= 0:
        raise InvalidArgument(message=f"Step must be > 0, got {h}")
    if s < 0:
        raise InvalidArgument(message=f"Immigration level must be >= 0, got {s}")
    if s >= h:
        return (mean_G(model, s + h, tol) - mean_G(model, s - h, tol)) / (2 * h)
    return (mean_G(model, s + h, tol) - mean_G(model, s, tol)) / h


def _chi(model: RateModel, lam: float, n: int) -> float:
    states = np.arange(1, n + 1, dtype=float)
    return float(model.gamma * np.dot(states, forward_resolvent(model, lam, n)))


def characteristic_function(
    model: RateModel,
    lam: float,
    tol: float = DEFAULT_SOLVE_TOL,
    n: Optional[int] = None,
) -> float:
    """Return chi(lambda) = gamma sum_i i Phat_1i(lambda)."""
    model = normalize_rho(model)
    if n is None:
        n = spectral_truncation(model, tol)
    return _chi(model, lam, n)


def spectral_abscissa(model: RateModel, n: int) -> float:
    """Return the largest eigenvalue of the truncated killed generator.

    The generator is tridiagonal with positive off-diagonals, hence similar to
    a symmetric matrix with off-diagonals sqrt(up_j down_(j+1)).
    """
    model = normalize_rho(model)
    up, down = _killed_rates(model, n)
    diagonal = -(up + down + model.nu)
    off = np.sqrt(up[:-1] * down[1:])
    top = eigvalsh_tridiagonal(
        diagonal, off, select="i", select_range=(n - 1, n - 1), check_finite=False
    )
    return float(top[0])


def alpha_heuristic(model: RateModel) -> float:
    """Return min(nu, d_1 + gamma - b_1) / 2."""
    model = normalize_rho(model)
    return min(model.nu, float(model.d(1) + model.gamma - model.b(1))) / 2.0


def lambda0(model: RateModel, tol: float = DEFAULT_SCALAR_TOL) -> Optional[float]:
    """Return the real root of chi(lambda) = 1 right of the spectrum of A, if any."""
    # pylint: disable=invalid-name
    model = normalize_rho(model)
    if model.gamma == 0:
        return None
    n = spectral_truncation(model)
    abscissa = spectral_abscissa(model, n)
    low = abscissa + _POLE_MARGIN * max(1.0, abs(abscissa))
    try:
        chi_low = _chi(model, low, n)
    except SpectralDomainError:
        low = abscissa + math.sqrt(_POLE_MARGIN) * max(1.0, abs(abscissa))
        chi_low = _chi(model, low, n)
    if chi_low < 1.0:
        _LOGGER.debug("chi(%s) = %s < 1, no real root", low, chi_low)
        return None

    high = max(1.0, low + 1.0)
    for _ in range(_MAX_BRACKET_DOUBLINGS):
        if _chi(model, high, n) < 1.0:
            break
        high *= 2.0
    else:
        raise SpectralDomainError(message="Unable to bracket the root of chi = 1")

    root, result = brentq(
        lambda lam: _chi(model, lam, n) - 1.0,
        low,
        high,
        xtol=tol,
        rtol=4 * np.finfo(float).eps,
        full_output=True,
    )
    _LOGGER.debug("lambda0 = %s after %s iterations", root, result.iterations)
    return float(root)


def linearization_matrix(model: RateModel, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return dense (A, F'(0)) on states 1..n, acting on distributions."""
    model = normalize_rho(model)
    up, down = _killed_rates(model, n)
    generator = np.diag(-(up + down + model.nu))
    generator += np.diag(up[:-1], k=-1)
    generator += np.diag(down[1:], k=1)
    perturbation = np.zeros((n, n))
    perturbation[0] = model.gamma * np.arange(1, n + 1)
    return generator, perturbation


def dominant_eigenvalue_check(model: RateModel, n: int = 400) -> float:
    """Return the largest real eigenvalue of the truncated A + F'(0).

    A dense eigenvalue estimate is refined by shifted inverse iteration.
    """
    generator, perturbation = linearization_matrix(model, n)
    matrix = generator + perturbation
    values = eigvals(matrix, check_finite=False)
    scale = max(1.0, float(np.max(np.abs(values))))
    real = values[np.abs(values.imag) <= 1e-8 * scale].real
    if real.size == 0:
        raise SpectralDomainError(message="Truncated linearization has no real eigenvalue")
    estimate = float(real.max())

    shift = estimate + 1e-7 * max(1.0, abs(estimate))
    factors = lu_factor(matrix - shift * np.eye(n), check_finite=False)
    vector = np.ones(n) / math.sqrt(n)
    value = estimate
    for iteration in range(_INVERSE_ITERATIONS):
        image = lu_solve(factors, vector, check_finite=False)
        pivot = int(np.argmax(np.abs(image)))
        updated = shift + vector[pivot] / image[pivot]
        vector = image / np.linalg.norm(image)
        if abs(updated - value) <= 1e-12 * max(1.0, abs(updated)):
            _LOGGER.debug(
                "Dominant eigenvalue %s after %s inverse iterations", updated, iteration
            )
            return float(updated)
        value = updated
    raise SpectralDomainError(message="Shifted inverse iteration did not converge")


def dominant_profile(model: RateModel, tol: float = DEFAULT_SCALAR_TOL) -> np.ndarray:
    """Return the eigenvector (lambda0 - A)^-1 e^1 on states 1..N, summing to 1."""
    root = lambda0(model, tol)
    if root is None:
        raise SpectralDomainError(message="No real dominant eigenvalue")
    model = normalize_rho(model)
    profile = forward_resolvent(model, root, spectral_truncation(model))
    return profile / profile.sum()


def resolvent_lower_bound_check(
    model: RateModel, j_max: int = 20, tol: float = DEFAULT_SCALAR_TOL
) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Compare gamma ((lambda0 - A)^-1 e)_j with gamma j / (lambda0 + gamma + d_inf + nu).

    Returns the resolvent values, the bounds and whether the bound holds for
    j = 1..j_max.
    """
    root = lambda0(model, tol)
    if root is None:
        raise SpectralDomainError(message="No real dominant eigenvalue")
    model = normalize_rho(model)
    n = max(spectral_truncation(model), 4 * j_max)
    values = model.gamma * backward_resolvent(model, root, n)[:j_max]
    states = np.arange(1, j_max + 1, dtype=float)
    bounds = model.gamma * states / (root + model.gamma + model.d_inf + model.nu)
    holds = bool(np.all(values >= bounds * (1.0 - tol)))
    return values, bounds, holds


def spectral_report(
    model: RateModel,
    lambdas: Sequence[float] = (0.0, 0.5, 1.0, 2.0),
    tol: float = DEFAULT_SCALAR_TOL,
) -> SpectralReport:
    """Collect R0, lambda0 and samples of chi."""
    model = normalize_rho(model)
    n = spectral_truncation(model)
    abscissa = spectral_abscissa(model, n)
    samples = tuple(
        (float(lam), _chi(model, lam, n)) for lam in sorted(lambdas) if lam > abscissa
    )
    return SpectralReport(
        r0=r0(model),
        lambda0=lambda0(model, tol),
        chi=samples,
        alpha_est=-abscissa,
        alpha_heuristic=alpha_heuristic(model),
        n=n,
    )


def truncated_generator(spec: ChainSpec, n: int) -> scipy.sparse.csr_matrix:
    """Return the sparse generator of the chain on states 0..n."""
    up, down = spec.truncated_rates(n)
    kill = np.full(n + 1, spec.kill)
    kill[0] = 0.0
    generator = scipy.sparse.diags(
        [down[1:], -(up + down + kill), up[:-1]], offsets=[-1, 0, 1], format="csr"
    )
    rows = np.arange(1, n + 1)
    catastrophes = scipy.sparse.csr_matrix(
        (kill[1:], (rows, np.zeros(n, dtype=int))), shape=(n + 1, n + 1)
    )
    return (generator + catastrophes).tocsr()


def transient_mean(
    model: RateModel,
    s: float,
    m: int,
    times: Sequence[float],
    n: Optional[int] = None,
) -> np.ndarray:
    """Return E^(m) Z_t for each t, by the matrix exponential of the truncated chain."""
    model = normalize_rho(model)
    spec = chain_rates(model, s)
    if n is None:
        n = max(
            stationary_distribution(spec).n if s > 0 else 0,
            spectral_truncation(model),
            4 * (m + 16),
        )
    transposed = truncated_generator(spec, n).T.tocsr()
    start = np.zeros(n + 1)
    start[m] = 1.0
    states = np.arange(n + 1, dtype=float)
    means = []
    for time in times:
        if time == 0:
            means.append(float(m))
            continue
        law = expm_multiply(transposed * float(time), start)
        means.append(float(np.dot(states, law)))
    return np.asarray(means)

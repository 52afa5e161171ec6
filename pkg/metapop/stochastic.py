# -*- coding: utf-8 -*-
"""metapop.stochastic module.

Exact event-by-event simulation of a single patch, of n interacting patches
and of coupled pairs of patches.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from metapop.chain import ChainSpec, chain_rates, transient_mean
from metapop.const import BURN_IN_FRACTION, CONFIDENCE_SE, Stream
from metapop.exceptions import CouplingBug, InvalidArgument, NumericalError
from metapop.meanfield import Trajectory
from metapop.model import RateModel, normalize_rho
from metapop.utils import chunk_ranges, make_rng, replicate_map, stream_manifest

_LOGGER = logging.getLogger(__name__)

_BLOCK = 4096
_CHUNK = 500
_DEFAULT_STEP_CAP = 10**6


class RandomStream:
    """Block-buffered draws from one generator."""

    def __init__(self, rng: np.random.Generator) -> None:
        """Initialize."""
        self._rng = rng
        self._uniforms = rng.random(_BLOCK)
        self._uniform_index = 0
        self._exponentials = rng.standard_exponential(_BLOCK)
        self._exponential_index = 0

    def uniform(self) -> float:
        """Draw from U[0, 1)."""
        if self._uniform_index == _BLOCK:
            self._uniforms = self._rng.random(_BLOCK)
            self._uniform_index = 0
        value = self._uniforms[self._uniform_index]
        self._uniform_index += 1
        return float(value)

    def exponential(self) -> float:
        """Draw from Exp(1)."""
        if self._exponential_index == _BLOCK:
            self._exponentials = self._rng.standard_exponential(_BLOCK)
            self._exponential_index = 0
        value = self._exponentials[self._exponential_index]
        self._exponential_index += 1
        return float(value)

    def integer(self, high: int) -> int:
        """Draw uniformly from 0..high - 1."""
        return min(int(self.uniform() * high), high - 1)


class RateLookup:
    """Table of a rate sequence on 0, 1, 2, ..., grown on demand."""

    def __init__(self, sequence: Callable[[np.ndarray], np.ndarray], size: int = 64) -> None:
        """Initialize."""
        self._sequence = sequence
        self._values: List[float] = []
        self._grow(size)

    def _grow(self, size: int) -> None:
        self._values = [float(value) for value in self._sequence(np.arange(size))]

    def __getitem__(self, j: int) -> float:
        """Return the rate at state j."""
        if j >= len(self._values):
            self._grow(max(2 * len(self._values), j + 1))
        return self._values[j]


class RateTree:
    """Partial sums of per-patch rates, sampling and updates in O(log n)."""

    def __init__(self, rates: Sequence[float]) -> None:
        """Initialize."""
        self.size = len(rates)
        self._leaves = 1 << max(0, (self.size - 1).bit_length())
        self._tree = [0.0] * (2 * self._leaves)
        self._tree[self._leaves : self._leaves + self.size] = [float(rate) for rate in rates]
        for pos in range(self._leaves - 1, 0, -1):
            self._tree[pos] = self._tree[2 * pos] + self._tree[2 * pos + 1]

    @property
    def total(self) -> float:
        """Sum of all rates."""
        return self._tree[1]

    def rate(self, index: int) -> float:
        """Rate of one patch."""
        return self._tree[self._leaves + index]

    def update(self, index: int, rate: float) -> None:
        """Set the rate of one patch."""
        pos = self._leaves + index
        tree = self._tree
        tree[pos] = rate
        pos >>= 1
        while pos:
            tree[pos] = tree[2 * pos] + tree[2 * pos + 1]
            pos >>= 1

    def find(self, uniform: float) -> int:
        """Return the patch holding the point uniform * total."""
        tree = self._tree
        target = uniform * tree[1]
        pos = 1
        while pos < self._leaves:
            left = tree[2 * pos]
            if target < left or tree[2 * pos + 1] <= 0.0:
                pos = 2 * pos
            else:
                target -= left
                pos = 2 * pos + 1
        return pos - self._leaves


@dataclass(frozen=True)
class PatchSummary:
    """Time averages of a single patch path after burn-in."""

    time_average: float
    time_average_se: float
    power: float
    moment_average: float
    occupation: np.ndarray
    occupation_se: np.ndarray
    burn_in_time: float
    events: Dict[str, int]


@dataclass(frozen=True)
class PatchSimulation:
    """Jump times and states of a single patch path."""

    times: np.ndarray
    states: np.ndarray
    horizon: float
    summary: PatchSummary


@dataclass
class EventLedger:
    """Counts of events of a metapopulation run."""

    births: int = 0
    deaths: int = 0
    migrations: int = 0
    arrivals: int = 0
    catastrophes: int = 0
    catastrophe_losses: int = 0

    def net_change(self) -> int:
        """Population change implied by the counts."""
        return (
            self.births
            - self.deaths
            - self.migrations
            + self.arrivals
            - self.catastrophe_losses
        )


@dataclass(frozen=True)
class MetapopulationRun:
    """Empirical occupancy frequencies of n patches on a sample grid."""

    t: np.ndarray
    p_hat: np.ndarray
    population: np.ndarray
    events: EventLedger
    n: int
    seed: int
    streams: Dict[str, Dict[str, Any]]


@dataclass(frozen=True)
class MeanFieldComparison:
    """Empirical frequencies against the mean-field solution."""

    z_scores: np.ndarray
    excess: float
    holds: bool


@dataclass(frozen=True)
class CouplingReport:
    """Monte Carlo estimates along coupled pairs started at k > l."""

    times: np.ndarray
    mean_difference: np.ndarray
    difference_se: np.ndarray
    exact_difference: np.ndarray
    prob_differ: np.ndarray
    prob_se: np.ndarray
    prob_bound: np.ndarray
    events_checked: int
    reps: int


@dataclass(frozen=True)
class SecondDifferenceRow:
    """Estimated and exact second difference in the initial state at time t."""

    m: int
    t: float
    first_difference: float
    next_difference: float
    second_difference: float
    second_difference_se: float
    exact_second_difference: float
    negative_at_confidence: bool


@dataclass(frozen=True)
class R0Estimate:
    """Monte Carlo estimate of the reproduction number."""

    mean: float
    se: float
    reps: int
    censored: int = 0


def _occupation_windows(
    times: np.ndarray, states: np.ndarray, horizon: float, low: float, high: float
) -> np.ndarray:
    """Return the time spent in each state during [low, high]."""
    ends = np.append(times[1:], horizon)
    durations = np.clip(np.minimum(ends, high) - np.maximum(times, low), 0.0, None)
    return np.bincount(states, weights=durations)


def _summarize(
    times: np.ndarray,
    states: np.ndarray,
    horizon: float,
    burn_in: float,
    power: float,
    batches: int,
    events: Dict[str, int],
) -> PatchSummary:
    # pylint: disable=too-many-arguments,too-many-locals
    low = burn_in * horizon
    window = horizon - low
    size = int(states.max()) + 1
    occupation = _occupation_windows(times, states, horizon, low, horizon) / window
    values = np.arange(size, dtype=float)

    bounds = np.linspace(low, horizon, batches + 1)
    batch_occupation = np.zeros((batches, size))
    for index, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        spent = _occupation_windows(times, states, horizon, lo, hi)
        batch_occupation[index, : spent.size] = spent / (hi - lo)
    batch_means = batch_occupation @ values
    scale = math.sqrt(batches)

    return PatchSummary(
        time_average=float(occupation @ values),
        time_average_se=float(batch_means.std(ddof=1) / scale),
        power=power,
        moment_average=float(occupation @ values**power),
        occupation=occupation,
        occupation_se=batch_occupation.std(axis=0, ddof=1) / scale,
        burn_in_time=low,
        events=events,
    )


def simulate_patch(
    spec: ChainSpec,
    init: int,
    T: float,
    seed: int,
    burn_in: float = BURN_IN_FRACTION,
    power: float = 1.5,
    batches: int = 20,
) -> PatchSimulation:
    """Simulate the single patch chain exactly on [0, T]."""
    # pylint: disable=invalid-name,too-many-arguments,too-many-locals
    if init < 0 or T <= 0 or batches < 2:
        raise InvalidArgument(message="Need init >= 0, T > 0 and at least two batches")
    stream = RandomStream(make_rng(seed, Stream.EVENTS))
    up = RateLookup(spec.up)
    down = RateLookup(spec.down)
    kill = spec.kill
    events = {"up": 0, "down": 0, "catastrophe": 0}

    t = 0.0
    j = init
    times = [0.0]
    states = [init]
    while True:
        rate_up = up[j]
        rate_down = down[j]
        total = rate_up + rate_down + (kill if j > 0 else 0.0)
        if total <= 0.0:
            break
        t += stream.exponential() / total
        if t >= T:
            break
        pick = stream.uniform() * total
        if pick < rate_up:
            j += 1
            events["up"] += 1
        elif pick < rate_up + rate_down:
            j -= 1
            events["down"] += 1
        else:
            j = 0
            events["catastrophe"] += 1
        times.append(t)
        states.append(j)

    _LOGGER.debug("Patch path with %s events", len(times) - 1)
    time_array = np.array(times)
    state_array = np.array(states, dtype=int)
    return PatchSimulation(
        times=time_array,
        states=state_array,
        horizon=T,
        summary=_summarize(time_array, state_array, T, burn_in, power, batches, events),
    )


def _sample_grid(T: float, sample_dt: float) -> np.ndarray:
    # pylint: disable=invalid-name
    count = int(math.floor(T / sample_dt + 1e-9))
    grid = np.arange(count + 1) * sample_dt
    if T - grid[-1] > 1e-12 * max(1.0, T):
        grid = np.append(grid, T)
    return grid


def simulate_metapopulation(
    model: RateModel,
    n: int,
    init: Sequence[int],
    T: float,
    seed: int,
    sample_dt: float = 1.0,
) -> MetapopulationRun:
    """Simulate n patches linked by uniform migration.

    init is the occupancy histogram: init[i] patches start with i individuals.
    Migrants leave their patch and, with probability rho, land in a patch
    drawn uniformly among all n, their own included.
    """
    # pylint: disable=invalid-name,too-many-arguments,too-many-locals,too-many-statements
    if n < 2:
        raise InvalidArgument(message=f"Need at least two patches, got {n}")
    histogram = np.asarray(init, dtype=int)
    if np.any(histogram < 0) or int(histogram.sum()) != n:
        raise InvalidArgument(message=f"Initial histogram must count {n} patches")

    gamma, nu, rho = model.gamma, model.nu, model.rho
    births = RateLookup(lambda i: np.where(i > 0, i * model.b(np.maximum(i, 1)), 0.0))
    deaths = RateLookup(lambda i: np.where(i > 0, i * model.d(np.maximum(i, 1)), 0.0))
    patch_rate = RateLookup(
        lambda i: np.where(
            i > 0,
            i * (model.b(np.maximum(i, 1)) + model.d(np.maximum(i, 1)) + gamma) + nu,
            0.0,
        )
    )

    counts: List[int] = np.repeat(np.arange(histogram.size), histogram).tolist()
    tree = RateTree([patch_rate[count] for count in counts])
    events = RandomStream(make_rng(seed, Stream.EVENTS))
    thinning = RandomStream(make_rng(seed, Stream.THINNING))
    destinations = RandomStream(make_rng(seed, Stream.DESTINATIONS))
    streams = stream_manifest(seed, [Stream.EVENTS, Stream.THINNING, Stream.DESTINATIONS])
    ledger = EventLedger()
    initial_population = sum(counts)

    grid = _sample_grid(T, sample_dt)
    snapshots: List[np.ndarray] = []
    population: List[int] = []
    t = 0.0
    while True:
        total = tree.total
        t_next = t + events.exponential() / total if total > 0.0 else math.inf
        while len(snapshots) < grid.size and grid[len(snapshots)] <= min(t_next, T):
            snapshots.append(np.bincount(counts))
            population.append(sum(counts))
        if t_next > T:
            break
        t = t_next

        patch = tree.find(events.uniform())
        size = counts[patch]
        birth = births[size]
        death = deaths[size]
        migration = gamma * size
        pick = events.uniform() * patch_rate[size]
        if pick < birth:
            counts[patch] = size + 1
            ledger.births += 1
        elif pick < birth + death:
            counts[patch] = size - 1
            ledger.deaths += 1
        elif pick < birth + death + migration:
            counts[patch] = size - 1
            ledger.migrations += 1
            if thinning.uniform() < rho:
                destination = destinations.integer(n)
                counts[destination] += 1
                ledger.arrivals += 1
                if destination != patch:
                    tree.update(destination, patch_rate[counts[destination]])
        else:
            counts[patch] = 0
            ledger.catastrophes += 1
            ledger.catastrophe_losses += size
        tree.update(patch, patch_rate[counts[patch]])

    if sum(counts) - initial_population != ledger.net_change():
        raise NumericalError(message=f"Event ledger does not reconcile: {ledger}")
    _LOGGER.debug("Metapopulation run: %s", ledger)

    width = max(snapshot.size for snapshot in snapshots)
    p_hat = np.zeros((len(snapshots), width))
    for index, snapshot in enumerate(snapshots):
        p_hat[index, : snapshot.size] = snapshot / n
    return MetapopulationRun(
        t=grid,
        p_hat=p_hat,
        population=np.array(population),
        events=ledger,
        n=n,
        seed=seed,
        streams=streams,
    )


def compare_with_mean_field(
    run: MetapopulationRun,
    trajectory: Trajectory,
    i_max: int = 10,
    slack: float = 2e-2,
) -> MeanFieldComparison:
    """Check |p_hat_i(t) - p_i(t)| <= 3 sqrt(p_i (1 - p_i) / n) + slack for i <= i_max."""
    if trajectory.t.size != run.t.size or not np.allclose(trajectory.t, run.t):
        raise InvalidArgument(message="Trajectory and run must share the sample grid")
    width = i_max + 1
    empirical = np.zeros((run.t.size, width))
    cut = min(width, run.p_hat.shape[1])
    empirical[:, :cut] = run.p_hat[:, :cut]
    expected = np.zeros((run.t.size, width))
    cut = min(width, trajectory.p.shape[1])
    expected[:, :cut] = trajectory.p[:, :cut]

    spread = np.sqrt(np.clip(expected * (1.0 - expected), 0.0, None) / run.n)
    gap = np.abs(empirical - expected)
    z_scores = np.divide(gap, spread, out=np.zeros_like(gap), where=spread > 0)
    excess = float(np.max(gap - CONFIDENCE_SE * spread - slack))
    return MeanFieldComparison(z_scores=z_scores, excess=excess, holds=excess <= 0.0)


def _coupled_chunk(
    task: Tuple[RateModel, float, int, int, np.ndarray, int, int, range]
) -> Tuple[np.ndarray, int]:
    """Run the replicates of one chunk, return W at the grid times and events."""
    # pylint: disable=too-many-locals
    model, s, k, l, times, seed, chunk, replicates = task
    births = RateLookup(lambda i: np.where(i > 0, i * model.b(np.maximum(i, 1)), 0.0))
    deaths = RateLookup(
        lambda i: np.where(i > 0, i * (model.d(np.maximum(i, 1)) + model.gamma), 0.0)
    )
    immigration = model.gamma * s
    events = RandomStream(make_rng(seed, Stream.EVENTS, chunk))
    catastrophes = RandomStream(make_rng(seed, Stream.CATASTROPHES, chunk))

    values = np.zeros((len(replicates), times.size))
    checked = 0
    for row in range(len(replicates)):
        # After the shared catastrophe both copies restart together and W is 0.
        end = catastrophes.exponential() / model.nu if model.nu > 0 else math.inf
        t, y, w = 0.0, l, k - l
        index = 0
        while True:
            top = y + w
            rates = (
                births[y] + immigration,
                deaths[y],
                max(births[top] - births[y], 0.0),
                max(deaths[top] - deaths[y], 0.0),
            )
            total = sum(rates)
            t_next = t + events.exponential() / total if total > 0.0 else math.inf
            while index < times.size and times[index] < min(t_next, end):
                values[row, index] = w
                index += 1
            if index == times.size or t_next >= end:
                break
            t = t_next
            pick = events.uniform() * total
            if pick < rates[0]:
                y += 1
            elif pick < rates[0] + rates[1]:
                y -= 1
            elif pick < rates[0] + rates[1] + rates[2]:
                w += 1
            else:
                w -= 1
            checked += 1
            if w < 0 or y < 0:
                raise CouplingBug(time=t, y=y, w=w)
    return values, checked


def coupled_pair_run(
    model: RateModel,
    s: float,
    k: int,
    l: int,
    T: float,
    seed: int,
    reps: int = 1000,
    points: int = 10,
    workers: Optional[int] = None,
) -> CouplingReport:
    """Couple chains started at k > l and estimate E(Z1 - Z2) and P[Z1 > Z2]."""
    # pylint: disable=invalid-name,too-many-arguments,too-many-locals
    if not k > l >= 0:
        raise InvalidArgument(message=f"Need k > l >= 0, got k={k}, l={l}")
    if reps < 2 or T <= 0:
        raise InvalidArgument(message="Need at least two replicates and T > 0")
    model = normalize_rho(model)
    chain_rates(model, s)
    times = np.linspace(0.0, T, points + 1)
    tasks = [
        (model, float(s), k, l, times, seed, chunk, replicates)
        for chunk, replicates in enumerate(chunk_ranges(reps, _CHUNK))
    ]
    results = replicate_map(_coupled_chunk, tasks, workers)
    values = np.vstack([result[0] for result in results])
    checked = sum(result[1] for result in results)

    differs = (values > 0).astype(float)
    prob = differs.mean(axis=0)
    scale = math.sqrt(reps)
    exact = transient_mean(model, s, k, times) - transient_mean(model, s, l, times)
    return CouplingReport(
        times=times,
        mean_difference=values.mean(axis=0),
        difference_se=values.std(axis=0, ddof=1) / scale,
        exact_difference=exact,
        prob_differ=prob,
        prob_se=np.sqrt(prob * (1.0 - prob)) / scale,
        prob_bound=np.exp(-model.nu * times),
        events_checked=checked,
        reps=reps,
    )


Move = Tuple[int, int, int, int]


def _gap(high: float, low: float) -> float:
    """Return high - low, rounding noise of affine rates counts as zero."""
    gap = high - low
    if gap <= 1e-12 * max(1.0, abs(high), abs(low)):
        return 0.0
    return gap


def _quadruple_rates(
    births: RateLookup,
    deaths: RateLookup,
    immigration: float,
    state: Tuple[int, int, int, int],
) -> List[Tuple[float, Move]]:
    """Return the jumps of (Y, W, U, V) with their rates.

    Y, Y + W, Y + U and Y + W + V each move like the catastrophe-free chain.
    While U == V the two move together where they can and split only in the
    direction U > V, so V <= U on every path.
    """
    y, w, u, v = state
    b_y, b_yw, b_yu = births[y], births[y + w], births[y + u]
    d_y, d_yw, d_yu = deaths[y], deaths[y + w], deaths[y + u]
    rates = [
        (b_y + immigration, (1, 0, 0, 0)),
        (d_y, (-1, 0, 0, 0)),
        (_gap(b_yw, b_y), (0, 1, 0, 0)),
        (_gap(d_yw, d_y), (0, -1, 0, 0)),
    ]
    if u != v:
        rates += [
            (_gap(b_yu, b_y), (0, 0, 1, 0)),
            (_gap(d_yu, d_y), (0, 0, -1, 0)),
            (_gap(births[y + w + v], b_yw), (0, 0, 0, 1)),
            (_gap(deaths[y + w + v], d_yw), (0, 0, 0, -1)),
        ]
        return rates
    b_top, d_top = births[y + w + u], deaths[y + w + u]
    # Concave births and convex deaths make the split rates nonnegative.
    rates += [
        (_gap(b_top, b_yw), (0, 0, 1, 1)),
        (_gap(d_yu, d_y), (0, 0, -1, -1)),
        (_gap(b_yu - b_y, b_top - b_yw), (0, 0, 1, 0)),
        (_gap(d_top - d_yw, d_yu - d_y), (0, 0, 0, -1)),
    ]
    return rates


def _ordered_path(
    births: RateLookup,
    deaths: RateLookup,
    immigration: float,
    m: int,
    times: np.ndarray,
    stream: RandomStream,
    out: np.ndarray,
) -> None:
    """Write U and V of one path started at (m, 1, 1, 1) into out[0] and out[1]."""
    # pylint: disable=too-many-arguments
    t = 0.0
    state = (m, 1, 1, 1)
    index = 0
    while True:
        rates = _quadruple_rates(births, deaths, immigration, state)
        total = sum(rate for rate, _ in rates)
        t_next = t + stream.exponential() / total if total > 0.0 else math.inf
        while index < times.size and times[index] < t_next:
            out[0, index] = state[2]
            out[1, index] = state[3]
            index += 1
        if index == times.size:
            return
        t = t_next
        pick = stream.uniform() * total
        chosen = rates[0][1]
        for rate, move in rates:
            if rate <= 0.0:
                continue
            chosen = move
            if pick < rate:
                break
            pick -= rate
        state = (
            state[0] + chosen[0],
            state[1] + chosen[1],
            state[2] + chosen[2],
            state[3] + chosen[3],
        )
        if min(state) < 0 or state[3] > state[2]:
            raise CouplingBug(time=t, y=state[2], w=state[3])


def _second_difference_chunk(
    task: Tuple[RateModel, float, Sequence[int], np.ndarray, int, range]
) -> np.ndarray:
    """Return U and V at the grid times for every m and replicate of a chunk.

    E^(m+1) X_t - E^(m) X_t = E U_t and E^(m+2) X_t - E^(m+1) X_t = E V_t for
    the catastrophe-free chain X.
    """
    model, s, m_values, times, seed, replicates = task
    births = RateLookup(lambda i: np.where(i > 0, i * model.b(np.maximum(i, 1)), 0.0))
    deaths = RateLookup(
        lambda i: np.where(i > 0, i * (model.d(np.maximum(i, 1)) + model.gamma), 0.0)
    )
    immigration = model.gamma * s
    stream = RandomStream(make_rng(seed, Stream.EVENTS, replicates.start // _CHUNK))
    out = np.zeros((len(replicates), len(m_values), 2, times.size))
    for row in range(len(replicates)):
        for column, m in enumerate(m_values):
            _ordered_path(births, deaths, immigration, m, times, stream, out[row, column])
    return out


def second_difference_experiment(
    model: RateModel,
    s: float,
    m_range: Sequence[int],
    t_grid: Sequence[float],
    reps: int,
    seed: int,
    workers: Optional[int] = None,
) -> List[SecondDifferenceRow]:
    """Estimate E^(m+2) Z_t - 2 E^(m+1) Z_t + E^(m) Z_t from ordered couplings.

    Coupled starts share every path after the first catastrophe, so each
    difference is the catastrophe-free one times exp(-nu t).
    """
    # pylint: disable=too-many-arguments,too-many-locals
    if reps < 2:
        raise InvalidArgument(message="Need at least two replicates")
    model = normalize_rho(model)
    chain_rates(model, s)
    m_values = sorted(set(int(m) for m in m_range))
    if m_values[0] < 0:
        raise InvalidArgument(message=f"Need m >= 0, got {m_values[0]}")
    times = np.asarray(sorted(t_grid), dtype=float)

    tasks = [
        (model, float(s), m_values, times, seed, replicates)
        for replicates in chunk_ranges(reps, _CHUNK)
    ]
    paths = np.concatenate(replicate_map(_second_difference_chunk, tasks, workers))
    starts = range(m_values[0], m_values[-1] + 3)
    exact = {start: transient_mean(model, s, start, times) for start in starts}
    survival = np.exp(-model.nu * times)
    scale = math.sqrt(reps)

    rows = []
    for column, m in enumerate(m_values):
        upper = paths[:, column, 0]
        lower = paths[:, column, 1]
        second = lower - upper
        for index, time in enumerate(times):
            factor = float(survival[index])
            mean = factor * float(second[:, index].mean())
            se = factor * float(second[:, index].std(ddof=1) / scale)
            rows.append(
                SecondDifferenceRow(
                    m=m,
                    t=float(time),
                    first_difference=factor * float(upper[:, index].mean()),
                    next_difference=factor * float(lower[:, index].mean()),
                    second_difference=mean,
                    second_difference_se=se,
                    exact_second_difference=float(
                        exact[m + 2][index] - 2.0 * exact[m + 1][index] + exact[m][index]
                    ),
                    negative_at_confidence=mean + CONFIDENCE_SE * se < 0.0,
                )
            )
    return rows


def _r0_chunk(task: Tuple[RateModel, int, int, range]) -> Tuple[np.ndarray, int]:
    """Return gamma times the expected area of each path of a chunk."""
    model, seed, step_cap, replicates = task
    up = RateLookup(lambda i: np.where(i > 0, i * model.b(np.maximum(i, 1)), 0.0))
    down = RateLookup(
        lambda i: np.where(i > 0, i * (model.d(np.maximum(i, 1)) + model.gamma), 0.0)
    )
    stream = RandomStream(make_rng(seed, Stream.EVENTS, replicates.start // _CHUNK))
    areas = np.zeros(len(replicates))
    censored = 0
    for row in range(len(replicates)):
        j = 1
        area = 0.0
        for _ in range(step_cap):
            rate_up = up[j]
            rate_down = down[j]
            total = rate_up + rate_down + model.nu
            # Expected holding time in place of a drawn one.
            area += j / total
            pick = stream.uniform() * total
            if pick < rate_up:
                j += 1
            elif pick < rate_up + rate_down:
                j -= 1
            else:
                j = 0
            if j == 0:
                break
        else:
            censored += 1
        areas[row] = model.gamma * area
    return areas, censored


def r0_monte_carlo(
    model: RateModel,
    reps: int,
    seed: int,
    step_cap: int = _DEFAULT_STEP_CAP,
    workers: Optional[int] = None,
) -> R0Estimate:
    """Estimate R0 = gamma int E^(1) Z_t^(0) dt from paths run to absorption."""
    if reps < 2:
        raise InvalidArgument(message="Need at least two replicates")
    model = normalize_rho(model)
    tasks = [(model, seed, step_cap, replicates) for replicates in chunk_ranges(reps, _CHUNK)]
    results = replicate_map(_r0_chunk, tasks, workers)
    areas = np.concatenate([result[0] for result in results])
    censored = sum(result[1] for result in results)
    if censored:
        _LOGGER.warning("%s of %s paths hit the step cap, estimate biased low", censored, reps)
    return R0Estimate(
        mean=float(areas.mean()),
        se=float(areas.std(ddof=1) / math.sqrt(reps)),
        reps=reps,
        censored=censored,
    )

# -*- coding: utf-8 -*-
"""metapop.const module."""

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import NamedTuple, Optional, Tuple

import numpy as np

# Linear solves and reported scalars.
DEFAULT_SOLVE_TOL = 1e-10
DEFAULT_SCALAR_TOL = 1e-8

# |R0 - 1| below this is classified critical and treated as extinction.
CRITICAL_BAND = 1e-6

# Truncation growth N <- max(2N, N_INITIAL) up to N_MAX.
N_INITIAL = 64
N_MAX = 2**20

# (H1) is checked on [1, H1_CHECK_FACTOR * truncation].
H1_CHECK_FACTOR = 10
DEFAULT_N_CHECK = 640

# Adaptive Runge-Kutta tolerances.
DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
CLAMP_THRESHOLD = 1e-12
# Raw solver entries below -MAX_UNDERSHOOT are a numerical failure.
MAX_UNDERSHOOT = 1e-9
MAX_MASS_DEFECT = 1e-6
ACCEPTED_MASS_DEFECT = 1e-9
CAP_MASS_LIMIT = 1e-6

BURN_IN_FRACTION = 0.2

# Columns p_0..p_K in trajectory CSV files.
REPORT_CAP = 50

# Statistical assertions use this many standard errors.
CONFIDENCE_SE = 3.0

ENV_THREADS = "METAPOP_THREADS"


class Family(str, Enum):
    """Parametric family of per-capita rates."""

    CONSTANT = "constant"
    TABLE = "table"
    LOGISTIC_DEATH = "logistic_death"
    RICKER = "ricker"
    LINEAR_DEATH = "linear_death"


class Classification(str, Enum):
    """Fate of the metapopulation."""

    EXTINCT = "extinct"
    PERSISTENT = "persistent"
    CRITICAL = "critical"


class Stream(IntEnum):
    """Random number streams, one per purpose."""

    EVENTS = 0
    THINNING = 1
    DESTINATIONS = 2
    CATASTROPHES = 3


class ExitCode(IntEnum):
    """Process exit codes of the command line frontend."""

    OK = 0
    NEGATIVE = 1
    USAGE = 2
    NUMERICAL = 3


class HypothesisReport(NamedTuple):
    """Outcome of the (H1)/(H2) checks."""

    h1_holds: bool
    h2_holds: bool
    first_violation_index: Optional[int]
    margin: float
    a: float
    n_check: int
    finite_death_limit: bool


@dataclass(frozen=True)
class EquilibriumSolution:
    """Truncated stationary distribution of the single patch chain."""

    pi: np.ndarray
    mean: float
    n: int
    tail_mass: float
    residual: float
    s: float

    def moment(self, power: float) -> float:
        """Return sum_j j**power * pi_j."""
        states = np.arange(self.pi.size, dtype=float)
        return float(np.dot(states**power, self.pi))


@dataclass(frozen=True)
class SpectralReport:
    """Reproduction number and characteristic equation of the linearization."""

    r0: float
    lambda0: Optional[float]
    chi: Tuple[Tuple[float, float], ...]
    alpha_est: float
    alpha_heuristic: float
    n: int


@dataclass(frozen=True)
class ThresholdReport:
    """Fixed point of G and persistence classification."""

    r0: float
    s_star: float
    classification: Classification
    s_tilde: float
    iterations: int
    residual: float


@dataclass(frozen=True)
class NoEquilibriumDiagnostic:
    """Evidence that G(s) >= s when (H2) is violated."""

    s_grid: Tuple[float, ...]
    g_values: Tuple[float, ...]
    ratio_bound: float
    margin: float
    holds: bool


@dataclass(frozen=True)
class SweepPoint:
    """Threshold quantities at one value of a swept parameter.

    classification is None when (H2) fails and no report can be issued.
    """

    parameter: str
    value: float
    r0: float
    lambda0: Optional[float]
    s_star: float
    s_tilde: float
    classification: Optional[Classification]

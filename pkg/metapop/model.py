# -*- coding: utf-8 -*-
"""metapop.model module."""

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import voluptuous as vol

from metapop.const import DEFAULT_N_CHECK, Family, HypothesisReport
from metapop.exceptions import ConfigError, InvalidArgument, InvalidModel

_LOGGER = logging.getLogger(__name__)

IndexLike = Union[int, float, np.ndarray]
SequenceFn = Callable[[np.ndarray, Mapping[str, Any]], np.ndarray]

# Indices checked for nonnegativity when a model is built.
_PREFIX_CHECK = 1000

# Relative slack for the difference tests of (H1).
_H1_SLACK = 1e-12

MODELS_DIR = os.path.join(os.path.dirname(__file__), "models")
BUNDLED_MODELS = (
    "constant_subcritical",
    "constant_linear",
    "logistic",
    "logistic_mild",
    "table_concave",
    "ricker",
    "h2_violating",
    "h2_boundary",
)


def _finite(value: float) -> float:
    """Require a finite value."""
    if not math.isfinite(value):
        raise vol.Invalid("must be finite")
    return value


RATE = vol.All(vol.Coerce(float), _finite, vol.Range(min=0.0))
REAL = vol.All(vol.Coerce(float), _finite)
PROBABILITY = vol.All(vol.Coerce(float), vol.Range(min=0.0, max=1.0))
RATE_TABLE = vol.All([RATE], vol.Length(min=1))

PARAMS_SCHEMAS: Mapping[Family, vol.Schema] = {
    Family.CONSTANT: vol.Schema({vol.Required("b"): RATE, vol.Required("d"): RATE}),
    Family.TABLE: vol.Schema(
        {
            vol.Required("b"): RATE_TABLE,
            vol.Required("d"): RATE_TABLE,
            vol.Required("b_inf"): RATE,
            vol.Required("d_inf"): RATE,
        }
    ),
    Family.LOGISTIC_DEATH: vol.Schema(
        {vol.Required("b0"): RATE, vol.Required("d0"): RATE, vol.Required("delta"): REAL}
    ),
    Family.RICKER: vol.Schema(
        {vol.Required("b0"): RATE, vol.Required("beta"): RATE, vol.Required("d"): RATE}
    ),
    Family.LINEAR_DEATH: vol.Schema(
        {vol.Required("b"): RATE, vol.Required("d0"): RATE, vol.Required("c"): RATE}
    ),
}

MODEL_SCHEMA = vol.Schema(
    {
        vol.Required("family"): vol.Coerce(Family),
        vol.Required("params"): dict,
        vol.Optional("gamma", default=1.0): RATE,
        vol.Optional("nu", default=0.0): RATE,
        vol.Optional("rho", default=1.0): PROBABILITY,
        vol.Optional("death_shift", default=0.0): RATE,
    }
)


def _full(i: np.ndarray, value: float) -> np.ndarray:
    return np.full(np.shape(i), value, dtype=float)


def _table_lookup(values: Any, limit: float, i: np.ndarray) -> np.ndarray:
    # Beyond the table i*r_i continues affinely with slope equal to the limit.
    table = np.asarray(values, dtype=float)
    i = np.asarray(i)
    idx = np.clip(i.astype(int) - 1, 0, table.size - 1)
    excess = table.size * (table[-1] - limit)
    tail = limit + excess / np.maximum(i, 1)
    return np.where(i <= table.size, table[idx], tail)


def _logistic_death(i: np.ndarray, params: Mapping[str, Any]) -> np.ndarray:
    i = np.maximum(np.asarray(i, dtype=float), 1.0)
    return params["d0"] + params["delta"] * (i - 1.0) / i


_BIRTH: Mapping[Family, SequenceFn] = {
    Family.CONSTANT: lambda i, p: _full(i, p["b"]),
    Family.TABLE: lambda i, p: _table_lookup(p["b"], p["b_inf"], i),
    Family.LOGISTIC_DEATH: lambda i, p: _full(i, p["b0"]),
    Family.RICKER: lambda i, p: p["b0"] * np.exp(-p["beta"] * np.asarray(i, float)),
    Family.LINEAR_DEATH: lambda i, p: _full(i, p["b"]),
}

_DEATH: Mapping[Family, SequenceFn] = {
    Family.CONSTANT: lambda i, p: _full(i, p["d"]),
    Family.TABLE: lambda i, p: _table_lookup(p["d"], p["d_inf"], i),
    Family.LOGISTIC_DEATH: _logistic_death,
    Family.RICKER: lambda i, p: _full(i, p["d"]),
    Family.LINEAR_DEATH: lambda i, p: p["d0"] + p["c"] * np.asarray(i, float),
}

_LIMITS: Mapping[Family, Callable[[Mapping[str, Any]], Tuple[float, float]]] = {
    Family.CONSTANT: lambda p: (p["b"], p["d"]),
    Family.TABLE: lambda p: (p["b_inf"], p["d_inf"]),
    Family.LOGISTIC_DEATH: lambda p: (p["b0"], p["d0"] + p["delta"]),
    Family.RICKER: lambda p: (0.0 if p["beta"] > 0 else p["b0"], p["d"]),
    Family.LINEAR_DEATH: lambda p: (p["b"], math.inf if p["c"] > 0 else p["d0"]),
}


@dataclass(frozen=True)
class RateModel:
    """Per-capita birth and death sequences plus migration and catastrophes.

    b_0 is left undefined: every rate is used multiplied by the patch size, so
    only indices i >= 1 are ever evaluated.
    """

    family: Family
    params: Mapping[str, Any] = field(hash=False)
    b_inf: float
    d_inf: float
    gamma: float
    nu: float
    rho: float
    death_shift: float = 0.0

    def b(self, i: IndexLike) -> np.ndarray:
        """Per-capita birth rate b_i, i >= 1."""
        return _BIRTH[self.family](np.asarray(i), self.params)

    def d(self, i: IndexLike) -> np.ndarray:
        """Per-capita death rate d_i, i >= 1."""
        return _DEATH[self.family](np.asarray(i), self.params) + self.death_shift

    def birth_rates(self, n: int) -> np.ndarray:
        """Return b_1..b_n."""
        return self.b(np.arange(1, n + 1))

    def death_rates(self, n: int) -> np.ndarray:
        """Return d_1..d_n."""
        return self.d(np.arange(1, n + 1))

    @property
    def finite_death_limit(self) -> bool:
        """Return True if d_inf is finite, required for convergence of the mean-field system."""
        return math.isfinite(self.d_inf)

    @property
    def is_normalized(self) -> bool:
        """Return True if migrant success has been folded into the rates."""
        return self.rho == 1.0

    def as_dict(self) -> Dict[str, Any]:
        """Serialize to the model file layout."""
        data: Dict[str, Any] = {
            "family": self.family.value,
            "params": dict(self.params),
            "gamma": self.gamma,
            "nu": self.nu,
            "rho": self.rho,
        }
        if self.death_shift:
            data["death_shift"] = self.death_shift
        return data


def build_rate_model(
    family: Union[Family, str],
    params: Mapping[str, Any],
    gamma: float = 1.0,
    nu: float = 0.0,
    rho: float = 1.0,
) -> RateModel:
    """Build a RateModel from a parametric family."""
    try:
        top = MODEL_SCHEMA(
            {"family": family, "params": dict(params), "gamma": gamma, "nu": nu, "rho": rho}
        )
        family = top["family"]
        valid_params = PARAMS_SCHEMAS[family](top["params"])
    except vol.Invalid as err:
        raise InvalidModel(message=f"Invalid {family} model: {err}") from err

    b_inf, d_inf = _LIMITS[family](valid_params)
    model = RateModel(
        family=family,
        params=valid_params,
        b_inf=b_inf,
        d_inf=d_inf,
        gamma=top["gamma"],
        nu=top["nu"],
        rho=top["rho"],
    )

    n = _PREFIX_CHECK
    if family == Family.TABLE:
        n = max(n, len(valid_params["b"]) + 1, len(valid_params["d"]) + 1)
    if np.any(model.birth_rates(n) < 0) or np.any(model.death_rates(n) < 0) or d_inf < 0:
        raise InvalidModel(message=f"Negative rate in {family.value} model {valid_params}")

    if not model.finite_death_limit:
        _LOGGER.warning(
            "Model %s has d_inf = inf, convergence to equilibrium is not guaranteed",
            family.value,
        )
    _LOGGER.debug("Built model: %s", model)
    return model


def model_from_mapping(data: Mapping[str, Any]) -> RateModel:
    """Build a RateModel from the model file layout."""
    try:
        top = MODEL_SCHEMA(dict(data))
    except vol.Invalid as err:
        raise InvalidModel(message=f"Invalid model description: {err}") from err
    model = build_rate_model(
        top["family"], top["params"], gamma=top["gamma"], nu=top["nu"], rho=top["rho"]
    )
    if top["death_shift"]:
        model = replace(
            model,
            death_shift=top["death_shift"],
            d_inf=model.d_inf + top["death_shift"],
        )
    return model


def load_model(path: str) -> RateModel:
    """Load a RateModel from a JSON model file."""
    try:
        with open(path, encoding="utf-8") as file:
            data = json.load(file)
    except OSError as err:
        raise ConfigError(message=f"Unable to read model file {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(message=f"Model file {path} is not valid JSON: {err}") from err

    if not isinstance(data, dict):
        raise InvalidModel(message=f"Model file {path} does not hold an object")
    return model_from_mapping(data)


def _h1_violation(model: RateModel, n_check: int) -> Optional[int]:
    """Return the first index violating (H1) on [1, n_check], if any."""
    i = np.arange(1, n_check + 3)
    total_birth = i * model.b(i)
    total_death = i * model.d(i)

    checks = []
    for total, sign in ((total_birth, -1.0), (total_death, 1.0)):
        scale = _H1_SLACK * (1.0 + np.abs(total))
        first = np.diff(total)[:n_check]
        second = np.diff(total, n=2)[:n_check]
        # Nondecreasing totals, concave births (sign -1), convex deaths (sign +1).
        checks.append(first < -scale[:n_check])
        checks.append(sign * second < -scale[:n_check])

    bad = np.flatnonzero(np.logical_or.reduce(checks))
    if bad.size:
        return int(i[bad[0]])

    # Per-capita rates must approach their limits monotonically.
    b_last = float(model.b(n_check))
    d_last = float(model.d(n_check))
    if b_last < model.b_inf - _H1_SLACK * (1.0 + abs(model.b_inf)):
        return n_check
    if d_last > model.d_inf + _H1_SLACK * (1.0 + abs(d_last)):
        return n_check
    return None


def _report(model: RateModel, n_check: int) -> HypothesisReport:
    violation = _h1_violation(model, n_check)
    margin = model.d_inf + model.gamma * (1.0 - model.rho) + model.nu - model.b_inf
    return HypothesisReport(
        h1_holds=violation is None,
        h2_holds=margin > 0,
        first_violation_index=violation,
        margin=margin,
        a=model.nu + model.d_inf - model.b_inf,
        n_check=n_check,
        finite_death_limit=model.finite_death_limit,
    )


def check_h1(model: RateModel, n_check: int = DEFAULT_N_CHECK) -> HypothesisReport:
    """Check that i*b_i is concave nondecreasing and i*d_i convex nondecreasing."""
    if n_check < 3:
        raise InvalidArgument(message=f"n_check must be at least 3, got {n_check}")
    report = _report(model, n_check)
    if not report.h1_holds:
        _LOGGER.debug("(H1) violated at i=%s", report.first_violation_index)
    return report


def check_h2(model: RateModel) -> HypothesisReport:
    """Check b_inf < d_inf + gamma (1 - rho) + nu."""
    return _report(model, DEFAULT_N_CHECK)


def normalize_rho(model: RateModel) -> RateModel:
    """Fold the migrant success probability into death and migration rates."""
    if model.is_normalized:
        return model
    loss = model.gamma * (1.0 - model.rho)
    return replace(
        model,
        gamma=model.gamma * model.rho,
        rho=1.0,
        d_inf=model.d_inf + loss,
        death_shift=model.death_shift + loss,
    )


def require_normalized(model: RateModel) -> None:
    """Raise InvalidModel unless rho == 1."""
    if not model.is_normalized:
        raise InvalidModel(
            message=f"Model must be normalized (rho = 1), got rho = {model.rho}"
        )


@dataclass(frozen=True)
class ContinuousRates:
    """Continuous extensions b(x), d(x) of the per-capita rates.

    x*b(x) and x*d(x) interpolate i*b_i and i*d_i linearly between integer
    nodes; below x = 1 the rates are continued by b_1 and d_1.
    """

    model: RateModel

    def _extend(self, sequence: Callable[[IndexLike], np.ndarray], x: IndexLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        clipped = np.maximum(x, 1.0)
        lower = np.floor(clipped)
        frac = clipped - lower
        i = lower.astype(int)
        total = i * sequence(i) + frac * ((i + 1) * sequence(i + 1) - i * sequence(i))
        return np.where(x < 1.0, sequence(np.ones_like(i)), total / clipped)

    def b(self, x: IndexLike) -> np.ndarray:
        """Birth rate at a real patch size."""
        return self._extend(self.model.b, x)

    def d(self, x: IndexLike) -> np.ndarray:
        """Death rate at a real patch size."""
        return self._extend(self.model.d, x)


def continuous_extension(model: RateModel) -> ContinuousRates:
    """Return the concavity/convexity preserving extension of the rates."""
    report = check_h1(model)
    if not report.h1_holds:
        raise InvalidModel(
            message=f"(H1) violated at i={report.first_violation_index}, "
            "no concave extension exists"
        )
    return ContinuousRates(model)


def bundled_model_path(name: str) -> str:
    """Return the path of a bundled model file."""
    if name not in BUNDLED_MODELS:
        raise ConfigError(message=f"Unknown bundled model {name}")
    return os.path.join(MODELS_DIR, f"{name}.json")


def bundled_model(name: str) -> RateModel:
    """Load a bundled model by name."""
    return load_model(bundled_model_path(name))

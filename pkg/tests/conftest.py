# -*- coding: utf-8 -*-
"""Fixtures for metapop."""

import json
import os.path
from typing import Any, Callable, Mapping

import pytest

from metapop.const import ENV_THREADS
from metapop.model import MODELS_DIR, RateModel, bundled_model, model_from_mapping


def model_data(name: str) -> Mapping[str, Any]:
    """Read a bundled model file as a mapping."""
    path = os.path.join(MODELS_DIR, f"{name}.json")
    with open(path, encoding="utf-8") as file:
        return dict(json.load(file))


@pytest.fixture(autouse=True)
def single_worker(monkeypatch: pytest.MonkeyPatch) -> None:
    """Keep replicate fan-out in process."""
    monkeypatch.setenv(ENV_THREADS, "1")


@pytest.fixture
def logistic() -> RateModel:
    """Persistent logistic death model, s_tilde = 2."""
    return bundled_model("logistic")


@pytest.fixture
def subcritical() -> RateModel:
    """Constant rates b = 1, d = 2 without catastrophes, G(s) = s / 2."""
    return bundled_model("constant_subcritical")


@pytest.fixture
def constant_linear() -> RateModel:
    """Constant rates b = d = 1, nu = 0.5, R0 = 2/3."""
    return bundled_model("constant_linear")


@pytest.fixture
def table_concave() -> RateModel:
    """Rate table satisfying (H1)."""
    return bundled_model("table_concave")


@pytest.fixture
def ricker() -> RateModel:
    """Ricker births, violating (H1)."""
    return bundled_model("ricker")


@pytest.fixture
def h2_violating() -> RateModel:
    """Constant rates with b_inf > d_inf + nu."""
    return bundled_model("h2_violating")


@pytest.fixture
def make_model() -> Callable[..., RateModel]:
    """Return a builder of models from keyword overrides of a bundled one."""

    def _make(name: str = "logistic", **overrides: Any) -> RateModel:
        data = dict(model_data(name))
        params = dict(data["params"])
        for key, value in overrides.items():
            if key in params:
                params[key] = value
            else:
                data[key] = value
        data["params"] = params
        return model_from_mapping(data)

    return _make

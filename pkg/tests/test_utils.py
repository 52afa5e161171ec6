"""Unit tests for utils."""

import json
import math
import os
from pathlib import Path

import numpy as np
import pytest
from voluptuous import Invalid

from metapop.const import ENV_THREADS, Classification, Stream, ThresholdReport
from metapop.utils import (
    canonical_json,
    chunk_ranges,
    config_hash,
    format_float,
    make_rng,
    read_dump,
    replicate_map,
    require_grid,
    resolve_workers,
    str_to_grid,
    stream_manifest,
    write_csv,
    write_dump,
    write_json,
)


def _square(value: int) -> int:
    return value * value


def test_format_float() -> None:
    """Test floats survive a text round trip."""
    value = 0.1 + 0.2
    assert float(format_float(value)) == value
    assert format_float(1.0) == "1"


@pytest.mark.parametrize(
    "string,expected",
    [
        ("0:1:0.25", [0.0, 0.25, 0.5, 0.75, 1.0]),
        ("0.5:2:0.5", [0.5, 1.0, 1.5, 2.0]),
        ("1e-1:3e-1:1e-1", [0.1, 0.2, 0.3]),
        (" 2:2:1 ", [2.0]),
    ],
)
def test_str_to_grid(string: str, expected: list) -> None:
    """Test grid parsing."""
    grid = str_to_grid(string)
    assert grid is not None
    assert grid == pytest.approx(expected)


@pytest.mark.parametrize("string", ["", "0:1", "a:b:c", "0:1:0", "1:0:0.1", "0:1:-1"])
def test_str_to_grid_malformed(string: str) -> None:
    """Test malformed grids."""
    assert str_to_grid(string) is None


def test_require_grid() -> None:
    """Test grid validation for schemas."""
    assert require_grid("0:1:0.5") == pytest.approx([0.0, 0.5, 1.0])
    with pytest.raises(Invalid):
        require_grid("0:1")
    with pytest.raises(Invalid):
        require_grid(3)


class TestJson:
    """Test reports as JSON."""

    def test_canonical(self) -> None:
        """Test key order and whitespace do not matter."""
        assert canonical_json({"b": 1, "a": [1.5, 2]}) == '{"a":[1.5,2],"b":1}'
        assert config_hash({"b": 1, "a": 2}) == config_hash({"a": 2, "b": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})

    def test_report_types(self) -> None:
        """Test dataclasses, enums, arrays and infinities."""
        report = ThresholdReport(
            r0=0.5,
            s_star=0.0,
            classification=Classification.EXTINCT,
            s_tilde=math.inf,
            iterations=np.int64(3),
            residual=np.float64(0.0),
        )
        data = json.loads(canonical_json({"report": report, "grid": np.arange(2.0)}))
        assert data["report"]["classification"] == "extinct"
        assert data["report"]["s_tilde"] == "inf"
        assert data["report"]["iterations"] == 3
        assert data["grid"] == [0.0, 1.0]

    def test_write(self, tmp_path: Path) -> None:
        """Test reports carry the configuration hash and seed."""
        path = os.path.join(str(tmp_path), "report.json")
        write_json(path, {"value": 1.0}, {"model": "logistic"}, 7)
        with open(path, encoding="utf-8") as file:
            data = json.load(file)
        assert data == {
            "config_hash": config_hash({"model": "logistic"}),
            "seed": 7,
            "report": {"value": 1.0},
        }


def test_write_csv(tmp_path: Path) -> None:
    """Test header and float formatting."""
    path = os.path.join(str(tmp_path), "rows.csv")
    write_csv(path, ["s", "G"], [[0.1, 0.30000000000000004], [1, "x"]])
    with open(path, encoding="utf-8") as file:
        assert file.read() == "s,G\n0.10000000000000001,0.30000000000000004\n1,x\n"


def test_write_csv_stamped(tmp_path: Path) -> None:
    """Test the configuration hash and seed precede the header."""
    path = os.path.join(str(tmp_path), "rows.csv")
    config = {"command": "threshold", "seed": 7}
    write_csv(path, ["s", "G"], [[1, 2]], config, 7)
    with open(path, encoding="utf-8") as file:
        assert file.read() == f"# config_hash={config_hash(config)}\n# seed=7\ns,G\n1,2\n"


def test_stream_manifest() -> None:
    """Test each stream maps to the spawn key of its generator."""
    manifest = stream_manifest(9, [Stream.EVENTS, Stream.CATASTROPHES])
    assert manifest == {
        "events": {"seed": 9, "spawn_key": [0]},
        "catastrophes": {"seed": 9, "spawn_key": [3]},
    }
    key = manifest["catastrophes"]["spawn_key"]
    direct = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(9, spawn_key=tuple(key)))
    )
    assert make_rng(9, Stream.CATASTROPHES).random() == direct.random()


def test_dump(tmp_path: Path) -> None:
    """Test the binary state dump."""
    path = os.path.join(str(tmp_path), "states.bin")
    times = np.array([0.0, 0.5])
    states = np.array([[0.0, 1.0, 0.0], [0.25, 0.5, 0.25]])
    write_dump(path, times, states)
    assert os.path.getsize(path) == 4 + 8 + 2 * 4 * 8
    rows = read_dump(path)
    assert np.array_equal(rows[:, 0], times)
    assert np.array_equal(rows[:, 1:], states)


def test_dump_magic(tmp_path: Path) -> None:
    """Test other files are refused."""
    path = os.path.join(str(tmp_path), "other.bin")
    with open(path, "wb") as file:
        file.write(b"XXXX" + bytes(8))
    with pytest.raises(ValueError):
        read_dump(path)


class TestReplicates:
    """Test random streams and replicate fan-out."""

    def test_streams(self) -> None:
        """Test streams differ by purpose and key and repeat by seed."""
        first = make_rng(1, Stream.EVENTS, 0).random(4)
        assert np.array_equal(first, make_rng(1, Stream.EVENTS, 0).random(4))
        assert not np.array_equal(first, make_rng(1, Stream.EVENTS, 1).random(4))
        assert not np.array_equal(first, make_rng(1, Stream.THINNING, 0).random(4))
        assert not np.array_equal(first, make_rng(2, Stream.EVENTS, 0).random(4))

    def test_resolve_workers(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test the environment caps the worker count."""
        assert resolve_workers(8) == 1
        monkeypatch.setenv(ENV_THREADS, "3")
        assert resolve_workers(8) == 3
        monkeypatch.setenv(ENV_THREADS, "many")
        assert resolve_workers(8) == 8

    def test_chunks(self) -> None:
        """Test chunks cover the range in order."""
        assert chunk_ranges(5, 2) == [range(0, 2), range(2, 4), range(4, 5)]
        assert chunk_ranges(0, 2) == []

    def test_map(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test results come back in task order."""
        assert replicate_map(_square, [3, 1, 2]) == [9, 1, 4]
        monkeypatch.setenv(ENV_THREADS, "2")
        assert replicate_map(_square, [3, 1, 2], workers=2) == [9, 1, 4]

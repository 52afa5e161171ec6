# -*- coding: utf-8 -*-
"""metapop.utils module."""

import csv
import hashlib
import json
import logging
import os
import re
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, is_dataclass
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, TypeVar

import numpy as np
from voluptuous import Invalid

from metapop.const import ENV_THREADS, Stream

_LOGGER = logging.getLogger(__name__)

T = TypeVar("T")

GRID_RE = re.compile(
    r"^(?P<start>[-+]?[\d.]+(?:[eE][-+]?\d+)?)"
    r":(?P<stop>[-+]?[\d.]+(?:[eE][-+]?\d+)?)"
    r":(?P<step>[-+]?[\d.]+(?:[eE][-+]?\d+)?)$"
)

DUMP_MAGIC = b"MPOP"


def format_float(value: float) -> str:
    """Format a float with 17 significant digits, exact on read back."""
    return "%.17g" % value  # pylint: disable=consider-using-f-string


def str_to_grid(string: str) -> Optional[np.ndarray]:
    """Convert "start:stop:step" to the grid start, start + step, ..., stop."""
    match = GRID_RE.match(string.strip())
    if not match:
        return None

    start = float(match.group("start"))
    stop = float(match.group("stop"))
    step = float(match.group("step"))
    if step <= 0 or stop < start:
        return None
    count = int(np.floor((stop - start) / step + 1e-9))
    return start + step * np.arange(count + 1)


def require_grid(value: Any) -> np.ndarray:
    """Require a "start:stop:step" grid."""
    if not isinstance(value, str):
        raise Invalid("Grid must be a string start:stop:step")
    grid = str_to_grid(value)
    if grid is None:
        raise Invalid(f"Malformed grid: {value}")
    return grid


def _jsonable(value: Any) -> Any:
    """Convert reports to plain JSON types."""
    # pylint: disable=too-many-return-statements
    if is_dataclass(value) and not isinstance(value, type):
        return {item.name: _jsonable(getattr(value, item.name)) for item in fields(value)}
    if hasattr(value, "_asdict"):
        return {key: _jsonable(item) for key, item in value._asdict().items()}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.ndarray):
        return [_jsonable(item) for item in value.tolist()]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return _jsonable(value.item())
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    return value


def canonical_json(value: Any) -> str:
    """Serialize with sorted keys and no insignificant whitespace."""
    return json.dumps(_jsonable(value), sort_keys=True, separators=(",", ":"))


def config_hash(config: Any) -> str:
    """Return the sha256 of the canonical JSON form of a configuration."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def stamped(report: Any, config: Any, seed: Optional[int]) -> Dict[str, Any]:
    """Return a report as plain JSON types, stamped with the configuration hash and seed."""
    return {
        "config_hash": config_hash(config),
        "seed": seed,
        "report": _jsonable(report),
    }


def write_json(path: str, report: Any, config: Any, seed: Optional[int]) -> None:
    """Write a stamped report."""
    document = stamped(report, config, seed)
    with open(path, "w", encoding="utf-8") as file:
        json.dump(document, file, sort_keys=True, indent=2)
        file.write("\n")


def write_csv(
    path: str,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    config: Any = None,
    seed: Optional[int] = None,
) -> None:
    """Write rows with a header line, floats with 17 significant digits.

    With a configuration, "# config_hash=..." and "# seed=..." lines come first.
    """
    with open(path, "w", encoding="utf-8", newline="") as file:
        if config is not None:
            file.write(f"# config_hash={config_hash(config)}\n")
            file.write(f"# seed={seed}\n")
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(item) if isinstance(item, float) else item for item in row]
            )


def write_dump(path: str, times: np.ndarray, states: np.ndarray) -> None:
    """Write the full state of every sample.

    Layout: b"MPOP", uint32 N, uint32 K, then K rows of N + 2 float64 values
    t, p_0..p_N, all little-endian.
    """
    count, width = states.shape
    rows = np.column_stack([times, states]).astype("<f8")
    with open(path, "wb") as file:
        file.write(DUMP_MAGIC)
        file.write(struct.pack("<II", width - 1, count))
        file.write(rows.tobytes())


def read_dump(path: str) -> np.ndarray:
    """Read a dump written by write_dump, return rows (t, p_0..p_N)."""
    with open(path, "rb") as file:
        if file.read(4) != DUMP_MAGIC:
            raise ValueError(f"{path} is not a state dump")
        n, count = struct.unpack("<II", file.read(8))
        data = np.frombuffer(file.read(), dtype="<f8")
    return data.reshape(count, n + 2)


def make_rng(seed: int, stream: Stream, *key: int) -> np.random.Generator:
    """Return a Philox generator for one purpose and one replicate."""
    sequence = np.random.SeedSequence(seed, spawn_key=(int(stream), *key))
    return np.random.Generator(np.random.Philox(sequence))


def stream_manifest(seed: int, streams: Sequence[Stream]) -> Dict[str, Dict[str, Any]]:
    """Return the seed and spawn key of each stream, keyed by stream name."""
    return {
        stream.name.lower(): {"seed": seed, "spawn_key": [int(stream)]} for stream in streams
    }


def resolve_workers(requested: Optional[int] = None) -> int:
    """Return the worker count, capped by the METAPOP_THREADS variable."""
    workers = requested or os.cpu_count() or 1
    cap = os.environ.get(ENV_THREADS)
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            _LOGGER.warning("Ignoring %s=%s, not an integer", ENV_THREADS, cap)
    return workers


def chunk_ranges(total: int, chunk_size: int) -> List[range]:
    """Split range(total) into consecutive chunks of a fixed size."""
    return [range(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]


def replicate_map(
    func: Callable[..., T], tasks: Sequence[Any], workers: Optional[int] = None
) -> List[T]:
    """Apply func to each task, in worker processes when allowed.

    Results come back in task order, so reductions do not depend on the
    number of workers.
    """
    workers = min(resolve_workers(workers), len(tasks))
    if workers <= 1:
        return [func(task) for task in tasks]

    _LOGGER.debug("Running %s tasks on %s workers", len(tasks), workers)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, tasks))

"""Scenario files: TOML with one ``[scenario.<theta>]`` table per scenario.

Top-level keys: ``horizon``, ``steps``, ``n``, ``k``, ``d``, ``x0`` and the
shared ``F``.  Each scenario table may set ``A, B, C, D, E, L, S, R, G``.
A coefficient is one of

* a number, filling every entry of the block;
* a row-major list (flat or nested) for a table constant in time;
* a string naming a CSV file (relative to the scenario file) with one row per
  step holding the row-major entries.

Missing coefficients are zero.  Unknown keys are rejected.
"""
from __future__ import annotations

import csv
import sys
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .scenario_model import LQScenario, ScenarioError, ScenarioSet, TimeGrid

TOP_KEYS = {"horizon", "steps", "n", "k", "d", "x0", "F", "scenario"}
TABLE_KEYS = ("A", "B", "C", "D", "E", "L", "S", "R", "G")
DEFAULT_STEPS = 400


def _block_shape(name, n, k):
    return {"A": (n, n), "B": (n, k), "C": (n, n), "D": (n, k), "L": (n, n), "S": (k, n), "R": (k, k),
            "G": (n, n), "E": (), "F": ()}[name]


def _read_csv(path: Path, where: str) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise ScenarioError(f"{where}: cannot read {path}: {exc.strerror}") from None
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {path}: {exc}") from None


def _table(value, name: str, shape: tuple, steps: int, base: Path, where: str) -> np.ndarray:
    """Step table ``(steps,) + shape`` (``G`` is returned as a single block)."""
    size = int(np.prod(shape)) if shape else 1
    per_step = name != "G"
    if isinstance(value, bool):
        raise ScenarioError(f"{where}.{name}: expected a number, list or CSV path")
    if isinstance(value, str):
        arr = _read_csv(base / value, f"{where}.{name}")
        if not per_step:
            if arr.size != size:
                raise ScenarioError(f"{where}.{name}: {value} holds {arr.size} values, expected {size}")
            return arr.reshape(shape)
        if arr.ndim != 2 or arr.shape != (steps, size):
            raise ScenarioError(f"{where}.{name}: {value} has shape {arr.shape}, expected ({steps}, {size}) "
                                f"(one row per step)")
        return arr.reshape((steps,) + shape)
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}.{name}: cannot parse {value!r} as numbers") from None
    if arr.ndim == 0:
        block = np.full(shape, float(arr))
    elif arr.size == size:
        block = arr.reshape(shape)
    else:
        raise ScenarioError(f"{where}.{name}: {arr.size} values given, expected {size} for shape {shape}")
    return block if not per_step else np.broadcast_to(block, (steps,) + shape).copy()


def _int(doc, key, default=None):
    v = doc.get(key, default)
    if v is None:
        raise ScenarioError(f"missing required key {key!r}")
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ScenarioError(f"{key} must be a positive integer, got {v!r}")
    return v


def parse_scenario(doc: dict, base: Path = Path(".")) -> ScenarioSet:
    """Build a ``ScenarioSet`` from a parsed TOML mapping."""
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise ScenarioError(f"unknown top-level key(s): {sorted(unknown)}")
    horizon = doc.get("horizon")
    if isinstance(horizon, bool) or not isinstance(horizon, (int, float)) or not horizon > 0:
        raise ScenarioError(f"horizon must be a positive number, got {horizon!r}")
    steps = _int(doc, "steps", DEFAULT_STEPS)
    n, k, d = _int(doc, "n", 1), _int(doc, "k", 1), _int(doc, "d", 1)
    if d != 1:
        raise ScenarioError("LQ scenario files support one Brownian motion (d = 1)")
    grid = TimeGrid(float(horizon), steps)
    x0 = _table(doc.get("x0", 0.0), "x0", (n,), 1, base, "x0")[0]
    F = _table(doc.get("F", 0.0), "F", (), steps, base, "F")
    sections = doc.get("scenario")
    if not isinstance(sections, dict) or not sections:
        raise ScenarioError("at least one [scenario.<theta>] table is required")
    labels = sorted(sections, key=lambda v: int(v) if str(v).isdigit() else -1)
    if labels != [str(j) for j in range(1, len(labels) + 1)]:
        raise ScenarioError(f"scenario labels must be 1..K, got {list(sections)}")
    scenarios = []
    for lab in labels:
        sec = sections[lab]
        where = f"scenario.{lab}"
        if not isinstance(sec, dict):
            raise ScenarioError(f"{where} must be a table")
        extra = set(sec) - set(TABLE_KEYS)
        if extra:
            raise ScenarioError(f"{where}: unknown key(s): {sorted(extra)}")
        tables = {name: _table(sec.get(name, 0.0), name, _block_shape(name, n, k), steps, base, where)
                  for name in TABLE_KEYS}
        scenarios.append(LQScenario(**tables))
    return ScenarioSet(tuple(scenarios), x0, grid, F)


def load_scenario(path) -> ScenarioSet:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc.strerror}") from None
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return parse_scenario(doc, path.parent)


# ---------------------------------------------------------------------------
# Writing


def _fmt(v: float) -> str:
    # repr round-trips exactly; inf and nan are valid TOML literals
    return repr(float(v))


def _flat(a: np.ndarray) -> str:
    return "[" + ", ".join(_fmt(v) for v in np.asarray(a).reshape(-1)) + "]"


def dump_scenario(s: ScenarioSet, path, csv_dir: Optional[Path] = None) -> Path:
    """Write ``s`` to ``path``; tables that vary in time go to CSV files next to it.

    Floats are written with ``repr`` so loading the result reproduces every
    table bit for bit.
    """
    if not s.is_lq:
        raise ScenarioError("only LQ scenario sets can be written")
    path = Path(path)
    csv_dir = path.parent if csv_dir is None else Path(csv_dir)
    stem = path.stem
    lines = [f"horizon = {_fmt(s.grid.horizon)}", f"steps = {s.grid.steps}", f"n = {s.n}", f"k = {s.k}",
             "d = 1", f"x0 = {_flat(s.x0)}"]

    def value(a: np.ndarray, label: str) -> str:
        a = np.asarray(a)
        if np.all(a == a[0]) and np.array_equal(np.signbit(a), np.broadcast_to(np.signbit(a[0]), a.shape)):
            return _flat(a[0]) if a.ndim > 1 else _fmt(a[0])
        name = f"{stem}_{label}.csv"
        with open(csv_dir / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in a.reshape(a.shape[0], -1):
                w.writerow([_fmt(v) for v in row])
        rel = (csv_dir / name).relative_to(path.parent) if csv_dir != path.parent else Path(name)
        return '"' + rel.as_posix() + '"'

    lines.append(f"F = {value(s.F, 'F')}")
    for th, sc in enumerate(s.scenarios, start=1):
        lines += ["", f"[scenario.{th}]"]
        for name in TABLE_KEYS:
            if name == "G":
                lines.append(f"G = {_flat(sc.G)}")
            else:
                lines.append(f"{name} = {value(getattr(sc, name), f'{th}_{name}')}")
    path.write_text("\n".join(lines) + "\n")
    return path

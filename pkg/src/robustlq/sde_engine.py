"""Brownian ensembles and Euler-Maruyama simulation with common random numbers."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtri

from .scenario_model import GeneralScenario, LQScenario, ScenarioSet, TimeGrid

MEMORY_BUDGET_BYTES = 2 * 1024**3
OVERFLOW_BOUND = 1e12
EXACT = "exact"


class CapacityError(MemoryError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


# ---------------------------------------------------------------------------
# Brownian increments


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Brownian increments ``dW`` of shape ``(M, N, d)`` on ``grid``."""

    grid: TimeGrid
    dW: np.ndarray
    seed: int

    @property
    def M(self) -> int:
        return self.dW.shape[0]

    @property
    def d(self) -> int:
        return self.dW.shape[2]

    def W(self) -> np.ndarray:
        """Brownian paths at the nodes, shape ``(M, N + 1, d)``."""
        W = np.zeros((self.M, self.grid.steps + 1, self.d))
        np.cumsum(self.dW, axis=1, out=W[:, 1:])
        return W

    def coarsen(self, factor: int) -> "PathEnsemble":
        """Ensemble on a grid ``factor`` times coarser, built from the same paths."""
        N = self.grid.steps
        if N % factor:
            raise ValueError(f"{factor} does not divide {N} steps")
        dW = self.dW.reshape(self.M, N // factor, factor, self.d).sum(axis=2)
        return PathEnsemble(TimeGrid(self.grid.horizon, N // factor), dW, self.seed)

    def subset(self, paths: slice) -> "PathEnsemble":
        return PathEnsemble(self.grid, self.dW[paths], self.seed)


def _path_normals(seed: int, path: int, count: int) -> np.ndarray:
    # one Philox word per draw: draw c of path j depends only on (seed, j, c)
    key = ((seed % 2**64) << 64) | path
    raw = np.random.Philox(key=key).random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def generate_paths(grid: TimeGrid, d: int, M: int, seed: int, *, workers: int = 1,
                   memory_budget: int = MEMORY_BUDGET_BYTES) -> PathEnsemble:
    """Draw ``dW ~ N(0, dt I_d)`` from a counter-based stream keyed by (seed, path, step).

    Path ``j`` is the same whatever ``M`` or ``workers`` is.
    """
    if M < 1 or d < 1:
        raise ValueError("M and d must be >= 1")
    N = grid.steps
    need = M * N * d * 8
    if need > memory_budget:
        raise CapacityError(f"ensemble needs {need} bytes, budget is {memory_budget}")
    dW = np.empty((M, N, d))
    scale = math.sqrt(grid.dt)

    def fill(lo, hi):
        for j in range(lo, hi):
            dW[j] = _path_normals(seed, j, N * d).reshape(N, d) * scale

    if workers <= 1:
        fill(0, M)
    else:
        edges = np.linspace(0, M, workers + 1).astype(int)
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(fill, edges[:-1], edges[1:]))
    dW.flags.writeable = False
    return PathEnsemble(grid, dW, seed)


# ---------------------------------------------------------------------------
# Controls


class Control:
    """A control evaluated step by step: ``value(i, t, x) -> (M, k)``."""

    def value(self, i: int, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass
class OpenLoopControl(Control):
    """Per-path, per-step values of shape ``(M, N, k)`` (or ``(N, k)``, shared by all paths)."""

    values: np.ndarray

    def value(self, i, t, x):
        v = self.values
        return np.broadcast_to(v[:, i] if v.ndim == 3 else v[i], (len(x), v.shape[-1]))


@dataclass
class AffineFeedback(Control):
    """``u_i = gain_i x_i + offset_i`` with ``gain`` of shape ``(N, k, n)``."""

    gain: np.ndarray
    offset: Optional[np.ndarray] = None

    def value(self, i, t, x):
        u = x @ self.gain[i].T
        if self.offset is not None:
            u = u + self.offset[i]
        return u


@dataclass
class FeedbackControl(Control):
    """Arbitrary feedback ``fn(i, t, x) -> (M, k)``."""

    fn: Callable[[int, float, np.ndarray], np.ndarray]

    def value(self, i, t, x):
        return np.asarray(self.fn(i, t, x), dtype=float)


def zero_control(k: int) -> Control:
    return FeedbackControl(lambda i, t, x: np.zeros((len(x), k)))


ControlPath = Union[Control, np.ndarray]


def as_control(u: ControlPath) -> Control:
    return u if isinstance(u, Control) else OpenLoopControl(np.asarray(u, dtype=float))


@dataclass
class StatePaths:
    """Simulated states ``x`` of shape ``(M, N + 1, n)`` and realized controls ``u`` of shape ``(M, N, k)``."""

    x: np.ndarray
    u: np.ndarray
    theta: Optional[int] = None
    label: str = ""

    @property
    def M(self) -> int:
        return self.x.shape[0]


# ---------------------------------------------------------------------------
# Euler-Maruyama


def _check_ensemble(s: ScenarioSet, ens: PathEnsemble):
    if ens.grid != s.grid:
        raise ValueError(f"ensemble grid {ens.grid} differs from scenario grid {s.grid}")
    if ens.d != s.d:
        raise ValueError(f"ensemble has d={ens.d}, scenarios need d={s.d}")


def _guard(x: np.ndarray, step: int, what: str):
    bad = ~np.isfinite(x).all(axis=1) | (np.abs(x).max(axis=1) > OVERFLOW_BOUND)
    if bad.any():
        j = int(np.argmax(bad))
        raise SimulationError(f"{what}: state left the bound {OVERFLOW_BOUND:g} on path {j} at step {step}",
                              path=j, step=step)


def euler_lq(sc: LQScenario, grid: TimeGrid, x0: np.ndarray, u: Control, ens: PathEnsemble,
             label: str = "") -> StatePaths:
    """Euler scheme for ``dx = (A x + B u) dt + (C x + D u) dW`` (one noise)."""
    M, N = ens.M, grid.steps
    dt = grid.dt
    x = np.empty((M, N + 1, sc.n))
    us = np.empty((M, N, sc.k))
    x[:, 0] = x0
    t = grid.nodes
    for i in range(N):
        xi = x[:, i]
        ui = u.value(i, t[i], xi)
        us[:, i] = ui
        drift = xi @ sc.A[i].T + ui @ sc.B[i].T
        vol = xi @ sc.C[i].T + ui @ sc.D[i].T
        x[:, i + 1] = xi + drift * dt + vol * ens.dW[:, i, 0:1]
        _guard(x[:, i + 1], i + 1, label or "simulate_sde")
    return StatePaths(x, us, label=label)


def euler_general(sc: GeneralScenario, grid: TimeGrid, x0: np.ndarray, u: Control,
                  ens: PathEnsemble, label: str = "") -> StatePaths:
    M, N = ens.M, grid.steps
    dt = grid.dt
    x = np.empty((M, N + 1, sc.n))
    us = np.empty((M, N, sc.k))
    x[:, 0] = x0
    t = grid.nodes
    for i in range(N):
        xi = x[:, i]
        ui = u.value(i, t[i], xi)
        us[:, i] = ui
        drift = np.asarray(sc.b(t[i], xi, ui)).reshape(M, sc.n)
        vol = np.asarray(sc.sigma(t[i], xi, ui)).reshape(M, sc.n, sc.d)
        x[:, i + 1] = xi + drift * dt + np.einsum("mnd,md->mn", vol, ens.dW[:, i])
        _guard(x[:, i + 1], i + 1, label or "simulate_sde")
    return StatePaths(x, us, label=label)


def simulate_sde(s: ScenarioSet, theta: int, u: ControlPath, ens: PathEnsemble,
                 x0: Optional[np.ndarray] = None) -> StatePaths:
    """Simulate the state of scenario ``theta`` under control ``u`` on the shared ensemble."""
    _check_ensemble(s, ens)
    sc = s.scenario(theta)
    x0 = s.x0 if x0 is None else np.asarray(x0, dtype=float)
    ctrl = as_control(u)
    if isinstance(sc, LQScenario):
        out = euler_lq(sc, s.grid, x0, ctrl, ens, label=f"theta={theta}")
    else:
        out = euler_general(sc, s.grid, x0, ctrl, ens, label=f"theta={theta}")
    out.theta = theta
    return out


def simulate_variational_sde(s: ScenarioSet, theta: int, ubar: Optional[ControlPath],
                             direction: ControlPath, base: StatePaths,
                             ens: PathEnsemble) -> StatePaths:
    """First-order variation of the state in the control direction ``direction``.

    Coefficients are the state/control derivatives of the drift and volatility
    along ``(base.x, base.u)``; ``x_hat(0) = 0``.  ``direction`` is evaluated on
    the base state.  ``ubar`` is accepted for symmetry with the control
    actually used; the realized values come from ``base.u``.
    """
    _check_ensemble(s, ens)
    sc = s.general(theta)
    dirc = as_control(direction)
    M, N, dt = ens.M, s.grid.steps, s.grid.dt
    t = s.grid.nodes
    xh = np.zeros((M, N + 1, sc.n))
    dirs = np.empty((M, N, sc.k))
    for i in range(N):
        xb, ub = base.x[:, i], base.u[:, i]
        v = np.broadcast_to(dirc.value(i, t[i], xb), (M, sc.k))
        dirs[:, i] = v
        bx, bu = sc.b_x(t[i], xb, ub), sc.b_u(t[i], xb, ub)
        sx, su = sc.sigma_x(t[i], xb, ub), sc.sigma_u(t[i], xb, ub)
        xi = xh[:, i]
        drift = np.einsum("mij,mj->mi", bx, xi) + np.einsum("mij,mj->mi", bu, v)
        vol = np.einsum("mndj,mj->mnd", sx, xi) + np.einsum("mndj,mj->mnd", su, v)
        xh[:, i + 1] = xi + drift * dt + np.einsum("mnd,md->mn", vol, ens.dW[:, i])
        _guard(xh[:, i + 1], i + 1, "simulate_variational_sde")
    return StatePaths(xh, dirs, theta=theta, label="variational")


# ---------------------------------------------------------------------------
# Convergence order


@dataclass
class ConvergenceFit:
    order: Union[float, str]
    dts: list
    errors: list

    @property
    def exact(self) -> bool:
        return self.order == EXACT

    def to_dict(self):
        return {"order": self.order, "dts": self.dts, "errors": self.errors}


def fit_order(dts: Sequence[float], errors: Sequence[float], floor: float = 1e-14) -> ConvergenceFit:
    """Least-squares slope of ``log error`` against ``log dt``."""
    if len(dts) < 3:
        raise ValueError("need at least 3 levels to fit an order")
    errs = np.asarray(errors, dtype=float)
    if np.all(errs <= floor):
        return ConvergenceFit(EXACT, list(map(float, dts)), errs.tolist())
    slope = np.polyfit(np.log(dts), np.log(np.maximum(errs, 1e-300)), 1)[0]
    return ConvergenceFit(float(slope), list(map(float, dts)), errs.tolist())


def strong_convergence_order(s: ScenarioSet, levels: Sequence[int], *, M: int = 2000, seed: int = 0,
                             theta: int = 1, control: Optional[ControlPath] = None,
                             reference: Optional[Callable[[PathEnsemble], np.ndarray]] = None) -> ConvergenceFit:
    """Fit the strong order of the Euler scheme from RMS terminal errors.

    ``reference(ens)`` returns exact terminal states ``(M, n)`` given the
    finest ensemble; without it the finest level itself is the reference and
    is excluded from the fit.  ``control`` must be a feedback (it is
    re-evaluated on each grid).
    """
    levels = sorted(int(v) for v in levels)
    if len(levels) < 3:
        raise ValueError("need at least 3 levels to fit an order")
    finest = levels[-1]
    for v in levels:
        if finest % v:
            raise ValueError(f"level {v} does not divide the finest level {finest}")
    grid = TimeGrid(s.grid.horizon, finest)
    fine = generate_paths(grid, s.d, M, seed)
    ctrl = control if control is not None else zero_control(s.k)
    if reference is not None:
        ref = reference(fine)
        fit_levels = levels
    else:
        ref = simulate_sde(s.regrid(finest), theta, ctrl, fine).x[:, -1]
        fit_levels = levels[:-1]
        if len(fit_levels) < 3:
            raise ValueError("need at least 3 levels besides the fine-grid reference")
    dts, errs = [], []
    for v in fit_levels:
        ens = fine.coarsen(finest // v)
        xT = simulate_sde(s.regrid(v), theta, ctrl, ens).x[:, -1]
        dts.append(s.grid.horizon / v)
        errs.append(float(np.sqrt(np.mean(np.sum((xT - ref) ** 2, axis=1)))))
    return fit_order(dts, errs)


# ---------------------------------------------------------------------------
# Output


def dump_paths_csv(paths: StatePaths, fh, max_paths: Optional[int] = None):
    """Write ``path,step,component,value`` rows."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path", "step", "component", "value"])
    x = paths.x if max_paths is None else paths.x[:max_paths]
    for j in range(x.shape[0]):
        for i in range(x.shape[1]):
            for c in range(x.shape[2]):
                w.writerow([j, i, c, repr(float(x[j, i, c]))])

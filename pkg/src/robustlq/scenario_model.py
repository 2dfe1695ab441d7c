"""Scenario data, time grid and assumption validators.

A scenario bundles the coefficients of one candidate model of the market.
Linear-quadratic scenarios store their coefficients as step-indexed tables
(piecewise constant on ``[t_i, t_{i+1})``); general scenarios carry callables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

SYMMETRY_WARN = 1e-12


class ScenarioError(ValueError):
    """Structural problem with scenario data (shapes, dimensions, files)."""


def tol_psd(M: np.ndarray) -> float:
    """Tolerance for semidefiniteness tests, scaled by the matrix size."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return 1e-10 * (1.0 + float(np.linalg.norm(M, np.inf)))


def min_eig(M: np.ndarray) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ScenarioError(f"horizon must be positive and finite, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 2:
            raise ScenarioError(f"steps must be an integer >= 2, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def step_index(self, t: float) -> int:
        """Index ``i`` of the step ``[t_i, t_{i+1})`` containing ``t``."""
        i = int(math.floor(t / self.dt + 1e-9))
        return min(max(i, 0), self.steps - 1)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor)


# ---------------------------------------------------------------------------
# LQ scenarios

_MATRIX_TABLES = ("A", "B", "C", "D", "L", "S", "R")
_SYMMETRIC = ("L", "R")


@dataclass(frozen=True, eq=False)
class LQScenario:
    """Coefficients of one linear-quadratic scenario.

    Step-indexed tables have a leading axis of length ``N``: ``A, C`` are
    ``(N, n, n)``, ``B, D`` are ``(N, n, k)``, ``E`` is ``(N,)``, ``L`` is
    ``(N, n, n)``, ``S`` is ``(N, k, n)`` and ``R`` is ``(N, k, k)``.  ``G`` is a
    single ``(n, n)`` matrix.  The ``F`` table is shared and lives on the
    :class:`ScenarioSet`.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    L: np.ndarray
    S: np.ndarray
    R: np.ndarray
    G: np.ndarray
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        warns = list(self.warnings)
        for name in _MATRIX_TABLES:
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim != 3:
                raise ScenarioError(f"table {name} must be 3-dimensional (steps, rows, cols), got shape {a.shape}")
            if name in _SYMMETRIC:
                asym = np.abs(a - np.swapaxes(a, 1, 2))
                asym = np.where(np.isfinite(asym), asym, 0.0)
                worst = float(asym.max()) if asym.size else 0.0
                if worst > SYMMETRY_WARN:
                    step = int(np.unravel_index(np.argmax(asym), asym.shape)[0])
                    warns.append(f"{name} symmetrized (asymmetry {worst:.3g} at step {step})")
                a = 0.5 * (a + np.swapaxes(a, 1, 2))
            object.__setattr__(self, name, _readonly(a))
        E = np.asarray(self.E, dtype=float)
        if E.ndim != 1:
            raise ScenarioError(f"table E must be 1-dimensional (steps,), got shape {E.shape}")
        object.__setattr__(self, "E", _readonly(E))
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if G.ndim != 2:
            raise ScenarioError(f"G must be a matrix, got shape {G.shape}")
        if G.shape[0] == G.shape[1]:
            asym = float(np.nan_to_num(np.abs(G - G.T)).max())
            if asym > SYMMETRY_WARN:
                warns.append(f"G symmetrized (asymmetry {asym:.3g})")
            G = 0.5 * (G + G.T)
        object.__setattr__(self, "G", _readonly(G))
        object.__setattr__(self, "warnings", tuple(warns))

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def k(self) -> int:
        return self.B.shape[2]

    @property
    def steps(self) -> int:
        return self.A.shape[0]

    @classmethod
    def constant(cls, steps: int, n: int = 1, k: int = 1, **coeffs) -> "LQScenario":
        """Build a scenario whose tables are constant in time.

        Missing coefficients default to zero; scalars broadcast to the full
        block shape, so ``R=1`` means the identity only when ``k == 1``.
        """
        shapes = {"A": (n, n), "B": (n, k), "C": (n, n), "D": (n, k),
                  "L": (n, n), "S": (k, n), "R": (k, k)}
        tables = {}
        for name, shp in shapes.items():
            v = np.asarray(coeffs.pop(name, 0.0), dtype=float)
            if v.ndim == 0:
                v = np.full(shp, float(v))
            v = v.reshape(shp)
            tables[name] = np.broadcast_to(v, (steps,) + shp).copy()
        tables["E"] = np.full(steps, float(coeffs.pop("E", 0.0)))
        G = np.asarray(coeffs.pop("G", 0.0), dtype=float)
        tables["G"] = np.full((n, n), float(G)) if G.ndim == 0 else G.reshape(n, n)
        if coeffs:
            raise ScenarioError(f"unknown coefficient(s): {sorted(coeffs)}")
        return cls(**tables)

    def tables(self) -> dict:
        return {name: getattr(self, name) for name in ("A", "B", "C", "D", "E", "L", "S", "R", "G")}

    def replace(self, **changes) -> "LQScenario":
        t = self.tables()
        t.update(changes)
        return LQScenario(**t)

    def resample(self, grid_from: TimeGrid, grid_to: TimeGrid) -> "LQScenario":
        """Resample the piecewise-constant tables onto another grid."""
        idx = np.array([grid_from.step_index(t + 0.5 * grid_to.dt) for t in grid_to.nodes[:-1]])
        t = {name: getattr(self, name)[idx] for name in ("A", "B", "C", "D", "E", "L", "S", "R")}
        t["G"] = self.G
        return LQScenario(**t)


# ---------------------------------------------------------------------------
# General scenarios

Evaluator = Callable[..., np.ndarray]


@dataclass(frozen=True, eq=False)
class GeneralScenario:
    """Coefficients given as vectorized callables.

    Shapes, for ``M`` paths: ``x`` is ``(M, n)``, ``u`` is ``(M, k)``, ``y`` is
    ``(M,)`` and ``z`` is ``(M, d)``.

    * ``b(t, x, u) -> (M, n)``, ``sigma(t, x, u) -> (M, n, d)``
    * ``f(t, x, y, z, u) -> (M,)``, ``phi(x) -> (M,)``
    * ``b_x -> (M, n, n)``, ``b_u -> (M, n, k)``
    * ``sigma_x -> (M, n, d, n)``, ``sigma_u -> (M, n, d, k)``
    * ``f_x -> (M, n)``, ``f_y -> (M,)``, ``f_z -> (M, d)``, ``f_u -> (M, k)``
    * ``phi_x -> (M, n)``
    """

    n: int
    k: int
    d: int
    b: Evaluator
    sigma: Evaluator
    f: Evaluator
    phi: Evaluator
    b_x: Optional[Evaluator] = None
    b_u: Optional[Evaluator] = None
    sigma_x: Optional[Evaluator] = None
    sigma_u: Optional[Evaluator] = None
    f_x: Optional[Evaluator] = None
    f_y: Optional[Evaluator] = None
    f_z: Optional[Evaluator] = None
    f_u: Optional[Evaluator] = None
    phi_x: Optional[Evaluator] = None


def lq_as_general(sc: LQScenario, F: np.ndarray, grid: TimeGrid) -> GeneralScenario:
    """View an LQ scenario through the general (callable) interface."""

    def at(t):
        return grid.step_index(t)

    def b(t, x, u):
        i = at(t)
        return x @ sc.A[i].T + u @ sc.B[i].T

    def sigma(t, x, u):
        i = at(t)
        return (x @ sc.C[i].T + u @ sc.D[i].T)[:, :, None]

    def f(t, x, y, z, u):
        i = at(t)
        quad = (np.einsum("mi,ij,mj->m", x, sc.L[i], x)
                + 2 * np.einsum("mi,ij,mj->m", u, sc.S[i], x)
                + np.einsum("mi,ij,mj->m", u, sc.R[i], u))
        return sc.E[i] * y + F[i] * z[:, 0] + 0.5 * quad

    def phi(x):
        return 0.5 * np.einsum("mi,ij,mj->m", x, sc.G, x)

    def b_x(t, x, u):
        return np.broadcast_to(sc.A[at(t)], (len(x), sc.n, sc.n))

    def b_u(t, x, u):
        return np.broadcast_to(sc.B[at(t)], (len(x), sc.n, sc.k))

    def sigma_x(t, x, u):
        return np.broadcast_to(sc.C[at(t)][:, None, :], (len(x), sc.n, 1, sc.n))

    def sigma_u(t, x, u):
        return np.broadcast_to(sc.D[at(t)][:, None, :], (len(x), sc.n, 1, sc.k))

    def f_x(t, x, y, z, u):
        i = at(t)
        return x @ sc.L[i] + u @ sc.S[i]

    def f_y(t, x, y, z, u):
        return np.full(len(x), sc.E[at(t)])

    def f_z(t, x, y, z, u):
        return np.full((len(x), 1), F[at(t)])

    def f_u(t, x, y, z, u):
        i = at(t)
        return x @ sc.S[i].T + u @ sc.R[i]

    def phi_x(x):
        return x @ sc.G

    return GeneralScenario(sc.n, sc.k, 1, b, sigma, f, phi, b_x, b_u, sigma_x,
                           sigma_u, f_x, f_y, f_z, f_u, phi_x)


# ---------------------------------------------------------------------------
# Scenario sets

Scenario = Union[LQScenario, GeneralScenario]


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Finite family of scenarios driven by one Brownian motion from ``x0``."""

    scenarios: tuple
    x0: np.ndarray
    grid: TimeGrid
    F: Optional[np.ndarray] = None

    def __post_init__(self):
        scs = tuple(self.scenarios)
        if not scs:
            raise ScenarioError("a scenario set needs at least one scenario")
        object.__setattr__(self, "scenarios", scs)
        object.__setattr__(self, "x0", _readonly(np.atleast_1d(np.asarray(self.x0, dtype=float))))
        dims = {(s.n, s.k, self._d(s)) for s in scs}
        if len(dims) != 1:
            raise ScenarioError(f"scenarios disagree on (n, k, d): {sorted(dims)}")
        if self.x0.shape != (self.n,):
            raise ScenarioError(f"x0 has shape {self.x0.shape}, expected ({self.n},)")
        if self.is_lq:
            N = self.grid.steps
            F = np.zeros(N) if self.F is None else np.asarray(self.F, dtype=float)
            if F.ndim == 0:
                F = np.full(N, float(F))
            if F.shape != (N,):
                raise ScenarioError(f"table F has shape {F.shape}, expected ({N},)")
            object.__setattr__(self, "F", _readonly(F))
            for th, s in enumerate(scs, start=1):
                if s.steps != N:
                    raise ScenarioError(f"scenario {th} has {s.steps} steps, grid has {N}")

    @staticmethod
    def _d(s) -> int:
        return 1 if isinstance(s, LQScenario) else s.d

    @property
    def n(self) -> int:
        return self.scenarios[0].n

    @property
    def k(self) -> int:
        return self.scenarios[0].k

    @property
    def d(self) -> int:
        return self._d(self.scenarios[0])

    @property
    def K(self) -> int:
        return len(self.scenarios)

    @property
    def is_lq(self) -> bool:
        return all(isinstance(s, LQScenario) for s in self.scenarios)

    def scenario(self, theta: int) -> Scenario:
        """Scenario with 1-based label ``theta``."""
        if not 1 <= theta <= self.K:
            raise ScenarioError(f"theta={theta} outside 1..{self.K}")
        return self.scenarios[theta - 1]

    def general(self, theta: int) -> GeneralScenario:
        s = self.scenario(theta)
        return lq_as_general(s, self.F, self.grid) if isinstance(s, LQScenario) else s

    @property
    def warnings(self) -> list:
        out = []
        for th, s in enumerate(self.scenarios, start=1):
            out += [f"scenario {th}: {w}" for w in getattr(s, "warnings", ())]
        return out

    def swapped(self) -> "ScenarioSet":
        """Same set with the scenario labels reversed."""
        return ScenarioSet(self.scenarios[::-1], self.x0, self.grid, self.F)

    def regrid(self, steps: int) -> "ScenarioSet":
        grid = TimeGrid(self.grid.horizon, steps)
        if not self.is_lq:
            return ScenarioSet(self.scenarios, self.x0, grid, self.F)
        scs = tuple(s.resample(self.grid, grid) for s in self.scenarios)
        idx = np.array([self.grid.step_index(t + 0.5 * grid.dt) for t in grid.nodes[:-1]])
        return ScenarioSet(scs, self.x0, grid, self.F[idx])

    def stacked(self) -> LQScenario:
        """Block-diagonal stacking of the state equations (dimension ``K*n``).

        Only the dynamics are meaningful; cost tables are zero.
        """
        if not self.is_lq:
            raise ScenarioError("stacking requires LQ scenarios")
        N, n, k, K = self.grid.steps, self.n, self.k, self.K
        A = np.zeros((N, K * n, K * n))
        C = np.zeros_like(A)
        for j, s in enumerate(self.scenarios):
            A[:, j * n:(j + 1) * n, j * n:(j + 1) * n] = s.A
            C[:, j * n:(j + 1) * n, j * n:(j + 1) * n] = s.C
        B = np.concatenate([s.B for s in self.scenarios], axis=1)
        D = np.concatenate([s.D for s in self.scenarios], axis=1)
        return LQScenario(A=A, B=B, C=C, D=D, E=np.zeros(N), L=np.zeros((N, K * n, K * n)),
                          S=np.zeros((N, k, K * n)), R=np.zeros((N, k, k)), G=np.zeros((K * n, K * n)))


def random_lq_set(seed: int, n: int = 2, k: int = 1, *, K: int = 2, steps: int = 100, horizon: float = 1.0,
                  noise: float = 0.3, discount: float = 0.3) -> ScenarioSet:
    """Seeded random LQ scenario set with smooth time-varying coefficients.

    ``R`` is bounded below by ``0.5 I`` and ``L`` is built as
    ``S^T R^{-1} S`` plus a PSD term, so every draw passes the positivity
    validator.
    """
    rng = np.random.default_rng(seed)
    grid = TimeGrid(horizon, steps)
    t = grid.nodes[:-1] / horizon
    wave = np.sin(np.pi * t)[:, None, None]

    def smooth(shape, amp):
        a, b = amp * rng.standard_normal(shape), 0.5 * amp * rng.standard_normal(shape)
        return a + wave * b

    scs = []
    for _ in range(K):
        A, C = smooth((n, n), 0.5), smooth((n, n), noise)
        B, D = smooth((n, k), 1.0), smooth((n, k), noise)
        Q = rng.standard_normal((k, k))
        R = 0.5 * np.eye(k) + (Q @ Q.T) * (1.0 + 0.3 * wave)
        S = smooth((k, n), 0.5)
        V = rng.standard_normal((n, n))
        L = np.einsum("nji,njl,nlm->nim", S, np.linalg.inv(R), S) + 0.5 * (V @ V.T) * (1.0 + 0.3 * wave)
        W = rng.standard_normal((n, n))
        E = discount * (rng.uniform(-1, 1) + 0.5 * rng.uniform(-1, 1) * np.sin(np.pi * t))
        scs.append(LQScenario(A=A, B=B, C=C, D=D, E=E, L=L, S=S, R=R, G=0.5 * W @ W.T))
    F = 0.5 * noise * rng.uniform(-1, 1) * np.ones(steps)
    return ScenarioSet(tuple(scs), rng.standard_normal(n), grid, F)


# ---------------------------------------------------------------------------
# Validators


@dataclass
class ValidationReport:
    ok: bool
    margins: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "margins": self.margins, "failures": self.failures,
                "warnings": self.warnings, "details": self.details}


def _expected_shapes(n, k):
    return {"A": (n, n), "B": (n, k), "C": (n, n), "D": (n, k),
            "L": (n, n), "S": (k, n), "R": (k, k)}


def validate_h6(s: ScenarioSet) -> ValidationReport:
    """Boundedness, symmetry and dimension checks for LQ coefficient tables."""
    if not s.is_lq:
        raise ScenarioError("validate_h6 needs LQ scenarios")
    n, k, N = s.n, s.k, s.grid.steps
    failures, sym = [], {}
    for th, sc in enumerate(s.scenarios, start=1):
        for name, shp in _expected_shapes(n, k).items():
            tab = getattr(sc, name)
            if tab.shape[1:] != shp:
                raise ScenarioError(f"scenario {th}: table {name} has blocks {tab.shape[1:]}, expected {shp} (step 0)")
            if tab.shape[0] != N:
                raise ScenarioError(f"scenario {th}: table {name} has {tab.shape[0]} steps, expected {N}")
        if sc.E.shape != (N,):
            raise ScenarioError(f"scenario {th}: table E has shape {sc.E.shape}, expected ({N},)")
        if sc.G.shape != (n, n):
            raise ScenarioError(f"scenario {th}: G has shape {sc.G.shape}, expected ({n}, {n})")
        for name in _MATRIX_TABLES + ("E",):
            tab = getattr(sc, name)
            bad = ~np.isfinite(tab.reshape(N, -1)).all(axis=1)
            if bad.any():
                failures.append(f"scenario {th}: table {name} has non-finite entries at step {int(np.argmax(bad))}")
        if not np.isfinite(sc.G).all():
            failures.append(f"scenario {th}: G has non-finite entries")
        for name in _SYMMETRIC:
            tab = getattr(sc, name)
            sym[f"{th}.{name}"] = float(np.nan_to_num(np.abs(tab - np.swapaxes(tab, 1, 2))).max())
        sym[f"{th}.G"] = float(np.nan_to_num(np.abs(sc.G - sc.G.T)).max())
    bad = ~np.isfinite(s.F)
    if bad.any():
        failures.append(f"table F has non-finite entries at step {int(np.argmax(bad))}")
    return ValidationReport(ok=not failures, margins={"symmetry_residual": max(sym.values())},
                            failures=failures, warnings=s.warnings, details={"symmetry": sym})


def validate_h7(s: ScenarioSet, delta: float) -> ValidationReport:
    """Positivity conditions on ``G``, ``R`` and ``L - S^T R^{-1} S``.

    Margins are the worst (smallest) minimum eigenvalue over scenarios and
    steps of ``G``, ``R - delta I`` and ``L - S^T R^{-1} S``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not s.is_lq:
        raise ScenarioError("validate_h7 needs LQ scenarios")
    failures = []
    per_theta = {}
    worst = {"G": math.inf, "R": math.inf, "L_SRS": math.inf}
    for th, sc in enumerate(s.scenarios, start=1):
        mg = min_eig(sc.G)
        if mg < -tol_psd(sc.G):
            failures.append(f"scenario {th}: G not positive semidefinite (min eig {mg:.3g})")
        mr = ml = math.inf
        for i in range(sc.steps):
            R = sc.R[i]
            if not np.isfinite(R).all():
                failures.append(f"scenario {th}: R non-finite at step {i}")
                mr = ml = -math.inf
                continue
            eR = min_eig(R - delta * np.eye(sc.k))
            mr = min(mr, eR)
            if eR < 0:
                failures.append(f"scenario {th}: R - delta I not positive semidefinite at step {i} (min eig {eR:.3g})")
            try:
                if min_eig(R) <= 0:
                    raise np.linalg.LinAlgError
                Q = sc.L[i] - sc.S[i].T @ np.linalg.solve(R, sc.S[i])
            except np.linalg.LinAlgError:
                failures.append(f"scenario {th}: R singular at step {i}")
                ml = -math.inf
                continue
            eQ = min_eig(Q)
            ml = min(ml, eQ)
            if eQ < -tol_psd(Q):
                failures.append(f"scenario {th}: L - S^T R^-1 S not positive semidefinite at step {i} (min eig {eQ:.3g})")
        per_theta[th] = {"G": mg, "R": mr, "L_SRS": ml}
        worst = {key: min(worst[key], v) for key, v in per_theta[th].items()}
    # repeated failures at many steps are collapsed to the first few
    return ValidationReport(ok=not failures, margins=worst, failures=failures[:20],
                            warnings=s.warnings, details={"per_theta": per_theta})


def _central(fun, args, pos, h):
    """Central differences of ``fun`` in argument ``pos``; trailing output axis is the derivative index."""
    base = np.asarray(args[pos], dtype=float)
    cols = []
    for j in range(base.shape[1]):
        up = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
        dn = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
        up[pos][:, j] += h
        dn[pos][:, j] -= h
        cols.append((np.asarray(fun(*up)) - np.asarray(fun(*dn))) / (2 * h))
    return np.stack(cols, axis=-1)


def validate_derivatives(s: GeneralScenario, probes: int, seed: int, *, horizon: float = 1.0,
                         points: Optional[dict] = None, h: float = 1e-5,
                         tol: float = 1e-4) -> ValidationReport:
    """Compare supplied derivative evaluators with central differences.

    The error for each derivative is ``max |supplied - fd| / max(|fd|, 1)``.
    ``points`` may fix some probe coordinates (keys ``t, x, y, z, u``).
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    pts = {"t": rng.uniform(0, horizon), "x": rng.standard_normal((probes, s.n)),
           "y": rng.standard_normal(probes), "z": rng.standard_normal((probes, s.d)),
           "u": rng.standard_normal((probes, s.k))}
    for key, v in (points or {}).items():
        pts[key] = v if key == "t" else np.array(v, dtype=float).reshape(pts[key].shape)
    t, x, y, z, u = (pts[key] for key in "txyzu")
    y2 = y[:, None]

    def f_y_wrapped(t_, x_, yy, z_, u_):
        return s.f(t_, x_, yy[:, 0], z_, u_)

    checks = [
        ("b_x", lambda: _central(s.b, [t, x, u], 1, h), lambda: s.b_x(t, x, u)),
        ("b_u", lambda: _central(s.b, [t, x, u], 2, h), lambda: s.b_u(t, x, u)),
        ("sigma_x", lambda: _central(s.sigma, [t, x, u], 1, h), lambda: s.sigma_x(t, x, u)),
        ("sigma_u", lambda: _central(s.sigma, [t, x, u], 2, h), lambda: s.sigma_u(t, x, u)),
        ("f_x", lambda: _central(s.f, [t, x, y, z, u], 1, h), lambda: s.f_x(t, x, y, z, u)),
        ("f_y", lambda: _central(f_y_wrapped, [t, x, y2, z, u], 2, h)[..., 0], lambda: s.f_y(t, x, y, z, u)),
        ("f_z", lambda: _central(s.f, [t, x, y, z, u], 3, h), lambda: s.f_z(t, x, y, z, u)),
        ("f_u", lambda: _central(s.f, [t, x, y, z, u], 4, h), lambda: s.f_u(t, x, y, z, u)),
        ("phi_x", lambda: _central(s.phi, [x], 0, h), lambda: s.phi_x(x)),
    ]
    margins, failures, missing = {}, [], []
    for name, fd, supplied in checks:
        if getattr(s, name) is None:
            missing.append(name)
            continue
        try:
            ref = np.asarray(fd(), dtype=float)
            got = np.asarray(supplied(), dtype=float).reshape(ref.shape)
        except Exception as exc:  # evaluator failure is reported, not raised
            failures.append(f"{name}: evaluator failed at probe t={t}: {exc!r}")
            continue
        err = np.abs(got - ref) / np.maximum(np.abs(ref), 1.0)
        margins[name] = float(err.max())
        if not margins[name] <= tol:
            j = int(np.unravel_index(np.argmax(err), err.shape)[0])
            failures.append(f"{name}: relative error {margins[name]:.3g} at probe x={x[j].tolist()}")
    return ValidationReport(ok=not failures, margins=margins, failures=failures,
                            warnings=[f"no evaluator supplied for {m}" for m in missing],
                            details={"max_error": max(margins.values(), default=0.0), "probes": probes})

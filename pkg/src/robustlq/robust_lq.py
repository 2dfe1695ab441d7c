"""Robust LQ solve: search the scenario weight, synthesize the feedback, price each scenario.

The stacked state ``X = (x_1, ..., x_K)`` carries one copy of the state per
scenario, all driven by the same control and the same Brownian motion.  For a
weight ``lam`` on scenario 1 the Riccati gain gives ``u = -K X``; the
scenario costs ``y_theta(0)`` are then read off the ``theta`` component.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .bsde_engine import BsdeValue, _mean_se, combined_se, exponential_process, linear_bsde_value, lq_cost_terms
from .riccati import RiccatiSolution, assemble_blocks, solve_riccati
from .scenario_model import ScenarioError, ScenarioSet
from .sde_engine import AffineFeedback, PathEnsemble, StatePaths, _check_ensemble, euler_lq

CHUNK_BYTES = 64 * 1024**2
INTERVAL_FLOOR = 1e-8


class BisectionError(RuntimeError):
    def __init__(self, message, bracket):
        super().__init__(message)
        self.bracket = bracket


@dataclass
class ClosedLoop:
    """Stacked states ``x`` ``(M, N + 1, K n)`` and the common control ``u`` ``(M, N, k)``."""

    x: np.ndarray
    u: np.ndarray
    gain: np.ndarray
    offset: Optional[np.ndarray]
    n: int

    def component(self, theta: int) -> np.ndarray:
        return self.x[:, :, (theta - 1) * self.n:theta * self.n]

    def paths(self, theta: int) -> StatePaths:
        return StatePaths(self.component(theta), self.u, theta=theta, label=f"closed loop theta={theta}")


def _stacked_x0(s: ScenarioSet) -> np.ndarray:
    return np.tile(s.x0, s.K)


def simulate_closed_loop(s: ScenarioSet, gain: np.ndarray, ens: PathEnsemble,
                         offset: Optional[np.ndarray] = None) -> ClosedLoop:
    """Euler simulation of the stacked system under ``u = -gain X + offset``."""
    _check_ensemble(s, ens)
    fb = AffineFeedback(-np.asarray(gain, dtype=float), offset)
    out = euler_lq(s.stacked(), s.grid, _stacked_x0(s), fb, ens, label="closed loop")
    return ClosedLoop(out.x, out.u, np.asarray(gain), offset, s.n)


def _chunks(s: ScenarioSet, ens: PathEnsemble, chunk: Optional[int]):
    if chunk is None:
        per_path = 8 * (s.grid.steps + 1) * (s.K * s.n + s.k + 4)
        chunk = max(1, CHUNK_BYTES // per_path)
    return [slice(a, min(a + chunk, ens.M)) for a in range(0, ens.M, chunk)]


def closed_loop_costs(s: ScenarioSet, gain: np.ndarray, ens: PathEnsemble,
                      offset: Optional[np.ndarray] = None, *, keep_paths: bool = False,
                      chunk: Optional[int] = None):
    """Per-scenario costs ``y_theta(0)`` under the stacked feedback.

    Paths are processed in chunks so memory stays bounded; every per-path
    sample is the representation estimator on that path.  Returns the list
    of ``BsdeValue`` and the ``ClosedLoop`` (``None`` unless ``keep_paths``).
    """
    _check_ensemble(s, ens)
    if keep_paths:
        parts = [slice(0, ens.M)]
    else:
        parts = _chunks(s, ens, chunk)
    samples = [[] for _ in range(s.K)]
    loop = None
    for sl in parts:
        sub = ens.subset(sl)
        cl = simulate_closed_loop(s, gain, sub, offset)
        for th in range(1, s.K + 1):
            sc = s.scenario(th)
            xi, c = lq_cost_terms(sc, cl.component(th), cl.u)
            samples[th - 1].append(linear_bsde_value(xi, c, sc.E, s.F, sub).samples)
        if keep_paths:
            loop = cl
    values = []
    for th in range(s.K):
        smp = np.concatenate(samples[th])
        y0, se = _mean_se(smp)
        values.append(BsdeValue(y0, se, "representation", samples=smp))
    return values, loop


@dataclass
class LambdaEvaluation:
    lam: float
    costs: list
    riccati: RiccatiSolution
    closed_loop: Optional[ClosedLoop] = None

    @property
    def y(self) -> np.ndarray:
        return np.array([c.y0 for c in self.costs])

    @property
    def gap(self) -> float:
        return float(self.costs[0].y0 - self.costs[1].y0)

    @property
    def se(self) -> float:
        return combined_se(*self.costs)


def evaluate_at_lambda(s: ScenarioSet, lam: float, ens: PathEnsemble, *, refine: int = 4,
                       keep_paths: bool = False) -> LambdaEvaluation:
    """Riccati solve at ``lam``, closed-loop simulation and both scenario costs."""
    if s.K != 2:
        raise ScenarioError(f"the weight search needs exactly two scenarios, got {s.K}")
    ric = solve_riccati(assemble_blocks(s, lam), refine)
    costs, loop = closed_loop_costs(s, ric.K, ens, keep_paths=keep_paths)
    return LambdaEvaluation(float(lam), costs, ric, loop)


# ---------------------------------------------------------------------------
# Deterministic cross-check


def lyapunov_costs(s: ScenarioSet, gain: np.ndarray, offset: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact scenario costs of the continuous closed loop with step-wise constant gains.

    ``V = E[m_theta X X^T]`` solves a linear matrix ODE with coefficients that
    are constant on each step, so every step is one matrix exponential of the
    vectorized system augmented with the running-cost accumulator.  An affine
    ``offset`` is handled by appending a constant 1 to the state.
    """
    if not s.is_lq:
        raise ScenarioError("the Lyapunov cross-check needs LQ scenarios")
    st = s.stacked()
    N, dt, n, k, K = s.grid.steps, s.grid.dt, s.n, s.k, s.K
    gain = np.asarray(gain, dtype=float)
    off = np.zeros((N, k)) if offset is None else np.asarray(offset, dtype=float)
    dim = K * n + 1
    out = np.empty(K)
    for th in range(1, K + 1):
        sc = s.scenario(th)
        sel = np.zeros((n, dim))
        sel[:, (th - 1) * n:th * n] = np.eye(n)
        V = np.zeros((dim, dim))
        X0 = np.append(_stacked_x0(s), 1.0)
        V[:] = np.outer(X0, X0)
        acc = 0.0
        for i in range(N):
            # closed-loop coefficients on the augmented state (X, 1)
            Kc = np.zeros((k, dim))
            Kc[:, :-1] = gain[i]
            Kc[:, -1] = -off[i]
            Ab = np.zeros((dim, dim))
            Cb = np.zeros((dim, dim))
            Ab[:-1, :-1] = st.A[i]
            Cb[:-1, :-1] = st.C[i]
            Ab[:-1] -= st.B[i] @ Kc
            Cb[:-1] -= st.D[i] @ Kc
            F = s.F[i]
            Aeff = Ab + F * Cb + 0.5 * sc.E[i] * np.eye(dim)
            I = np.eye(dim)
            gen = np.kron(Aeff, I) + np.kron(I, Aeff) + np.kron(Cb, Cb)
            Q = sel.T @ sc.L[i] @ sel - sel.T @ sc.S[i].T @ Kc - Kc.T @ sc.S[i] @ sel + Kc.T @ sc.R[i] @ Kc
            big = np.zeros((dim * dim + 1, dim * dim + 1))
            big[:-1, :-1] = gen
            big[-1, :-1] = 0.5 * Q.reshape(-1)
            state = np.append(V.reshape(-1), acc)
            state = expm(big * dt) @ state
            V = state[:-1].reshape(dim, dim)
            V = 0.5 * (V + V.T)
            acc = state[-1]
        out[th - 1] = acc + 0.5 * np.trace(sel.T @ sc.G @ sel @ V)
    return out


# ---------------------------------------------------------------------------
# Weight search


@dataclass
class RobustSolution:
    """Outcome of the weight search.

    ``branch`` is ``corner-0`` (all weight on scenario 2), ``corner-1`` or
    ``interior``; ``history`` lists every ``(lam, gap)`` evaluated.
    """

    lam_star: float
    riccati: RiccatiSolution
    costs: list
    J: float
    gap: float
    branch: str
    tol_gap: float
    history: list = field(default_factory=list)
    bracket: tuple = (0.0, 1.0)
    closed_loop: Optional[ClosedLoop] = None
    cross_check: Optional[list] = None
    scale: float = 1.0

    @property
    def gain(self) -> np.ndarray:
        return self.riccati.K

    def to_dict(self) -> dict:
        out = {
            "lambda_star": self.lam_star,
            "branch": self.branch,
            "costs": [{"theta": th, "y0": c.y0, "stderr": c.stderr} for th, c in enumerate(self.costs, start=1)],
            "robust_cost": self.J,
            "gap": self.gap,
            "tol_gap": self.tol_gap,
            "iterations": len(self.history),
            "bracket": list(self.bracket),
            "riccati_diag": self.riccati.diagnostics(),
        }
        if self.cross_check is not None:
            out["lyapunov_costs"] = list(self.cross_check)
        return out


def default_tol_gap(evals: Sequence[LambdaEvaluation]) -> tuple:
    """``max(3 * combined standard error, 1e-6 * scale)`` over the corner evaluations."""
    scale = max([abs(v) for e in evals for v in e.y] + [0.0]) or 1.0
    se = max(e.se for e in evals)
    return max(3.0 * se, 1e-6 * scale), scale


def solve_robust(s: ScenarioSet, ens: PathEnsemble, tol_gap: Optional[float] = None,
                 max_iter: int = 60, *, refine: int = 4, cross_check: bool = False,
                 keep_paths: bool = False) -> RobustSolution:
    """Find the weight that makes the worst-case LQ control optimal.

    Corners are tested first: ``g(0) <= tol`` gives ``corner-0``, then
    ``g(1) >= -tol`` gives ``corner-1``.  Otherwise ``g`` changes sign on
    ``(0, 1)`` and is bisected on the shared ensemble.
    """
    if s.K != 2:
        raise ScenarioError(f"the weight search needs exactly two scenarios, got {s.K}")
    if tol_gap is not None and not tol_gap > 0:
        raise ValueError("tol_gap must be positive")
    e0 = evaluate_at_lambda(s, 0.0, ens, refine=refine)
    history = [(0.0, e0.gap)]
    e1 = None
    auto_tol, scale = default_tol_gap([e0])
    tol = tol_gap if tol_gap is not None else auto_tol

    def finish(e: LambdaEvaluation, branch, bracket):
        loop = None
        if keep_paths:
            loop = simulate_closed_loop(s, e.riccati.K, ens)
        J = max(c.y0 for c in e.costs)
        cc = list(lyapunov_costs(s, e.riccati.K)) if cross_check else None
        return RobustSolution(e.lam, e.riccati, e.costs, J, e.gap, branch, tol, history,
                              bracket, loop, cc, scale)

    if e0.gap <= tol:
        return finish(e0, "corner-0", (0.0, 0.0))
    e1 = evaluate_at_lambda(s, 1.0, ens, refine=refine)
    history.append((1.0, e1.gap))
    if tol_gap is None:
        tol, scale = default_tol_gap([e0, e1])
        if e0.gap <= tol:
            return finish(e0, "corner-0", (0.0, 0.0))
    if e1.gap >= -tol:
        return finish(e1, "corner-1", (1.0, 1.0))
    if not (e0.gap > 0 and e1.gap < 0):
        raise AssertionError("corner checks passed but g does not change sign")
    lo, hi = 0.0, 1.0
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        e = evaluate_at_lambda(s, mid, ens, refine=refine)
        history.append((mid, e.gap))
        if best is None or abs(e.gap) < abs(best.gap):
            best = e
        if abs(e.gap) <= tol:
            return finish(e, "interior", (lo, hi))
        if e.gap > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= INTERVAL_FLOOR:
            return finish(best, "interior", (lo, hi))
    raise BisectionError(f"bisection stopped after {max_iter} iterations with |g|={abs(best.gap):.3g} "
                         f"> tol_gap={tol:.3g}", (lo, hi))


# ---------------------------------------------------------------------------
# Sweep


@dataclass
class SweepTable:
    lams: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    se1: np.ndarray
    se2: np.ndarray

    @property
    def J(self) -> np.ndarray:
        return np.maximum(self.y1, self.y2)

    @property
    def gap(self) -> np.ndarray:
        return self.y1 - self.y2

    def argmin_gap(self) -> float:
        return float(self.lams[int(np.argmin(np.abs(self.gap)))])

    def sign_change(self) -> Optional[tuple]:
        """First grid interval on which ``y1 - y2`` changes sign, if any."""
        g = self.gap
        idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]
        return None if idx.size == 0 else (float(self.lams[idx[0]]), float(self.lams[idx[0] + 1]))

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "y1", "y2", "J"])
        for row in zip(self.lams, self.y1, self.y2, self.J):
            w.writerow([repr(float(v)) for v in row])


def lambda_sweep(s: ScenarioSet, ens: PathEnsemble, lams: Sequence[float], *, refine: int = 4,
                 workers: int = 1) -> SweepTable:
    """Costs on a grid of weights, all on the same ensemble."""
    lams = np.asarray(lams, dtype=float)
    if lams.ndim != 1 or lams.size == 0 or np.any((lams < 0) | (lams > 1)):
        raise ValueError("lambda grid must be a non-empty list of values in [0, 1]")

    def one(lam):
        e = evaluate_at_lambda(s, float(lam), ens, refine=refine)
        return e.costs[0].y0, e.costs[1].y0, e.costs[0].stderr, e.costs[1].stderr

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, lams))
    else:
        rows = [one(lam) for lam in lams]
    y1, y2, se1, se2 = (np.array(col) for col in zip(*rows))
    return SweepTable(lams, y1, y2, se1, se2)

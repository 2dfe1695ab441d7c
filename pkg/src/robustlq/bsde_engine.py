"""Recursive costs: exponential weights, linear BSDE representation, LSMC regression."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .scenario_model import GeneralScenario, LQScenario, ScenarioSet
from .sde_engine import ControlPath, PathEnsemble, StatePaths, _check_ensemble, simulate_sde


@dataclass
class ExponentialProcess:
    """``m`` of shape ``(M, N + 1)`` and its deterministic factor ``m_tilde``.

    ``m_tilde`` has shape ``(N + 1,)`` when the ``E`` table is deterministic,
    otherwise ``(M, N + 1)``.
    """

    m: np.ndarray
    m_tilde: np.ndarray


@dataclass
class BsdeValue:
    y0: float
    stderr: float
    method: str
    samples: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {"y0": self.y0, "stderr": self.stderr, "method": self.method}


def _mean_se(samples: np.ndarray):
    samples = np.asarray(samples, dtype=float)
    M = samples.size
    mean = float(np.mean(samples))  # numpy reduces contiguous data pairwise
    se = float(np.std(samples, ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    return mean, se


def combined_se(*values: BsdeValue) -> float:
    return math.sqrt(sum(v.stderr**2 for v in values))


def difference_se(a: BsdeValue, b: BsdeValue) -> float:
    """Standard error of ``a - b`` from paired per-path samples (same ensemble)."""
    if a.samples is None or b.samples is None:
        return combined_se(a, b)
    return _mean_se(a.samples - b.samples)[1]


def _tables(E, F, M, N, d):
    E = np.asarray(E, dtype=float)
    F = np.asarray(F, dtype=float)
    if E.shape not in ((N,), (M, N)):
        raise ValueError(f"E table has shape {E.shape}, expected ({N},) or ({M}, {N})")
    if F.shape == (N,):
        F = F[:, None]
    if F.shape not in ((N, d), (M, N, d)):
        raise ValueError(f"F table has shape {F.shape}, expected ({N},), ({N}, {d}) or ({M}, {N}, {d})")
    return E, F


def exponential_process(E_table, F_table, ens: PathEnsemble) -> ExponentialProcess:
    """Log-Euler solution of ``dm = E m dt + F m dW``, ``m(0) = 1``."""
    M, N, d = ens.M, ens.grid.steps, ens.d
    dt = ens.grid.dt
    E, F = _tables(E_table, F_table, M, N, d)
    Fb = np.broadcast_to(F, (M, N, d))
    logm = np.zeros((M, N + 1))
    incr = (E - 0.5 * np.sum(Fb**2, axis=-1)) * dt + np.einsum("mnd,mnd->mn", Fb, ens.dW)
    np.cumsum(incr, axis=1, out=logm[:, 1:])
    log_tilde = np.zeros(E.shape[:-1] + (N + 1,))
    np.cumsum(E * dt, axis=-1, out=log_tilde[..., 1:])
    return ExponentialProcess(np.exp(logm), np.exp(log_tilde))


def linear_bsde_value(xi, c, E_table, F_table, ens: PathEnsemble,
                      m: Optional[ExponentialProcess] = None) -> BsdeValue:
    """``y(0) = E[m(T) xi + int_0^T m(t) c(t) dt]`` for ``y = xi + int (E y + F z + c) - int z dW``.

    ``xi`` has shape ``(M,)`` and ``c`` shape ``(M, N)``; the running integral
    uses left endpoints.
    """
    M, N = ens.M, ens.grid.steps
    xi = np.asarray(xi, dtype=float)
    c = np.asarray(c, dtype=float)
    if xi.shape != (M,) or c.shape != (M, N):
        raise ValueError(f"terminal {xi.shape} / running {c.shape} do not match ensemble ({M}, {N})")
    mp = exponential_process(E_table, F_table, ens) if m is None else m
    samples = mp.m[:, -1] * xi + np.sum(mp.m[:, :-1] * c, axis=1) * ens.grid.dt
    y0, se = _mean_se(samples)
    return BsdeValue(y0, se, "representation", samples=samples)


# ---------------------------------------------------------------------------
# Least-squares Monte Carlo


def _basis(x: np.ndarray, degree: int, max_basis: int) -> np.ndarray:
    """Polynomial basis ``{1, x_j, x_j x_l}`` on standardized coordinates."""
    M, n = x.shape
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    # coordinates with no spread add only zero columns; ptp is exact where a rounded sd is not
    live = [j for j in range(n) if np.ptp(x[:, j]) > 0]
    xs = (x - mu) / np.where(sd > 0, sd, 1.0)
    cols = [np.ones(M)]
    if degree >= 1:
        cols += [xs[:, j] for j in live]
    if degree >= 2:
        cols += [xs[:, j] * xs[:, l] for a, j in enumerate(live) for l in live[a:]]
    return np.column_stack(cols[:max_basis])


def _regress(Phi: np.ndarray, targets: np.ndarray, warnings: list, step: int,
             ridge: float = 1e-8) -> np.ndarray:
    """Fitted conditional expectations of each column of ``targets``."""
    coef, _, rank, _ = np.linalg.lstsq(Phi, targets, rcond=None)
    if rank < Phi.shape[1]:
        warnings.append(step)
        G = Phi.T @ Phi / len(Phi)
        coef = np.linalg.solve(G + ridge * np.eye(G.shape[0]), Phi.T @ targets / len(Phi))
    return Phi @ coef


def lsmc_bsde_value(s: ScenarioSet, theta: int, x_paths: StatePaths, u: Optional[ControlPath],
                    ens: PathEnsemble, *, degree: int = 2, max_basis: int = 64,
                    tol: float = 1e-12, max_fixed_point: int = 100) -> BsdeValue:
    """Backward regression scheme for the recursive cost of scenario ``theta``.

    ``y_N = phi(x_N)``; then per step ``z_i = E[y_{i+1} dW_i | x_i] / dt`` and
    ``y_i = E[y_{i+1} | x_i] + f(t_i, x_i, y_i, z_i, u_i) dt`` solved by
    fixed-point iteration.  The controls are taken from ``x_paths.u`` unless
    ``u`` is an explicit ``(M, N, k)`` array.
    """
    _check_ensemble(s, ens)
    sc = s.general(theta)
    M, N, dt, d = ens.M, s.grid.steps, s.grid.dt, s.d
    t = s.grid.nodes
    x = x_paths.x
    us = x_paths.u if u is None or not isinstance(u, np.ndarray) else np.broadcast_to(u, (M, N, sc.k))
    ys = np.empty((M, N + 1))
    zs = np.zeros((M, N, d))
    ys[:, N] = sc.phi(x[:, N])
    rank_deficient: list = []
    last = None
    for i in range(N - 1, -1, -1):
        Phi = _basis(x[:, i], degree, max_basis)
        targets = np.column_stack([ys[:, i + 1], ys[:, i + 1, None] * ens.dW[:, i] / dt])
        fitted = _regress(Phi, targets, rank_deficient, i)
        cond, z = fitted[:, 0], fitted[:, 1:]
        zs[:, i] = z
        y = cond.copy()
        for _ in range(max_fixed_point):
            y_new = cond + sc.f(t[i], x[:, i], y, z, us[:, i]) * dt
            done = np.max(np.abs(y_new - y)) <= tol * (1.0 + np.max(np.abs(y_new)))
            y = y_new
            if done:
                break
        ys[:, i] = y
        if i == 0:
            # unprojected one-step values: their spread gives the reported error
            last = ys[:, 1] + sc.f(t[0], x[:, 0], y, z, us[:, 0]) * dt
    warnings = []
    if rank_deficient:
        warnings.append(f"rank-deficient regression at {len(rank_deficient)} step(s) "
                        f"(first: {max(rank_deficient)}); ridge penalty 1e-8 used")
    y0 = float(np.mean(ys[:, 0]))
    se = _mean_se(last)[1]
    return BsdeValue(y0, se, "regression", samples=None, y=ys, z=zs, warnings=warnings)


# ---------------------------------------------------------------------------
# Costs


def lq_cost_terms(sc: LQScenario, x: np.ndarray, u: np.ndarray):
    """Terminal ``1/2 <G x_N, x_N>`` and running ``1/2 [<Lx,x> + 2<Sx,u> + <Ru,u>]``."""
    xN = x[:, -1]
    xi = 0.5 * np.einsum("mi,ij,mj->m", xN, sc.G, xN)
    xs = x[:, :-1]
    c = 0.5 * (np.einsum("mni,nij,mnj->mn", xs, sc.L, xs)
               + 2 * np.einsum("mni,nij,mnj->mn", u, sc.S, xs)
               + np.einsum("mni,nij,mnj->mn", u, sc.R, u))
    return xi, c


def recursive_cost(s: ScenarioSet, theta: int, u: ControlPath, ens: PathEnsemble,
                   x_paths: Optional[StatePaths] = None) -> BsdeValue:
    """Recursive cost ``y_theta(0)`` under control ``u``.

    LQ scenarios use the exact representation; general ones the LSMC solver.
    If ``x_paths`` is given its realized controls are used.
    """
    if x_paths is None:
        x_paths = simulate_sde(s, theta, u, ens)
    sc = s.scenario(theta)
    if isinstance(sc, LQScenario):
        xi, c = lq_cost_terms(sc, x_paths.x, x_paths.u)
        return linear_bsde_value(xi, c, sc.E, s.F, ens)
    return lsmc_bsde_value(s, theta, x_paths, None, ens)


@dataclass
class RobustCost:
    J: float
    theta: int
    weights: np.ndarray
    active: list
    lam_interval: Optional[tuple] = None

    def to_dict(self):
        return {"J": self.J, "theta": self.theta, "weights": self.weights.tolist(),
                "active": self.active, "lambda_interval": self.lam_interval}


def robust_cost(values: Sequence, tol: float = 0.0) -> RobustCost:
    """Worst case over the probability simplex: the largest scenario cost.

    For two scenarios ``lam_interval`` describes the maximizing weights on
    scenario 1: ``(1, 1)``, ``(0, 0)`` or the whole ``(0, 1)`` on a tie.
    """
    ys = np.array([v.y0 if isinstance(v, BsdeValue) else float(v) for v in values])
    if ys.size == 0:
        raise ValueError("need at least one scenario cost")
    J = float(ys.max())
    theta = int(np.argmax(ys)) + 1  # first maximizer: lowest label wins ties
    active = [j + 1 for j in range(ys.size) if ys[j] >= J - tol]
    w = np.zeros(ys.size)
    w[theta - 1] = 1.0
    interval = None
    if ys.size == 2:
        if active == [1, 2]:
            interval = (0.0, 1.0)
        elif active == [1]:
            interval = (1.0, 1.0)
        else:
            interval = (0.0, 0.0)
    return RobustCost(J, theta, w, active, interval)

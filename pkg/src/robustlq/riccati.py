"""Aggregated block system and backward RK4 integration of the matrix Riccati equation.

For mixture weights ``w = (lam, 1 - lam)`` the scenarios are stacked into a
``K n``-dimensional system.  ``P`` solves

    P' + P(A + F C) + (A + F C)^T P + C^T P C + L W
       - (P(B + D F) + W S^T + C^T P D) (R_w + D^T P D)^{-1} ((B + D F)^T P + D^T P C + S W) = 0,
    P(T) = W G,

with ``W = diag(w_theta I_n)``, ``L``, ``G`` block diagonal weighted by the
deterministic discount ``m_theta(t) = exp(int_0^t E_theta)``, ``S = [m_theta S_theta]``
and ``R_w = sum_theta w_theta m_theta R_theta``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve

from .scenario_model import ScenarioError, ScenarioSet, TimeGrid, min_eig, tol_psd

SINGULARITY_FLOOR = 1e-10
BLOWUP = 1e12


class RiccatiError(ArithmeticError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True, eq=False)
class BlockSystem:
    """Stacked coefficients for one weight vector.

    Step tables (leading axis ``N``): ``A, C`` (block diagonal), ``B, D``
    (stacked rows), ``L`` (per-scenario blocks, unweighted), ``S`` and ``R``
    (per scenario), ``E`` (per scenario).  ``m_tilde`` has shape ``(K, N + 1)``.
    """

    grid: TimeGrid
    weights: np.ndarray
    n: int
    k: int
    A: np.ndarray
    C: np.ndarray
    B: np.ndarray
    D: np.ndarray
    F: np.ndarray
    E: np.ndarray
    L_blocks: np.ndarray
    S_blocks: np.ndarray
    R_blocks: np.ndarray
    G_blocks: np.ndarray
    m_tilde: np.ndarray

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def lam(self) -> float:
        return float(self.weights[0])

    @property
    def Lambda(self) -> np.ndarray:
        return np.kron(np.diag(self.weights), np.eye(self.n))

    def discount(self, i: int, s: Optional[float] = None) -> np.ndarray:
        """``m_theta`` at time ``s`` inside step ``i`` (exact for piecewise-constant ``E``)."""
        if s is None:
            return self.m_tilde[:, i]
        i = min(i, self.grid.steps - 1)
        return self.m_tilde[:, i] * np.exp(self.E[:, i] * (s - i * self.grid.dt))

    def coefficients(self, i: int, s: Optional[float] = None):
        """``(L W, S, R_w, W G)``-style weighted blocks at node ``i`` or time ``s`` in step ``i``.

        Returns ``L_tilde, S, R_w`` where ``L_tilde = blockdiag(m L)``,
        ``S = [m S_theta]`` (``k x K n``) and ``R_w = sum w m R``.
        """
        j = min(i, self.grid.steps - 1)
        m = self.discount(i, s)
        L = block_diag(*[m[th] * self.L_blocks[th, j] for th in range(self.K)])
        S = np.concatenate([m[th] * self.S_blocks[th, j] for th in range(self.K)], axis=1)
        R = sum(self.weights[th] * m[th] * self.R_blocks[th, j] for th in range(self.K))
        return L, S, R

    def L_tilde(self, i: int) -> np.ndarray:
        return self.coefficients(i)[0]

    def S(self, i: int) -> np.ndarray:
        return self.coefficients(i)[1]

    def R_lambda(self, i: int) -> np.ndarray:
        return self.coefficients(i)[2]

    @property
    def G_tilde(self) -> np.ndarray:
        mT = self.m_tilde[:, -1]
        return block_diag(*[mT[th] * self.G_blocks[th] for th in range(self.K)])

    @property
    def terminal(self) -> np.ndarray:
        return self.Lambda @ self.G_tilde


def assemble_blocks(s: ScenarioSet, lam: Optional[float] = None,
                    weights: Optional[Sequence[float]] = None) -> BlockSystem:
    """Stack the LQ scenarios of ``s`` for weight ``lam`` on scenario 1.

    With one scenario the weight is 1 and the result is the classical system.
    """
    if not s.is_lq:
        raise ScenarioError("assemble_blocks needs LQ scenarios")
    if weights is None:
        if s.K == 1:
            weights = [1.0]
        elif s.K == 2:
            if lam is None or not 0.0 <= lam <= 1.0:
                raise ValueError(f"lambda must lie in [0, 1], got {lam}")
            weights = [lam, 1.0 - lam]
        else:
            raise ValueError("give explicit weights for more than two scenarios")
    w = np.asarray(weights, dtype=float)
    if w.shape != (s.K,) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-12):
        raise ValueError(f"weights must be a probability vector of length {s.K}")
    st = s.stacked()
    scs = s.scenarios
    E = np.stack([sc.E for sc in scs])
    m_tilde = np.ones((s.K, s.grid.steps + 1))
    m_tilde[:, 1:] = np.exp(np.cumsum(E * s.grid.dt, axis=1))
    return BlockSystem(grid=s.grid, weights=w, n=s.n, k=s.k, A=st.A, C=st.C, B=st.B, D=st.D,
                       F=np.asarray(s.F), E=E,
                       L_blocks=np.stack([sc.L for sc in scs]), S_blocks=np.stack([sc.S for sc in scs]),
                       R_blocks=np.stack([sc.R for sc in scs]), G_blocks=np.stack([sc.G for sc in scs]),
                       m_tilde=m_tilde)


def _sym(P):
    return 0.5 * (P + P.T)


@dataclass
class RiccatiSolution:
    """``P`` at the nodes ``(N + 1, Kn, Kn)`` and gains ``K`` ``(N, k, Kn)`` with ``u = -K x``."""

    P: np.ndarray
    K: np.ndarray
    weights: np.ndarray
    grid: TimeGrid
    min_eig_P: np.ndarray
    min_eig_R: np.ndarray
    refine: int = 4

    @property
    def lam(self) -> float:
        return float(self.weights[0])

    def diagnostics(self) -> dict:
        return {"min_eig_P": float(self.min_eig_P.min()), "min_eig_R": float(self.min_eig_R.min())}


def _stage_tables(blocks: BlockSystem, refine: int) -> dict:
    """Per-step coefficients and the discounted cost blocks at every RK4 stage time.

    Stage ``q`` of step ``i`` sits at ``t_{i+1} - q h / 2``; inside the step
    the discount is ``m(t_i) exp(E_i (s - t_i))``.  Stage ``2 refine`` is the
    node ``t_i`` itself.
    """
    b = blocks
    N, n, dt = b.grid.steps, b.n, b.grid.dt
    h = dt / refine
    wrow = np.repeat(b.weights, n)
    LW = np.stack([block_diag(*b.L_blocks[:, i]) for i in range(N)]) * wrow[None, None, :]
    SW = np.concatenate(list(b.S_blocks), axis=2) * wrow[None, None, :]
    offsets = dt - np.arange(2 * refine + 1) * (h / 2)
    m = b.m_tilde[:, :N].T[:, None, :] * np.exp(offsets[None, :, None] * b.E.T[:, None, :])  # (N, Q, K)
    mrow = np.repeat(m, n, axis=2)
    c = np.ascontiguousarray
    return {
        "AF": c(b.A + b.F[:, None, None] * b.C),
        "BF": c(b.B + b.D * b.F[:, None, None]),
        "C": c(b.C),
        "D": c(b.D),
        "Rw": c(np.einsum("iqk,kiab->iqab", m * b.weights, b.R_blocks)),
        "LW": c(LW[:, None] * mrow[:, :, :, None]),
        "SW": c(SW[:, None] * mrow[:, :, None, :]),
        "time": np.arange(N)[:, None] * dt + offsets[None, :],
    }


@numba.njit(cache=True)
def _rhs(P, AF, BF, C, D, Rw, LW, SW, floor):
    """Reversed-time derivative and the smallest Cholesky pivot of ``R_w + D^T P D``."""
    PD = P @ D
    Rhat = Rw + D.T @ PD
    N_ = BF.T @ P + PD.T @ C + SW
    k = Rhat.shape[0]
    pivot = np.inf
    for a in range(k):
        pivot = min(pivot, Rhat[a, a])
    if k == 1:
        r = Rhat[0, 0]
        if not r >= floor:
            return P, r
        quad = np.outer(N_[0], N_[0]) / r
    else:
        # Cholesky by hand so a failure is reported instead of raised
        L = np.zeros((k, k))
        for a in range(k):
            acc = Rhat[a, a]
            for c in range(a):
                acc -= L[a, c] * L[a, c]
            if not acc >= floor:
                return P, acc
            L[a, a] = np.sqrt(acc)
            pivot = min(pivot, acc)
            for b in range(a + 1, k):
                acc2 = Rhat[b, a]
                for c in range(a):
                    acc2 -= L[b, c] * L[a, c]
                L[b, a] = acc2 / L[a, a]
        half = np.linalg.solve(L, N_)
        quad = half.T @ half
    PA = P @ AF
    out = PA + PA.T + C.T @ P @ C + LW - quad
    return 0.5 * (out + out.T), pivot


@numba.njit(cache=True)
def _rk4_backward(PT, AF, BF, C, D, Rw, LW, SW, refine, h, floor, blowup, symmetrize, Ps):
    """Fill ``Ps`` backward; returns ``(status, step, stage, value)``.

    ``status`` is 0 on success, 1 when ``R_w + D^T P D`` loses definiteness
    and 2 when ``P`` blows up.
    """
    N = AF.shape[0]
    P = PT.copy()
    Ps[N] = P
    for i in range(N - 1, -1, -1):
        for j in range(refine):
            q = 2 * j
            k1, v = _rhs(P, AF[i], BF[i], C[i], D[i], Rw[i, q], LW[i, q], SW[i, q], floor)
            if not v >= floor:
                return 1, i, q, v
            X = P + (h / 2) * k1
            if symmetrize:
                X = 0.5 * (X + X.T)
            k2, v = _rhs(X, AF[i], BF[i], C[i], D[i], Rw[i, q + 1], LW[i, q + 1], SW[i, q + 1], floor)
            if not v >= floor:
                return 1, i, q + 1, v
            X = P + (h / 2) * k2
            if symmetrize:
                X = 0.5 * (X + X.T)
            k3, v = _rhs(X, AF[i], BF[i], C[i], D[i], Rw[i, q + 1], LW[i, q + 1], SW[i, q + 1], floor)
            if not v >= floor:
                return 1, i, q + 1, v
            X = P + h * k3
            if symmetrize:
                X = 0.5 * (X + X.T)
            k4, v = _rhs(X, AF[i], BF[i], C[i], D[i], Rw[i, q + 2], LW[i, q + 2], SW[i, q + 2], floor)
            if not v >= floor:
                return 1, i, q + 2, v
            P = P + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            if symmetrize:
                P = 0.5 * (P + P.T)
        big = 0.0
        for a in range(P.shape[0]):
            for b in range(P.shape[1]):
                if not np.isfinite(P[a, b]):
                    return 2, i, 0, P[a, b]
                big = max(big, abs(P[a, b]))
        if big > blowup:
            return 2, i, 0, big
        Ps[i] = P
    return 0, 0, 0, 0.0


def solve_riccati(blocks: BlockSystem, refine: int = 4, *, symmetrize: bool = True,
                  floor: float = SINGULARITY_FLOOR, blowup: float = BLOWUP) -> RiccatiSolution:
    """Classical RK4 backward from ``P(T) = W G`` with ``refine`` substeps per grid step.

    Substeps never cross a grid node, so piecewise-constant tables are
    integrated without smoothing their jumps.  Raises ``RiccatiError`` with
    the offending time when ``R_w + D^T P D`` falls below ``floor`` or ``P``
    exceeds ``blowup``.
    """
    if refine < 1:
        raise ValueError("refine must be >= 1")
    grid = blocks.grid
    N, dt = grid.steps, grid.dt
    tab = _stage_tables(blocks, refine)
    dim = blocks.K * blocks.n
    Ps = np.empty((N + 1, dim, dim))
    status, i, q, v = _rk4_backward(np.ascontiguousarray(blocks.terminal, dtype=float),
                                    tab["AF"], tab["BF"], tab["C"], tab["D"], tab["Rw"], tab["LW"],
                                    tab["SW"], refine, dt / refine, floor, blowup, symmetrize, Ps)
    if status == 1:
        t = float(tab["time"][i, q])
        raise RiccatiError(f"R_lambda + D^T P D nearly singular (pivot {v:.3g}) at t={t:.6g}", time=t)
    if status == 2:
        raise RiccatiError(f"Riccati solution blew up at t={i * dt:.6g}", time=i * dt)
    node = 2 * refine
    K = np.empty((N, blocks.k, dim))
    min_R = np.empty(N)
    for i in range(N):
        P, D = Ps[i], tab["D"][i]
        Rhat = tab["Rw"][i, node] + D.T @ P @ D
        min_R[i] = min_eig(Rhat)
        if not min_R[i] >= floor:
            raise RiccatiError(f"R_lambda + D^T P D nearly singular (min eig {min_R[i]:.3g}) "
                               f"at t={i * dt:.6g}", time=i * dt)
        N_ = tab["BF"][i].T @ P + D.T @ P @ tab["C"][i] + tab["SW"][i, node]
        K[i] = cho_solve(cho_factor(Rhat), N_)
    min_P = np.linalg.eigvalsh(Ps).min(axis=1)
    return RiccatiSolution(Ps, K, blocks.weights.copy(), grid, min_P, min_R, refine)


def check_h7_aggregate(blocks: BlockSystem) -> dict:
    """Minimum eigenvalue of ``L W - W S^T R_w^{-1} S W`` at every node."""
    W = blocks.Lambda
    mins = np.empty(blocks.grid.steps + 1)
    ok = True
    for i in range(blocks.grid.steps + 1):
        L, S, R = blocks.coefficients(i)
        Q = _sym(L @ W - W @ S.T @ np.linalg.solve(R, S) @ W)
        mins[i] = min_eig(Q)
        ok &= bool(mins[i] >= -tol_psd(Q))
    return {"ok": ok, "min_eig": float(mins.min()), "per_node": mins}


@dataclass
class LipschitzProbe:
    lams: list
    ratios: list
    max_ratio: float
    terminal_ratios: list


def lambda_lipschitz_probe(s: ScenarioSet, lams: Sequence[float], refine: int = 4) -> LipschitzProbe:
    """``max_t |P^a(t) - P^b(t)|_max / |a - b|`` over consecutive weights."""
    lams = sorted(float(v) for v in lams)
    if len(lams) < 3:
        raise ValueError("need at least 3 lambda values")
    Ps = [solve_riccati(assemble_blocks(s, lam), refine).P for lam in lams]
    ratios, term = [], []
    for a in range(len(lams) - 1):
        diff = np.abs(Ps[a + 1] - Ps[a])
        gap = lams[a + 1] - lams[a]
        ratios.append(float(diff.max() / gap))
        term.append(float(diff[-1].max() / gap))
    return LipschitzProbe(lams, ratios, max(ratios), term)


def dump_riccati_csv(sol: RiccatiSolution, fh_P, fh_K=None):
    """Write ``step,row,col,value`` rows for ``P`` (and ``K`` when ``fh_K`` is given)."""
    for arr, fh in ((sol.P, fh_P), (sol.K, fh_K)):
        if fh is None:
            continue
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "row", "col", "value"])
        for i in range(arr.shape[0]):
            for r in range(arr.shape[1]):
                for c in range(arr.shape[2]):
                    w.writerow([i, r, c, repr(float(arr[i, r, c]))])


def riccati_convergence(s: ScenarioSet, levels: Sequence[int], lam: Optional[float] = None, *, refine: int = 1,
                        exact=None):
    """Observed order of the RK4 solver over grid sizes ``levels``.

    The error is the largest entry-wise deviation over the nodes from
    ``exact(t) -> (K n, K n)`` or, without it, from a solve on a grid eight
    times finer than the finest level.
    """
    from .sde_engine import fit_order

    levels = sorted(int(v) for v in levels)
    ref = None
    if exact is None:
        fine = 8 * levels[-1]
        ref_sol = solve_riccati(assemble_blocks(s.regrid(fine), lam), refine)
    dts, errs = [], []
    for N in levels:
        sol = solve_riccati(assemble_blocks(s.regrid(N), lam), refine)
        nodes = sol.grid.nodes
        if exact is not None:
            ref = np.stack([exact(t) for t in nodes])
        else:
            ref = ref_sol.P[:: fine // N]
        dts.append(s.grid.horizon / N / refine)
        errs.append(float(np.abs(sol.P - ref).max()))
    return fit_order(dts, errs)

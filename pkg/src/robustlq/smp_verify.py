"""First-order checks of an LQ control: variations, adjoints, duality, stationarity, directional derivatives.

Adjoint processes are built from a per-scenario linear matrix ODE: under an
affine stacked feedback ``u = -K X + k0`` the pair ``(p, q)`` is affine in the
stacked state, ``p = Pi X + pi`` and ``q = Pi (C X + D u)``.  Working on the
augmented state ``(X, 1)`` folds ``pi`` into ``Pi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .bsde_engine import BsdeValue, _mean_se, combined_se, exponential_process, linear_bsde_value, lq_cost_terms, \
    lsmc_bsde_value
from .riccati import assemble_blocks
from .robust_lq import ClosedLoop, RobustSolution, simulate_closed_loop
from .scenario_model import LQScenario, ScenarioError, ScenarioSet, min_eig, tol_psd
from .sde_engine import (ControlPath, OpenLoopControl, PathEnsemble, StatePaths, as_control, fit_order,
                         simulate_sde, simulate_variational_sde)


# ---------------------------------------------------------------------------
# Hamiltonian


def hamiltonian(s: ScenarioSet, theta: int, i: int, x, y, z, u, u_prime, p, q) -> np.ndarray:
    """``<p, b + sum_j f_{z_j}(u') sigma_j> + sum_j <q_j, sigma_j> + f`` evaluated at step ``i``.

    Batched over the leading axis: ``x (M, n)``, ``y (M,)``, ``z (M, d)``,
    ``u, u_prime (M, k)``, ``p (M, n)``, ``q (M, n, d)``.
    """
    sc = s.general(theta)
    t = s.grid.nodes[i]
    b = sc.b(t, x, u)
    sig = sc.sigma(t, x, u)
    fz = sc.f_z(t, x, y, z, u_prime)
    drift = b + np.einsum("md,mnd->mn", fz, sig)
    return np.einsum("mn,mn->m", p, drift) + np.einsum("mnd,mnd->m", q, sig) + sc.f(t, x, y, z, u)


def hamiltonian_u_gradient(s: ScenarioSet, theta: int, i: int, x, y, z, u, p, q) -> np.ndarray:
    """``d H / d u`` at ``u' = u`` with the ``f_z`` weight frozen, shape ``(M, k)``."""
    sc = s.general(theta)
    t = s.grid.nodes[i]
    bu = sc.b_u(t, x, u)
    su = sc.sigma_u(t, x, u)
    fz = sc.f_z(t, x, y, z, u)
    eff = bu + np.einsum("md,mndk->mnk", fz, su)
    return (np.einsum("mnk,mn->mk", eff, p) + np.einsum("mndk,mnd->mk", su, q)
            + sc.f_u(t, x, y, z, u))


# ---------------------------------------------------------------------------
# Adjoints


@dataclass
class AdjointPaths:
    """``p`` ``(M, N + 1, n)``, ``q`` ``(M, N + 1, n)`` (one noise) and ``m`` ``(M, N + 1)``.

    ``Pi`` holds the deterministic coefficient ``(N + 1, n, K n + 1)`` on the
    augmented stacked state.  ``noise_drift`` ``(M, N, k)`` is the discrete
    counterpart of ``(B + D F)^T p + D^T q`` when the Euler-consistent adjoint
    is used.
    """

    theta: int
    p: np.ndarray
    q: np.ndarray
    m: np.ndarray
    Pi: np.ndarray
    noise_drift: Optional[np.ndarray] = None


def _affine(s: ScenarioSet, gain, offset):
    N, k = s.grid.steps, s.k
    gain = np.asarray(gain, dtype=float)
    if gain.shape != (N, k, s.K * s.n):
        raise ValueError(f"gain has shape {gain.shape}, expected ({N}, {k}, {s.K * s.n})")
    off = np.zeros((N, k)) if offset is None else np.broadcast_to(np.asarray(offset, dtype=float), (N, k))
    return gain, off


def _step_closed_loop(s: ScenarioSet, st, i: int, gain, off):
    """Closed-loop drift and volatility matrices on the augmented state ``(X, 1)`` at step ``i``."""
    dim = s.K * s.n + 1
    Kaug = np.zeros((s.k, dim))
    Kaug[:, :-1] = gain[i]
    Kaug[:, -1] = -off[i]
    Acl = np.zeros((dim, dim))
    Ccl = np.zeros((dim, dim))
    Acl[:-1, :-1] = st.A[i]
    Ccl[:-1, :-1] = st.C[i]
    Acl[:-1] -= st.B[i] @ Kaug
    Ccl[:-1] -= st.D[i] @ Kaug
    return Kaug, Acl, Ccl


def _selector(s: ScenarioSet, theta: int) -> np.ndarray:
    e = np.zeros((s.n, s.K * s.n + 1))
    e[:, (theta - 1) * s.n:theta * s.n] = np.eye(s.n)
    return e


def adjoint_coefficients(s: ScenarioSet, theta: int, gain, offset=None, scheme: str = "discrete"):
    """Coefficient ``Pi`` of ``p = Pi (X, 1)`` for scenario ``theta`` under ``u = -gain X + offset``.

    ``scheme="continuous"`` solves backward
    ``Pi' = -[Pi A_cl + L e - S^T K_aug + M Pi + (F + C^T) Pi C_cl]``,
    ``Pi(T) = G e``, ``M = A^T + E + F C^T``, one matrix exponential per step.

    ``scheme="discrete"`` is the adjoint of the Euler scheme under the
    log-Euler weight ``m``: with ``a_j = E[rho dW^j]`` for the one-step
    weight ``rho``,
    ``Pi_i = sum_j a_j (I + A dt, C)_j^T Pi_{i+1} (I + A_cl dt, C_cl)_j + dt (L e - S^T K_aug)``
    summed over matching noise powers.  It makes the duality identity exact
    for the simulated estimators.  Returns ``(Pi, g)`` where ``g`` is the
    ``(N, k, K n + 1)`` coefficient of ``(B + D F)^T p + D^T q`` in the
    discrete case (``None`` for the continuous one).
    """
    if not s.is_lq:
        raise ScenarioError("adjoint coefficients need LQ scenarios")
    if scheme not in ("discrete", "continuous"):
        raise ValueError(f"unknown adjoint scheme {scheme!r}")
    gain, off = _affine(s, gain, offset)
    st = s.stacked()
    sc = s.scenario(theta)
    N, dt, n = s.grid.steps, s.grid.dt, s.n
    dim = s.K * n + 1
    e = _selector(s, theta)
    Pi = np.empty((N + 1, n, dim))
    Pi[N] = sc.G @ e
    g = np.empty((N, s.k, dim)) if scheme == "discrete" else None
    In, Id = np.eye(n), np.eye(dim)
    for i in range(N - 1, -1, -1):
        Kaug, Acl, Ccl = _step_closed_loop(s, st, i, gain, off)
        F, E = s.F[i], sc.E[i]
        force = sc.L[i] @ e - sc.S[i].T @ Kaug
        Pn = Pi[i + 1]
        if scheme == "discrete":
            a0 = math.exp(E * dt)
            a1 = a0 * F * dt
            a2 = a0 * (dt + F * F * dt * dt)
            U = Id + Acl * dt
            Px = In + sc.A[i] * dt
            Cx = sc.C[i]
            Pi[i] = (a0 * Px.T @ Pn @ U + a1 * (Px.T @ Pn @ Ccl + Cx.T @ Pn @ U)
                     + a2 * Cx.T @ Pn @ Ccl + dt * force)
            B, D = sc.B[i], sc.D[i]
            g[i] = (a0 * dt * B.T @ Pn @ U + a1 * (dt * B.T @ Pn @ Ccl + D.T @ Pn @ U)
                    + a2 * D.T @ Pn @ Ccl) / dt
        else:
            M = sc.A[i].T + E * In + F * sc.C[i].T
            Nn = F * In + sc.C[i].T
            # row-major vec: vec(X Y Z) = (X kron Z^T) vec(Y)
            lin = np.kron(In, Acl.T) + np.kron(M, Id) + np.kron(Nn, Ccl.T)
            gen = np.zeros((n * dim + 1, n * dim + 1))
            gen[:-1, :-1] = lin
            gen[:-1, -1] = force.reshape(-1)
            # reversed time: d vec(Pi) / d(-t) = gen (vec(Pi), 1)
            state = expm(gen * dt) @ np.append(Pn.reshape(-1), 1.0)
            Pi[i] = state[:-1].reshape(n, dim)
    return Pi, g


def adjoint_paths(s: ScenarioSet, theta: int, loop: ClosedLoop, ens: PathEnsemble,
                  gain=None, offset=None, scheme: str = "discrete") -> AdjointPaths:
    """``(p, q, m)`` along the closed-loop paths of ``loop``.

    ``q = Pi (C X + D u)`` on the step nodes; the last node repeats the
    previous value.
    """
    gain = loop.gain if gain is None else gain
    offset = loop.offset if offset is None else offset
    Pi, g = adjoint_coefficients(s, theta, gain, offset, scheme)
    st = s.stacked()
    M_, N = loop.x.shape[0], s.grid.steps
    Xa = np.concatenate([loop.x, np.ones((M_, N + 1, 1))], axis=2)
    p = np.einsum("nij,mnj->mni", Pi, Xa)
    q = np.zeros_like(p)
    vol = np.einsum("nij,mnj->mni", st.C, loop.x[:, :-1]) + np.einsum("nij,mnj->mni", st.D, loop.u)
    q[:, :-1] = np.einsum("nij,mnj->mni", Pi[:-1, :, :-1], vol)
    q[:, -1] = q[:, -2]
    m = exponential_process(s.scenario(theta).E, s.F, ens).m
    adj = AdjointPaths(theta, p, q, m, Pi)
    if g is not None:
        adj.noise_drift = np.einsum("nkj,mnj->mnk", g, Xa[:, :-1])
    return adj


def riccati_consistency(s: ScenarioSet, sol: RobustSolution) -> float:
    """Max deviation between ``[w_theta m_theta Pi_theta]`` stacked and the Riccati ``P``."""
    blocks = assemble_blocks(s, sol.lam_star)
    n = s.n
    worst = 0.0
    for th in range(1, s.K + 1):
        Pi, _ = adjoint_coefficients(s, th, sol.riccati.K, scheme="continuous")
        w = blocks.weights[th - 1]
        scaled = w * blocks.m_tilde[th - 1][:, None, None] * Pi[:, :, :-1]
        ref = sol.riccati.P[:, (th - 1) * n:th * n, :]
        worst = max(worst, float(np.abs(scaled - ref).max()))
    return worst


def u_gradient_lq(s: ScenarioSet, theta: int, x: np.ndarray, u: np.ndarray, adj: AdjointPaths) -> np.ndarray:
    """``(B + D F)^T p + D^T q + S x + R u`` on the step nodes, shape ``(M, N, k)``."""
    sc = s.scenario(theta)
    if adj.noise_drift is not None:
        head = adj.noise_drift
    else:
        BF = sc.B + sc.D * s.F[:, None, None]
        p, q = adj.p[:, :-1], adj.q[:, :-1]
        head = np.einsum("nij,mni->mnj", BF, p) + np.einsum("nij,mni->mnj", sc.D, q)
    return head + np.einsum("nij,mnj->mni", sc.S, x[:, :-1]) + np.einsum("nij,mnj->mni", sc.R, u)


# ---------------------------------------------------------------------------
# Variations


@dataclass
class VariationalPaths:
    """``xhat`` ``(M, N + 1, n)``, the first-order cost ``yhat`` and the direction used."""

    theta: int
    xhat: np.ndarray
    yhat: BsdeValue
    direction: np.ndarray


def _direction_values(direction: ControlPath, base: StatePaths, grid) -> np.ndarray:
    ctrl = as_control(direction)
    M, N, k = base.u.shape
    t = grid.nodes
    return np.stack([np.broadcast_to(ctrl.value(i, t[i], base.x[:, i]), (M, k)) for i in range(N)], axis=1)


def _base_paths(s, theta, ubar, ens) -> StatePaths:
    if isinstance(ubar, StatePaths):
        return ubar
    return simulate_sde(s, theta, ubar, ens)


def variational_value(s: ScenarioSet, theta: int, ubar, direction: ControlPath,
                      ens: PathEnsemble) -> VariationalPaths:
    """First-order variation ``(xhat, yhat(0))`` of scenario ``theta`` at ``ubar`` along ``direction``.

    ``ubar`` is either the realized base ``StatePaths`` of scenario ``theta``
    or a control to simulate it with.
    """
    base = _base_paths(s, theta, ubar, ens)
    dirs = _direction_values(direction, base, s.grid)
    var = simulate_variational_sde(s, theta, None, OpenLoopControl(dirs), base, ens)
    xh = var.x
    sc = s.scenario(theta)
    if isinstance(sc, LQScenario):
        x, u = base.x, base.u
        xi = np.einsum("mi,ij,mj->m", x[:, -1], sc.G, xh[:, -1])
        fx = np.einsum("nij,mnj->mni", sc.L, x[:, :-1]) + np.einsum("nji,mnj->mni", sc.S, u)
        fu = np.einsum("nij,mnj->mni", sc.S, x[:, :-1]) + np.einsum("nij,mnj->mni", sc.R, u)
        c = np.einsum("mni,mni->mn", fx, xh[:, :-1]) + np.einsum("mni,mni->mn", fu, dirs)
        yhat = linear_bsde_value(xi, c, sc.E, s.F, ens)
    else:
        g = s.general(theta)
        t = s.grid.nodes
        lsmc = lsmc_bsde_value(s, theta, base, None, ens)
        y, z = lsmc.y, lsmc.z
        N = s.grid.steps
        E = np.empty((ens.M, N))
        F = np.empty((ens.M, N, s.d))
        c = np.empty((ens.M, N))
        for i in range(N):
            args = (t[i], base.x[:, i], y[:, i], z[:, i], base.u[:, i])
            E[:, i] = g.f_y(*args)
            F[:, i] = g.f_z(*args)
            c[:, i] = (np.einsum("mi,mi->m", g.f_x(*args), xh[:, i])
                       + np.einsum("mi,mi->m", g.f_u(*args), dirs[:, i]))
        xi = np.einsum("mi,mi->m", g.phi_x(base.x[:, -1]), xh[:, -1])
        yhat = linear_bsde_value(xi, c, E, F, ens)
    return VariationalPaths(theta, xh, yhat, dirs)


@dataclass
class DualityGap:
    theta: int
    yhat: BsdeValue
    functional: BsdeValue
    gap: float
    combined_se: float
    paired_se: float

    def to_dict(self):
        return {"theta": self.theta, "yhat": self.yhat.y0, "functional": self.functional.y0, "gap": self.gap,
                "combined_se": self.combined_se, "paired_se": self.paired_se}


def duality_gap(s: ScenarioSet, theta: int, loop: ClosedLoop, direction: ControlPath,
                ens: PathEnsemble, scheme: str = "discrete") -> DualityGap:
    """Compare ``yhat_theta(0)`` with ``E[int m <d_u H, dir> dt]`` on the same paths.

    ``loop`` is a stacked closed loop under an affine feedback (optimal or
    not); its gain and offset define the adjoint.
    """
    if not s.is_lq:
        raise ScenarioError("duality_gap supports LQ scenarios only")
    base = loop.paths(theta)
    var = variational_value(s, theta, base, direction, ens)
    adj = adjoint_paths(s, theta, loop, ens, scheme=scheme)
    grad = u_gradient_lq(s, theta, base.x, base.u, adj)
    integrand = adj.m[:, :-1] * np.einsum("mnk,mnk->mn", grad, var.direction)
    samples = integrand.sum(axis=1) * s.grid.dt
    y0, se = _mean_se(samples)
    func = BsdeValue(y0, se, "duality", samples=samples)
    paired = _mean_se(samples - var.yhat.samples)[1]
    return DualityGap(theta, var.yhat, func, abs(y0 - var.yhat.y0), combined_se(var.yhat, func), paired)


# ---------------------------------------------------------------------------
# Stationarity


@dataclass
class Residual:
    max: float
    rms: float
    mean_abs_x: float

    def to_dict(self):
        return {"max": self.max, "rms": self.rms, "mean_abs_x": self.mean_abs_x}


def stationarity_residual(s: ScenarioSet, sol: RobustSolution, ens: PathEnsemble,
                          gain: Optional[np.ndarray] = None, loop: Optional[ClosedLoop] = None) -> Residual:
    """Aggregated first-order condition along the closed loop, normalized by ``1 + |X|``.

    ``r = (B + D F)^T P X + D^T (P C X + P D u) + S W X + R_w u`` with the
    control ``u = -gain X`` (the solved gain unless ``gain`` is given).
    """
    blocks = assemble_blocks(s, sol.lam_star)
    K = sol.riccati.K if gain is None else np.asarray(gain, dtype=float)
    if loop is None:
        loop = sol.closed_loop if sol.closed_loop is not None and gain is None else simulate_closed_loop(s, K, ens)
    W = blocks.Lambda
    P = sol.riccati.P
    N = s.grid.steps
    num = np.empty((ens.M, N))
    for i in range(N):
        _, S, R = blocks.coefficients(i)
        B, C, D, F = blocks.B[i], blocks.C[i], blocks.D[i], blocks.F[i]
        X = loop.x[:, i]
        u = loop.u[:, i]
        r = (X @ (P[i] @ (B + D * F)) + (X @ (P[i] @ C).T + u @ (P[i] @ D).T) @ D
             + X @ (S @ W).T + u @ R.T)
        num[:, i] = np.linalg.norm(r, axis=1) / (1.0 + np.linalg.norm(X, axis=1))
    xs = np.linalg.norm(loop.x[:, :-1], axis=2)
    return Residual(float(num.max()), float(np.sqrt(np.mean(num**2))), float(xs.mean()))


# ---------------------------------------------------------------------------
# Perturbations


def _open_loop_costs(s: ScenarioSet, u: np.ndarray, ens: PathEnsemble):
    """Per-scenario costs and state paths under the open-loop control array ``u``."""
    out, paths = [], []
    for th in range(1, s.K + 1):
        sp = simulate_sde(s, th, OpenLoopControl(u), ens)
        sc = s.scenario(th)
        xi, c = lq_cost_terms(sc, sp.x, sp.u)
        out.append(linear_bsde_value(xi, c, sc.E, s.F, ens))
        paths.append(sp)
    return out, paths


@dataclass
class DirectionalDerivative:
    rhos: list
    quotients: list
    quotient_se: list
    mixture_prediction: float
    active_prediction: float
    yhat: list
    active: list
    weights: list
    scale: float

    @property
    def smallest(self) -> float:
        return self.quotients[-1]

    def to_dict(self):
        return {"rhos": self.rhos, "quotients": self.quotients, "quotient_se": self.quotient_se,
                "mixture_prediction": self.mixture_prediction, "active_prediction": self.active_prediction,
                "yhat": self.yhat, "active": self.active}


def robust_directional_derivative(s: ScenarioSet, sol: RobustSolution, direction: ControlPath,
                                  rhos: Sequence[float], ens: PathEnsemble,
                                  loop: Optional[ClosedLoop] = None) -> DirectionalDerivative:
    """Difference quotients of the worst-case cost along ``direction`` from the solved control.

    The realized closed-loop control is frozen per path and perturbed
    open-loop.  Two limits are predicted: the solved mixture
    ``sum_theta w_theta yhat_theta(0)`` and the maximum of ``yhat_theta(0)``
    over the scenarios active at the solution.
    """
    rhos = [float(r) for r in rhos]
    if loop is None:
        loop = sol.closed_loop if sol.closed_loop is not None else simulate_closed_loop(s, sol.riccati.K, ens)
    ubar = np.array(loop.u)
    base_costs, base_paths = _open_loop_costs(s, ubar, ens)
    dirs = _direction_values(direction, base_paths[0], s.grid)
    J0 = max(c.y0 for c in base_costs)
    quotients, ses = [], []
    for rho in rhos:
        costs, _ = _open_loop_costs(s, ubar + rho * dirs, ens)
        quotients.append((max(c.y0 for c in costs) - J0) / rho)
        ses.append(max(_mean_se((c.samples - b.samples) / rho)[1] for c, b in zip(costs, base_costs)))
    yhat = [variational_value(s, th, base_paths[th - 1], OpenLoopControl(dirs), ens).yhat
            for th in range(1, s.K + 1)]
    w = np.array([sol.lam_star, 1.0 - sol.lam_star]) if s.K == 2 else np.ones(1)
    mixture = float(sum(wi * v.y0 for wi, v in zip(w, yhat)))
    ys = [c.y0 for c in base_costs]
    if sol.branch == "interior":
        active = [th for th in range(1, s.K + 1) if ys[th - 1] >= J0 - sol.tol_gap]
    else:
        active = [2] if sol.branch == "corner-0" else [1]
    active_pred = float(max(yhat[th - 1].y0 for th in active))
    scale = max(abs(v) for v in ys) or 1.0
    return DirectionalDerivative(rhos, quotients, ses, mixture, active_pred, [v.y0 for v in yhat], active,
                                 w.tolist(), scale)


@dataclass
class ExpansionFit:
    rhos: list
    state_errors: list
    cost_errors: list
    errors: list
    slope: object

    def to_dict(self):
        return {"rhos": self.rhos, "state_errors": self.state_errors, "cost_errors": self.cost_errors,
                "slope": self.slope}


def first_order_expansion(s: ScenarioSet, ubar: np.ndarray, direction: ControlPath, rhos: Sequence[float],
                          ens: PathEnsemble) -> ExpansionFit:
    """Remainders ``E sup_t |x^rho - x - rho xhat| / rho`` and ``|y^rho - y - rho yhat| / rho``.

    Both are maximized over scenarios; the slope is fitted in ``rho``.
    """
    rhos = [float(r) for r in rhos]
    ubar = np.asarray(ubar, dtype=float)
    base_costs, base_paths = _open_loop_costs(s, ubar, ens)
    dirs = _direction_values(direction, base_paths[0], s.grid)
    var = [variational_value(s, th, base_paths[th - 1], OpenLoopControl(dirs), ens) for th in range(1, s.K + 1)]
    st_err, y_err = [], []
    for rho in rhos:
        costs, paths = _open_loop_costs(s, ubar + rho * dirs, ens)
        se, ye = 0.0, 0.0
        for th in range(s.K):
            dx = paths[th].x - base_paths[th].x - rho * var[th].xhat
            se = max(se, float(np.linalg.norm(dx, axis=2).max(axis=1).mean()) / rho)
            ye = max(ye, abs(costs[th].y0 - base_costs[th].y0 - rho * var[th].yhat.y0) / rho)
        st_err.append(se)
        y_err.append(ye)
    errs = [max(a, b) for a, b in zip(st_err, y_err)]
    fit = fit_order(rhos, errs)
    return ExpansionFit(rhos, st_err, y_err, errs, fit.order)


# ---------------------------------------------------------------------------
# Convexity


@dataclass
class ConvexityReport:
    ok: bool
    hessian_min_eig: list
    G_min_eig: list

    def to_dict(self):
        return {"ok": self.ok, "hessian_min_eig": self.hessian_min_eig, "G_min_eig": self.G_min_eig,
                "label": "LQ-specialized"}


def check_sufficient_condition(s: ScenarioSet) -> ConvexityReport:
    """Joint convexity in ``(x, u)`` of each running cost and convexity of each terminal cost."""
    if not s.is_lq:
        raise ScenarioError("the convexity check is specialized to LQ scenarios")
    ok = True
    hess, gmin = [], []
    for sc in s.scenarios:
        H = np.concatenate([np.concatenate([sc.L, np.swapaxes(sc.S, 1, 2)], axis=2),
                            np.concatenate([sc.S, sc.R], axis=2)], axis=1)
        ev = float(np.linalg.eigvalsh(H).min())
        g = min_eig(sc.G)
        ok &= ev >= -max(tol_psd(h) for h in H) and g >= -tol_psd(sc.G)
        hess.append(ev)
        gmin.append(g)
    return ConvexityReport(bool(ok), hess, gmin)


# ---------------------------------------------------------------------------
# Report


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance, "pass": self.passed,
                "details": self.details}


def random_directions(s: ScenarioSet, count: int, seed: int) -> list:
    """Deterministic open-loop directions ``(N, k)``: smooth random combinations of low modes."""
    rng = np.random.default_rng(seed)
    t = s.grid.nodes[:-1] / s.grid.horizon
    out = []
    for _ in range(count):
        a = rng.standard_normal((3, s.k))
        out.append(a[0] + np.outer(np.sin(np.pi * t), a[1]) + np.outer(np.cos(np.pi * t), a[2]))
    return out


def verify_solution(s: ScenarioSet, sol: RobustSolution, ens: PathEnsemble, *, directions: int = 3,
                    seed: int = 0, rhos=(1e-1, 1e-2, 1e-3)) -> list:
    """Run the first-order checks on a solved instance; one ``Check`` per item."""
    loop = sol.closed_loop if sol.closed_loop is not None else simulate_closed_loop(s, sol.riccati.K, ens)
    checks = []
    res = stationarity_residual(s, sol, ens, loop=loop)
    checks.append(Check("stationarity_residual", res.max, 1e-8, res.max <= 1e-8, res.to_dict()))
    cons = riccati_consistency(s, sol)
    # the adjoint is the Euler-consistent discrete one, so it matches P only to O(dt)
    tol_cons = 10.0 * s.grid.dt * max(1.0, float(np.abs(sol.riccati.P).max()))
    checks.append(Check("adjoint_riccati_consistency", cons, tol_cons, cons <= tol_cons, {"dt": s.grid.dt}))
    conv = check_sufficient_condition(s)
    checks.append(Check("sufficient_condition", min(conv.hessian_min_eig + conv.G_min_eig), 0.0, conv.ok,
                        conv.to_dict()))
    for j, d in enumerate(random_directions(s, directions, seed)):
        for th in range(1, s.K + 1):
            dg = duality_gap(s, th, loop, d, ens)
            tol = 3.0 * dg.combined_se + 1e-10 * (1.0 + abs(dg.yhat.y0))
            checks.append(Check(f"duality[dir={j},theta={th}]", dg.gap, tol, dg.gap <= tol, dg.to_dict()))
        dd = robust_directional_derivative(s, sol, d, rhos, ens, loop=loop)
        tol = max(3.0 * dd.quotient_se[-1], 1e-3 * dd.scale)
        checks.append(Check(f"directional_derivative_nonnegative[dir={j}]", dd.smallest, -tol,
                            dd.smallest >= -tol, dd.to_dict()))
    return checks

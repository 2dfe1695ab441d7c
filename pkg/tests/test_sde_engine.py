import io
import math

import numpy as np
import pytest

from robustlq import (GeneralScenario, LQScenario, OpenLoopControl, ScenarioError, ScenarioSet, TimeGrid,
                      generate_paths, simulate_sde, simulate_variational_sde, strong_convergence_order)
from robustlq.sde_engine import (AffineFeedback, CapacityError, SimulationError, StatePaths, _path_normals,
                                 dump_paths_csv, fit_order, zero_control)


def lq_set(steps=100, horizon=1.0, x0=1.0, **coeffs):
    return ScenarioSet((LQScenario.constant(steps, **coeffs),), [x0], TimeGrid(horizon, steps))


def scalar_general(b, sigma, b_x=None, b_u=None):
    zero = lambda *a: np.zeros(len(a[1]))
    return GeneralScenario(
        n=1, k=1, d=1, b=b, sigma=sigma, f=zero, phi=lambda x: np.zeros(len(x)),
        b_x=b_x, b_u=b_u,
        sigma_x=lambda t, x, u: np.zeros((len(x), 1, 1, 1)),
        sigma_u=lambda t, x, u: np.zeros((len(x), 1, 1, 1)))


def test_same_seed_same_increment():
    # grids need two steps, so a single draw is taken from the per-path stream directly
    a, b = _path_normals(7, 0, 1), _path_normals(7, 0, 1)
    assert a.shape == (1,)
    assert a[0] == b[0]
    ens = generate_paths(TimeGrid(1.0, 2), 1, 1, seed=7)
    assert ens.dW[0, 0, 0] == a[0] * math.sqrt(0.5)


def test_one_step_grid_is_rejected():
    with pytest.raises(ScenarioError):
        TimeGrid(1.0, 1)


def test_different_seeds_differ():
    g = TimeGrid(1.0, 10)
    assert not np.array_equal(generate_paths(g, 1, 5, seed=1).dW, generate_paths(g, 1, 5, seed=2).dW)


def test_paths_do_not_depend_on_ensemble_size_or_workers():
    g = TimeGrid(1.0, 20)
    big = generate_paths(g, 2, 64, seed=3, workers=4)
    small = generate_paths(g, 2, 10, seed=3)
    assert np.array_equal(big.dW[:10], small.dW)


def test_increment_moments():
    g = TimeGrid(1.0, 4)
    dW = generate_paths(g, 2, 20_000, seed=11).dW.reshape(-1)
    M = dW.size
    assert abs(dW.mean()) <= 5 * math.sqrt(g.dt / M)
    var_se = g.dt * math.sqrt(2.0 / (M - 1))
    assert abs(dW.var(ddof=1) - g.dt) <= 5 * var_se


def test_capacity_error_before_allocation():
    with pytest.raises(CapacityError):
        generate_paths(TimeGrid(1.0, 1000), 1, 10**6, seed=0, memory_budget=1024)


def test_ensemble_is_read_only():
    ens = generate_paths(TimeGrid(1.0, 2), 1, 2, seed=0)
    with pytest.raises(ValueError):
        ens.dW[0, 0, 0] = 1.0


def test_coarsen_sums_increments():
    ens = generate_paths(TimeGrid(1.0, 8), 1, 3, seed=0)
    c = ens.coarsen(4)
    assert c.grid.steps == 2
    assert np.allclose(c.dW[:, 0], ens.dW[:, :4].sum(axis=1))
    with pytest.raises(ValueError):
        ens.coarsen(3)


def test_frozen_dynamics_stay_at_x0():
    s = lq_set(steps=10, x0=2.5)
    x = simulate_sde(s, 1, zero_control(1), generate_paths(s.grid, 1, 4, seed=0)).x
    assert np.all(x == 2.5)


def test_linear_ode_reaches_exponential():
    s = lq_set(steps=10_000, A=1.0)
    x = simulate_sde(s, 1, zero_control(1), generate_paths(s.grid, 1, 1, seed=0)).x
    assert abs(x[0, -1, 0] - math.e) / math.e <= 1e-3


def test_brownian_marginal():
    s = lq_set(steps=10, x0=0.0, D=1.0)
    ens = generate_paths(s.grid, 1, 100_000, seed=5)
    x = simulate_sde(s, 1, OpenLoopControl(np.ones((10, 1))), ens).x[:, -1, 0]
    M = x.size
    assert abs(x.mean()) <= 3 * math.sqrt(1.0 / M)
    assert abs(x.var(ddof=1) - 1.0) <= 3 * math.sqrt(2.0 / (M - 1))


def test_controls_are_recorded():
    s = lq_set(steps=5, B=1.0)
    ens = generate_paths(s.grid, 1, 3, seed=0)
    out = simulate_sde(s, 1, AffineFeedback(np.full((5, 1, 1), -2.0), None), ens)
    assert np.allclose(out.u[:, :, 0], -2.0 * out.x[:, :-1, 0])


def test_overflow_names_path_and_step():
    s = lq_set(steps=50, A=2000.0)
    with pytest.raises(SimulationError) as err:
        simulate_sde(s, 1, zero_control(1), generate_paths(s.grid, 1, 2, seed=0))
    assert err.value.path == 0
    assert "step" in str(err.value)


def test_grid_mismatch_is_rejected():
    s = lq_set(steps=10)
    with pytest.raises(ValueError):
        simulate_sde(s, 1, zero_control(1), generate_paths(TimeGrid(1.0, 20), 1, 2, seed=0))


def test_general_matches_lq_path_for_path():
    s = lq_set(steps=20, A=0.3, B=1.0, C=0.2, D=0.1)
    gs = ScenarioSet((s.general(1),), s.x0, s.grid)
    ens = generate_paths(s.grid, 1, 50, seed=1)
    u = OpenLoopControl(np.linspace(0, 1, 20)[:, None])
    assert np.allclose(simulate_sde(s, 1, u, ens).x, simulate_sde(gs, 1, u, ens).x, atol=1e-13)


def test_variational_zero_direction_is_zero():
    s = lq_set(steps=20, A=0.3, B=1.0, C=0.2, D=0.4)
    ens = generate_paths(s.grid, 1, 10, seed=0)
    base = simulate_sde(s, 1, zero_control(1), ens)
    xh = simulate_variational_sde(s, 1, None, OpenLoopControl(np.zeros((20, 1))), base, ens).x
    assert np.all(xh == 0.0)


def test_variational_of_quadratic_drift_is_time():
    sc = scalar_general(b=lambda t, x, u: x**2 + u, sigma=lambda t, x, u: np.zeros((len(x), 1, 1)),
                        b_x=lambda t, x, u: (2 * x)[:, :, None], b_u=lambda t, x, u: np.ones((len(x), 1, 1)))
    s = ScenarioSet((sc,), [0.0], TimeGrid(1.0, 16))
    ens = generate_paths(s.grid, 1, 3, seed=0)
    base = simulate_sde(s, 1, zero_control(1), ens)
    assert np.all(base.x == 0.0)
    xh = simulate_variational_sde(s, 1, None, OpenLoopControl(np.ones((16, 1))), base, ens).x
    assert np.allclose(xh[:, :, 0], s.grid.nodes[None, :], rtol=0, atol=1e-15)


def test_fit_order_needs_three_levels():
    with pytest.raises(ValueError):
        fit_order([0.1, 0.05], [1.0, 0.5])
    with pytest.raises(ValueError):
        strong_convergence_order(lq_set(), [10, 20])


def test_zero_dynamics_report_exact_order():
    fit = strong_convergence_order(lq_set(x0=1.0), [10, 20, 40, 80], M=20)
    assert fit.exact
    assert fit.to_dict()["order"] == "exact"


def test_geometric_sde_strong_order_half():
    s = lq_set(A=1.0, C=1.0)

    def exact(ens):
        W = ens.W()[:, -1, 0]
        return (np.exp(0.5 + W))[:, None]

    fit = strong_convergence_order(s, [16, 32, 64, 128, 256], M=4000, seed=1, reference=exact)
    assert 0.35 <= fit.order <= 0.65


def test_ode_order_one():
    s = lq_set(A=1.0)
    fit = strong_convergence_order(s, [16, 32, 64, 128], M=2, reference=lambda ens: np.full((ens.M, 1), math.e))
    assert 0.9 <= fit.order <= 1.1


def test_path_dump_rows():
    x = np.arange(12.0).reshape(2, 3, 2)
    fh = io.StringIO()
    dump_paths_csv(StatePaths(x, np.zeros((2, 2, 1))), fh, max_paths=1)
    rows = fh.getvalue().splitlines()
    assert rows[0] == "path,step,component,value"
    assert len(rows) == 1 + 3 * 2
    assert rows[-1] == "0,2,1,5.0"

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustlq import (GeneralScenario, LQScenario, ScenarioError, ScenarioSet, TimeGrid, random_lq_set,
                      validate_derivatives, validate_h6, validate_h7)
from robustlq.scenario_model import lq_as_general, min_eig

from conftest import scalar_oracle


def test_time_grid_nodes_and_index():
    g = TimeGrid(2.0, 8)
    assert g.dt == 0.25
    assert g.nodes[-1] == 2.0
    assert g.step_index(0.0) == 0
    assert g.step_index(0.25) == 1
    assert g.step_index(1.999) == 7


def test_constant_scalar_fills_block():
    sc = LQScenario.constant(3, n=2, k=1, A=0.5, R=2.0)
    assert sc.A.shape == (3, 2, 2)
    assert np.all(sc.A == 0.5)
    assert np.all(sc.C == 0.0)
    assert sc.G.shape == (2, 2)


def test_constant_rejects_unknown_coefficient():
    with pytest.raises(ScenarioError):
        LQScenario.constant(3, Q=1.0)


def test_asymmetric_tables_are_symmetrized_with_warning():
    L = np.array([[1.0, 0.2], [0.0, 1.0]])
    sc = LQScenario.constant(2, n=2, L=L)
    assert np.allclose(sc.L[0], sc.L[0].T)
    assert any("L symmetrized" in w for w in sc.warnings)


def test_tables_are_read_only():
    sc = LQScenario.constant(2)
    with pytest.raises(ValueError):
        sc.A[0, 0, 0] = 1.0


def test_set_rejects_mismatched_dimensions():
    a = LQScenario.constant(4, n=1)
    b = LQScenario.constant(4, n=2)
    with pytest.raises(ScenarioError):
        ScenarioSet((a, b), [0.0], TimeGrid(1.0, 4))
    with pytest.raises(ScenarioError):
        ScenarioSet((a,), [0.0, 1.0], TimeGrid(1.0, 4))
    with pytest.raises(ScenarioError):
        ScenarioSet((a,), [0.0], TimeGrid(1.0, 5))


def test_theta_labels_are_one_based():
    s = scalar_oracle(G=(1.0, 2.0))
    assert s.scenario(2).G[0, 0] == 2.0
    with pytest.raises(ScenarioError):
        s.scenario(0)


def test_swapped_reverses_labels():
    s = scalar_oracle(G=(1.0, 2.0))
    assert s.swapped().scenario(1).G[0, 0] == 2.0


def test_regrid_keeps_piecewise_constant_values():
    grid = TimeGrid(1.0, 4)
    A = np.arange(4.0).reshape(4, 1, 1)
    sc = LQScenario.constant(4).replace(A=A)
    s = ScenarioSet((sc,), [0.0], grid).regrid(8)
    assert s.scenario(1).A[:, 0, 0].tolist() == [0, 0, 1, 1, 2, 2, 3, 3]


def test_stacked_is_block_diagonal():
    s = scalar_oracle(G=(1.0, 2.0))
    st_ = s.stacked()
    assert st_.A.shape == (400, 2, 2)
    assert st_.B[0].ravel().tolist() == [1.0, 1.0]


def test_h6_flags_non_finite_entries():
    A = np.zeros((4, 1, 1))
    A[2] = np.inf
    sc = LQScenario.constant(4, R=1.0).replace(A=A)
    rep = validate_h6(ScenarioSet((sc,), [0.0], TimeGrid(1.0, 4)))
    assert not rep.ok
    assert "step 2" in rep.failures[0]


def test_h7_margins_on_oracle():
    rep = validate_h7(scalar_oracle(), 1e-8)
    assert rep.ok
    assert rep.margins["G"] == 1.0
    assert math.isclose(rep.margins["R"], 1.0 - 1e-8)


def test_h7_rejects_singular_r_and_indefinite_g():
    s = ScenarioSet((LQScenario.constant(4, R=0.0, G=-1.0),), [0.0], TimeGrid(1.0, 4))
    rep = validate_h7(s, 1e-8)
    assert not rep.ok
    assert any("G not positive semidefinite" in f for f in rep.failures)
    assert any("R singular" in f for f in rep.failures)


def test_h7_rejects_cross_term_too_large():
    s = ScenarioSet((LQScenario.constant(4, L=0.0, S=1.0, R=1.0),), [0.0], TimeGrid(1.0, 4))
    rep = validate_h7(s, 1e-8)
    assert not rep.ok
    assert any("L - S^T R^-1 S" in f for f in rep.failures)


def test_h7_requires_positive_delta():
    with pytest.raises(ValueError):
        validate_h7(scalar_oracle(), 0.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 3), k=st.integers(1, 2))
def test_random_sets_pass_both_validators(seed, n, k):
    s = random_lq_set(seed, n, k, steps=20)
    assert validate_h6(s).ok
    assert validate_h7(s, 1e-8).ok


def test_random_sets_are_reproducible():
    a, b = random_lq_set(5, 2, 2), random_lq_set(5, 2, 2)
    for sa, sb in zip(a.scenarios, b.scenarios):
        for name, tab in sa.tables().items():
            assert np.array_equal(tab, sb.tables()[name])


def test_lq_derivatives_agree_with_finite_differences():
    s = random_lq_set(3, 2, 2, steps=10)
    rep = validate_derivatives(s.general(1), probes=5, seed=0)
    assert rep.ok, rep.failures
    assert rep.details["max_error"] < 1e-6


def test_wrong_derivative_is_reported():
    g = lq_as_general(LQScenario.constant(4, A=2.0, B=1.0, R=1.0), np.zeros(4), TimeGrid(1.0, 4))
    bad = GeneralScenario(**{**g.__dict__, "b_x": lambda t, x, u: np.zeros((len(x), 1, 1))})
    rep = validate_derivatives(bad, probes=3, seed=1)
    assert not rep.ok
    assert rep.failures[0].startswith("b_x")


def test_missing_derivative_becomes_warning():
    g = lq_as_general(LQScenario.constant(4, B=1.0, R=1.0), np.zeros(4), TimeGrid(1.0, 4))
    partial = GeneralScenario(**{**g.__dict__, "phi_x": None})
    rep = validate_derivatives(partial, probes=2, seed=0)
    assert rep.ok
    assert rep.warnings == ["no evaluator supplied for phi_x"]


def test_min_eig_of_known_matrix():
    assert math.isclose(min_eig(np.array([[0.0, 1.0], [1.0, 1.0]])), (1 - math.sqrt(5)) / 2)

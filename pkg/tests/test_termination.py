import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distmpc import CertificateState, ContractError, check_stop_admm, check_stop_dual, guarantee_ratio
from distmpc import shift_controls, tilde_v, update_error
from distmpc.model import CouplingGraph, MpcProblem
from distmpc.scenarios import linear_model, quadratic_cost
from distmpc.termination import closed_form_error, stop_margin

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_shift_examples():
    out = shift_controls([np.array([[1.0], [2.0], [3.0]])])
    np.testing.assert_array_equal(out[0][:, 0], [2.0, 3.0, 0.0])
    np.testing.assert_array_equal(shift_controls([np.zeros((3, 2))])[0], np.zeros((3, 2)))
    np.testing.assert_array_equal(shift_controls([np.array([[4.0]])])[0], [[0.0]])


def test_shift_does_not_mutate():
    u = np.array([[1.0], [2.0]])
    shift_controls([u])
    np.testing.assert_array_equal(u, [[1.0], [2.0]])


def _zero_dynamics_problem(n_agents, horizon):
    models = [linear_model([[0.0]], [[0.0]]) for _ in range(n_agents)]
    costs = [quadratic_cost([[1.0]], [[0.0]]) for _ in range(n_agents)]
    return MpcProblem(CouplingGraph(n_agents), CouplingGraph(n_agents), models, costs, horizon)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 4), st.data())
def test_tilde_v_vanishing_dynamics(n_agents, horizon, data):
    # x+ = 0 and l = x^2: only the measured states count
    p = _zero_dynamics_problem(n_agents, horizon)
    xs = [np.array([data.draw(finite)]) for _ in range(n_agents)]
    us = [np.array(data.draw(st.lists(finite, min_size=horizon + 1, max_size=horizon + 1))).reshape(-1, 1)
          for _ in range(n_agents)]
    expected = sum(float(x[0] ** 2) for x in xs)
    assert tilde_v(p, xs, us) == pytest.approx(expected)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 4), st.data())
def test_tilde_v_static_system(n_agents, horizon, data):
    # states never move and the cost ignores inputs: (T + 1) * sum_i x_i^2
    models = [linear_model([[1.0]], [[0.0]]) for _ in range(n_agents)]
    costs = [quadratic_cost([[1.0]], [[0.0]]) for _ in range(n_agents)]
    p = MpcProblem(CouplingGraph(n_agents), CouplingGraph(n_agents), models, costs, horizon)
    xs = [np.array([data.draw(finite)]) for _ in range(n_agents)]
    us = [np.ones((horizon + 1, 1))] * n_agents
    assert tilde_v(p, xs, us) == pytest.approx((horizon + 1) * sum(float(x[0] ** 2) for x in xs))


def test_tilde_v_theta_is_additive():
    p = _zero_dynamics_problem(2, 2)
    xs = [np.array([1.0]), np.array([-3.0])]
    us = [np.zeros((3, 1))] * 2
    assert tilde_v(p, xs, us, theta=0.1) == tilde_v(p, xs, us) + 0.1


def test_tilde_v_rejects_wrong_length():
    p = _zero_dynamics_problem(1, 2)
    with pytest.raises(ContractError):
        tilde_v(p, [np.array([1.0])], [np.zeros((2, 1))])


def test_certificate_invariants():
    assert CertificateState(0.5).e == 0.0
    with pytest.raises(ContractError):
        CertificateState(1.5)
    with pytest.raises(ContractError):
        CertificateState(0.5, theta=-1.0)
    with pytest.raises(ContractError):
        CertificateState(0.5, e=1.0)


def test_update_before_v0_is_an_error():
    with pytest.raises(ContractError):
        update_error(CertificateState(0.5), 1.0, 2.0)
    with pytest.raises(ContractError):
        CertificateState(0.5, k=1).record_v0(1.0)


def test_first_error_cancels():
    cert = CertificateState(0.0).record_v0(7.0)
    assert update_error(cert, 3.0, 7.0).e == 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(0, 100), st.lists(st.tuples(st.floats(0, 100), st.floats(0, 500)),
                                                     min_size=1, max_size=40))
def test_recursion_matches_closed_form(alpha, v0, steps):
    cert = CertificateState(alpha).record_v0(v0)
    costs = []
    for ell, tv in steps:
        cert = update_error(cert, ell, tv)
        costs.append(ell)
        assert cert.e == pytest.approx(closed_form_error(alpha, costs, tv, v0), abs=1e-9 * (1 + v0 + sum(costs) + tv))
    assert cert.k == len(steps)
    assert cert.accumulated_cost == pytest.approx(math.fsum(costs))


def test_stop_dual_examples():
    cert = CertificateState(0.0)
    assert check_stop_dual(cert, 5.0, 5.0, 100.0)
    assert not check_stop_dual(cert, 4.9, 5.0, 0.0)
    big = CertificateState(0.5).record_v0(1.0)
    big = update_error(big, 0.0, 1e9 + 1.0)
    assert not check_stop_dual(big, 100.0, 1.0, 1.0)


def test_stop_admm_requires_upper_bound():
    cert = CertificateState(0.0, theta=10.0)
    assert not check_stop_admm(cert, 5.0, 4.0, 0.0, 0.0)
    assert check_stop_admm(cert, 5.0, 15.0, 0.0, 0.0)
    assert check_stop_dual(cert, 5.0, 0.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), finite, finite, finite, finite)
def test_stop_predicates_are_pure(alpha, a, b, c, d):
    cert = CertificateState(alpha)
    assert check_stop_dual(cert, a, b, abs(c)) == check_stop_dual(cert, a, b, abs(c))
    assert check_stop_admm(cert, a, d, b, abs(c)) == check_stop_admm(cert, a, d, b, abs(c))
    assert check_stop_dual(cert, a, b, abs(c)) == (stop_margin(cert, a, b, abs(c)) >= 0)
    assert cert == CertificateState(alpha)


def test_guarantee_ratio():
    with pytest.raises(ContractError):
        guarantee_ratio(CertificateState(0.5))
    cert = CertificateState(0.5).record_v0(4.0)
    assert guarantee_ratio(cert) == 0.0
    cert = update_error(cert, 2.0, 3.0)
    assert guarantee_ratio(cert) == pytest.approx(0.25)
    zero_alpha = update_error(CertificateState(0.0).record_v0(4.0), 2.0, 3.0)
    assert guarantee_ratio(zero_alpha) == 0.0

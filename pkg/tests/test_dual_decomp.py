import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import integrator_problem, random_lq
from oracles import central_difference, coupled_lq_optimum, relative_error
from distmpc import ContractError, Multipliers, StepSizes, dual_iteration, dual_value, primal_residual, solve_local
from distmpc.dual_decomp import (
    build_local_objective,
    consistent_starts,
    initial_iterate,
    residuals,
    solve_dual,
    update_multipliers,
)
from distmpc.local_solver import SolverSettings
from distmpc.model import plan_cost

TIGHT = SolverSettings(tolerance=1e-10, max_iterations=2000)


def test_zero_multipliers_reduce_to_stage_costs(coupled_lq):
    p, x0 = coupled_lq.problem, coupled_lq.initial_states
    sub = build_local_objective(p, 0, Multipliers.zeros(p), x0)
    rng = np.random.default_rng(1)
    z = rng.normal(size=len(sub.lower))
    U, V, W = sub.split(z)
    states = sub.unpack(z)["states"]
    expected = sum(p.costs[0].evaluate(states[t], W[t], U[t]) for t in range(p.horizon + 1))
    assert sub.objective(z)[0] == pytest.approx(expected)


def test_decoupled_objective_has_no_slacks(decoupled):
    p = decoupled.problem
    sub = build_local_objective(p, 1, Multipliers.zeros(p), decoupled.initial_states)
    assert len(sub.lower) == (p.horizon + 1) * p.input_dim(1)


def test_incoming_price_subtracts_own_forecast():
    # agent 1 reads agent 0's state; lam_{1,0}[t] = 1 adds -sum_t x_0[t] to agent 0
    p = integrator_problem(2, horizon=2, dyn_edges={(0, 1)})
    x0 = (np.array([1.0]), np.array([0.0]))
    zero = Multipliers.zeros(p)
    lam1 = np.ones_like(zero.lam[1])
    priced = Multipliers((zero.lam[0], lam1), zero.mu)
    base = build_local_objective(p, 0, zero, x0)
    sub = build_local_objective(p, 0, priced, x0)
    z = np.array([0.3, -0.2, 0.5])
    states = sub.unpack(z)["states"]
    assert sub.objective(z)[0] - base.objective(z)[0] == pytest.approx(-float(np.sum(states[:3])))
    # own slack price enters agent 1 linearly
    sub1 = build_local_objective(p, 1, priced, x0)
    base1 = build_local_objective(p, 1, zero, x0)
    z1 = np.array([0.1, 0.2, 0.3, 0.7, -0.4])
    assert sub1.objective(z1)[0] - base1.objective(z1)[0] == pytest.approx(0.7 - 0.4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_local_objective_gradient(seed):
    rng = np.random.default_rng(seed)
    p, x0 = random_lq(rng, horizon=int(rng.integers(1, 3)))
    mult = Multipliers(tuple(rng.normal(size=a.shape) for a in Multipliers.zeros(p).lam),
                       tuple(rng.normal(size=a.shape) for a in Multipliers.zeros(p).mu))
    for i in range(p.n_agents):
        sub = build_local_objective(p, i, mult, x0)
        z = rng.normal(size=len(sub.lower))
        _, g = sub.objective(z)
        fd = central_difference(lambda w: sub.objective(w)[0], z)
        assert relative_error(g, fd) <= 1e-5


def test_multiplier_block_addressing(coupled_lq):
    p = coupled_lq.problem
    m = Multipliers.zeros(p)
    assert m.block(p, "lam", 1, 0).shape == (p.horizon + 1, 1)
    with pytest.raises(ContractError):
        m.block(p, "lam", 0, 1)


def test_multipliers_shift():
    m = Multipliers((np.arange(4.0).reshape(4, 1),), (np.zeros((4, 0)),))
    np.testing.assert_array_equal(m.shifted().lam[0][:, 0], [1.0, 2.0, 3.0, 0.0])


def test_no_edges_iteration_is_fixed(decoupled):
    p, x0 = decoupled.problem, decoupled.initial_states
    it = initial_iterate(p, x0, settings=TIGHT)
    nxt = dual_iteration(p, it, settings=TIGHT)
    assert all(a.size == 0 for a in nxt.multipliers.lam + nxt.multipliers.mu)
    for a, b in zip(it.agents, nxt.agents):
        np.testing.assert_allclose(a.inputs, b.inputs, atol=1e-9)


def test_decoupled_dual_value_is_sum_of_local_optima(decoupled):
    p, x0 = decoupled.problem, decoupled.initial_states
    it = initial_iterate(p, x0, settings=TIGHT)
    local = sum(solve_local(build_local_objective(p, i, Multipliers.zeros(p), x0), settings=TIGHT).value
                for i in range(2))
    assert dual_value(p, it) == pytest.approx(local, abs=1e-10)


def test_consistent_point_has_zero_residual_and_primal_value(coupled_lq):
    p, x0 = coupled_lq.problem, coupled_lq.initial_states
    plan = [np.full((4, 1), 0.2), np.full((4, 1), -0.1)]
    it = initial_iterate(p, x0, settings=TIGHT, warm_inputs=plan)
    starts = consistent_starts(p, x0, plan)
    subs = [build_local_objective(p, i, Multipliers.zeros(p), x0) for i in range(2)]
    total = sum(sub.objective(sub.join(*s))[0] for sub, s in zip(subs, starts))
    assert total == pytest.approx(plan_cost(p, x0, plan))
    assert it.residual >= 0.0


def test_residual_single_scalar_edge():
    p = integrator_problem(2, horizon=1, dyn_edges={(0, 1)})
    x0 = (np.array([1.0]), np.array([0.0]))
    it = initial_iterate(p, x0, settings=TIGHT)
    rv, _ = residuals(p, it.agents)
    expected = abs(it.agents[1].vbar[0, 0] - it.agents[0].states[0, 0])
    assert primal_residual(p, it) == pytest.approx(expected)
    assert rv[1][-1, 0] == 0.0


def test_update_is_exact_affine_rule(coupled_lq):
    p, x0 = coupled_lq.problem, coupled_lq.initial_states
    it = initial_iterate(p, x0, settings=TIGHT)
    steps = StepSizes(0.3, 0.2)
    new = update_multipliers(p, it, steps)
    rv, rw = residuals(p, it.agents)
    for i in range(2):
        np.testing.assert_array_equal(new.lam[i], it.multipliers.lam[i] + 0.3 * rv[i])
        np.testing.assert_array_equal(new.mu[i], it.multipliers.mu[i] + 0.2 * rw[i])


def test_converged_point_keeps_multipliers(coupled_lq):
    p, x0 = coupled_lq.problem, coupled_lq.initial_states
    hist = solve_dual(p, x0, StepSizes(0.1), TIGHT, tolerance=1e-9, max_rounds=400)
    last = hist[-1]
    new = update_multipliers(p, last, StepSizes(0.1))
    for a, b in zip(new.lam + new.mu, last.multipliers.lam + last.multipliers.mu):
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_weak_duality_and_convergence(coupled_lq):
    p, x0 = coupled_lq.problem, coupled_lq.initial_states
    J, u0, u1 = coupled_lq_optimum()
    hist = solve_dual(p, x0, StepSizes(0.1), TIGHT, tolerance=1e-8, max_rounds=400)
    values = np.array([it.value for it in hist])
    assert np.all(values <= J + 1e-8 * J)
    assert np.all(np.diff(values[:50]) >= -1e-9)
    assert hist[-1].residual <= 1e-8
    assert values[-1] == pytest.approx(J, abs=1e-5)
    np.testing.assert_allclose(hist[-1].inputs[0][:, 0], u0, atol=1e-5)
    np.testing.assert_allclose(hist[-1].inputs[1][:, 0], u1, atol=1e-5)


def test_step_size_validation():
    with pytest.raises(ContractError):
        StepSizes(0.0)
    with pytest.raises(ContractError):
        StepSizes(0.1, schedule="polyak")
    assert StepSizes(0.4, schedule="diminishing").at(4) == (0.1, 0.1)


def test_trace_row_fields(coupled_lq):
    it = initial_iterate(coupled_lq.problem, coupled_lq.initial_states)
    row = it.trace_row(3)
    assert {"k", "s", "dual_value", "residual", "objective_0", "objective_1"} <= set(row)

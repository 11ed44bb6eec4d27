import numpy as np
import pytest

from distmpc import ContractError, ControllerOptions, SolverFailure, run_closed_loop
from distmpc.dual_decomp import StepSizes
from distmpc.model import CouplingGraph, MpcProblem, StageCost
from distmpc.scenarios import build_two_vehicle, get_scenario, linear_model


@pytest.mark.parametrize("method", ["dual", "centralized"])
def test_start_in_formation_stays_put(method):
    sc = build_two_vehicle(initial_states=([3.0, 1.0], [1.0, 0.0]))
    log = run_closed_loop(sc, method, steps=5)
    assert log.total_cost == pytest.approx(0.0, abs=1e-10)
    for i in range(2):
        np.testing.assert_allclose(log.state_history(i), np.tile(sc.initial_states[i], (6, 1)), atol=1e-6)


def test_admm_in_formation_keeps_its_bound():
    # the theta slack lets ADMM certify an early iterate that drifts a little
    sc = build_two_vehicle(initial_states=([3.0, 1.0], [1.0, 0.0]))
    log = run_closed_loop(sc, "admm", steps=5)
    assert all(r.certified and r.bound_slack >= 0.0 for r in log.records)
    assert log.alpha * log.total_cost <= log.v0


@pytest.mark.parametrize("method", ["dual", "centralized"])
def test_decoupled_methods_agree(method, decoupled):
    ref = run_closed_loop(decoupled, "centralized", steps=10)
    log = run_closed_loop(decoupled, method, steps=10)
    assert log.total_cost == pytest.approx(ref.total_cost, abs=1e-4)


def test_decoupled_admm_converged_and_certified(decoupled):
    ref = run_closed_loop(decoupled, "centralized", steps=10)
    opts = ControllerOptions(termination="converged", residual_tolerance=1e-8)
    log = run_closed_loop(decoupled, "admm", steps=10, options=opts)
    assert log.total_cost == pytest.approx(ref.total_cost, abs=1e-3)
    log = run_closed_loop(decoupled, "admm", steps=10)
    assert ref.total_cost - 1e-6 <= log.total_cost <= log.v0 / log.alpha
    assert all(r.bound_slack >= 0.0 for r in log.records)


def test_certificate_fields_are_consistent(coupled_lq):
    log = run_closed_loop(coupled_lq, "dual", steps=15)
    assert log.v0 == log.records[0].value
    acc = 0.0
    for r in log.records:
        acc += r.stage_cost
        assert r.bound_slack == pytest.approx(log.v0 - log.alpha * acc)
        assert r.e == pytest.approx(r.e_closed_form, abs=1e-9)
        assert r.certified == (r.margin >= 0.0)
        assert 1 <= r.iterations <= 200
    for a, b in zip(log.records, log.records[1:]):
        assert b.tilde_v == a.tilde_v_next


def test_two_vehicle_first_step_flips_to_certified():
    sc = build_two_vehicle()
    opts = ControllerOptions(trace=True)
    log = run_closed_loop(sc, "dual", steps=1, options=opts)
    margins = [row["margin"] for row in log.traces if row["k"] == 0]
    assert margins[-1] >= 0.0
    assert log.records[0].iterations == len(margins)
    assert all(m < 0.0 for m in margins[:-1])


def test_unicycle_inputs_respect_box():
    log = run_closed_loop(build_two_vehicle(), "dual", steps=20)
    for i in range(2):
        u = log.input_history(i)
        assert np.all(u[:, 0] >= 0.0) and np.all(u[:, 0] <= 0.5)
        assert np.all(np.abs(u[:, 1]) <= np.pi / 6)


def test_smax_one_marks_uncertified(decoupled):
    log = run_closed_loop(decoupled, "dual", alpha=1.0, steps=3, options=ControllerOptions(s_max=1))
    assert all(r.iterations == 1 for r in log.records)
    assert log.certified_fraction < 1.0


def test_converged_termination_mode(coupled_lq):
    opts = ControllerOptions(termination="converged", residual_tolerance=1e-6, steps=StepSizes(0.1))
    log = run_closed_loop(coupled_lq, "dual", steps=3, options=opts)
    assert all(r.iterations > 1 for r in log.records)


def test_cold_multipliers_option(coupled_lq):
    log = run_closed_loop(coupled_lq, "dual", steps=5, options=ControllerOptions(warm_multipliers=False))
    assert log.steps == 5


def test_reference_values_bound_solver_values(coupled_lq):
    log = run_closed_loop(coupled_lq, "dual", steps=5, options=ControllerOptions(reference=True))
    for r in log.records:
        assert r.value <= r.reference_value + 1e-8
        if r.k:
            assert r.tilde_v >= r.reference_value - 1e-8


def test_admm_theta_default_and_override(coupled_lq):
    log = run_closed_loop(coupled_lq, "admm", steps=2)
    assert log.theta > 0.0
    log = run_closed_loop(coupled_lq, "admm", steps=2, options=ControllerOptions(theta=0.3))
    assert log.theta == 0.3


def test_argument_validation(coupled_lq):
    with pytest.raises(ContractError):
        run_closed_loop(coupled_lq, "gossip")
    with pytest.raises(ContractError):
        run_closed_loop(coupled_lq, steps=0)
    with pytest.raises(ContractError):
        run_closed_loop(coupled_lq.problem, steps=1)
    with pytest.raises(ContractError):
        ControllerOptions(s_max=0)
    with pytest.raises(ContractError):
        ControllerOptions(termination="never")


def test_solver_failure_carries_step():
    def evaluate(x, w, u):
        return float("nan") if abs(x[0]) < 1.5 else float(x @ x)

    def gradient(x, w, u):
        return 2 * x, np.zeros(len(w)), np.zeros(len(u))

    model = linear_model([[0.5]], [[1.0]], input_bound=0.0)
    p = MpcProblem(CouplingGraph(1), CouplingGraph(1), [model], [StageCost(evaluate, gradient)], 0)
    with pytest.raises(SolverFailure) as exc:
        run_closed_loop(p, "dual", alpha=0.5, steps=5, initial_states=[np.array([4.0])])
    assert exc.value.step == 2
    assert exc.value.agent == 0


def test_bare_problem_entry_point(coupled_lq):
    log = run_closed_loop(coupled_lq.problem, "centralized", alpha=0.5, steps=2,
                          initial_states=coupled_lq.initial_states)
    assert log.scenario == "custom" and log.steps == 2
    assert get_scenario("coupled_lq").alpha == 0.5

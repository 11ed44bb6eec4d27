import math

import numpy as np
import pytest

from distmpc import ContractError, build_three_vehicle, build_two_vehicle, get_scenario, suboptimality_ratio
from distmpc.exceptions import UndefinedRatioError
from distmpc.model import Trajectory, stage_cost, total_cost
from distmpc.scenarios import FormationSpec, UnicycleParams
from distmpc.simulation import RunLog, StepRecord


def test_two_vehicle_initial_states_and_structure():
    sc = build_two_vehicle()
    np.testing.assert_array_equal(sc.initial_states[0], [4.0, -1.0])
    np.testing.assert_array_equal(sc.initial_states[1], [1.0, -5.0])
    assert sc.problem.horizon == 5
    assert sc.problem.dynamics_graph.is_empty
    assert sc.problem.cost_graph.edges == {(0, 1), (1, 0)}


def test_two_vehicle_initial_stage_cost():
    sc = build_two_vehicle()
    assert stage_cost(sc.problem, sc.initial_states, [np.zeros(2), np.zeros(2)]) == pytest.approx(20.0)


def test_two_vehicle_formation_and_speed_terms():
    sc = build_two_vehicle()
    x1 = np.array([0.0, 0.0])
    x2 = x1 - np.array([2.0, 1.0])
    assert stage_cost(sc.problem, [x1, x2], [np.zeros(2), np.array([0.0, 0.3])]) == 0.0
    # 10 (v1^2 + v2^2) with v = 0.1 and 0.2
    assert stage_cost(sc.problem, [x1, x2], [np.array([0.1, 0.0]), np.array([0.2, 0.0])]) == pytest.approx(0.5)


def test_three_vehicle_structure():
    sc = build_three_vehicle()
    assert sc.alpha == 0.2 and sc.problem.horizon == 3
    assert len(sc.problem.cost_graph.edges) == 6
    for x, e in zip(sc.initial_states, ([4, -1], [1, -3], [-2, 3])):
        np.testing.assert_array_equal(x, e)


def test_three_vehicle_offsets_form_a_triangle():
    f = build_three_vehicle().formation
    np.testing.assert_array_equal(f.offset(0, 1) + f.offset(1, 2), f.offset(0, 2))
    np.testing.assert_array_equal(f.offset(1, 0), -f.offset(0, 1))


def test_three_vehicle_velocity_variants():
    sc = build_three_vehicle()
    verbatim = build_three_vehicle(verbatim_velocity_terms=True)
    f = sc.formation
    x = [np.zeros(2), -f.offset(0, 1), -f.offset(0, 2)]
    u = [np.array([0.1, 0.0]), np.array([0.2, 0.0]), np.array([0.3, 0.0])]
    assert stage_cost(sc.problem, x, u) == pytest.approx(10 * (0.01 + 0.04 + 0.09))
    assert stage_cost(verbatim.problem, x, u) == pytest.approx(10 * (0.01 + 0.04 + 0.04))


def test_pair_split_preserves_team_cost():
    sc = build_three_vehicle()
    rng = np.random.default_rng(3)
    x = [rng.normal(size=2) for _ in range(3)]
    u = [np.array([0.0, 0.1])] * 3
    f = sc.formation
    team = sum(2.0 * float(np.sum((x[i] - x[j] - f.offset(i, j)) ** 2)) for i, j in ((0, 1), (0, 2), (1, 2)))
    assert stage_cost(sc.problem, x, u) == pytest.approx(team)
    for i in range(3):
        w = np.concatenate([x[j] for j in sc.problem.cost_graph.in_neighbors(i)])
        assert sc.problem.costs[i].evaluate(x[i], w, u[i]) >= 0.0


def test_unicycle_bounds():
    m = build_two_vehicle().problem.subsystems[0]
    p = UnicycleParams()
    np.testing.assert_array_equal(m.input_lower, [0.0, -math.pi / 6])
    np.testing.assert_array_equal(m.input_upper, [p.v_max, p.theta_max])


def test_formation_offsets_must_be_finite():
    with pytest.raises(ContractError):
        FormationSpec({(0, 1): [np.inf, 0.0]})


def test_get_scenario_overrides_and_unknown():
    sc = get_scenario("two_vehicle", alpha=0.3, horizon=2)
    assert sc.alpha == 0.3 and sc.problem.horizon == 2
    with pytest.raises(ContractError):
        get_scenario("platoon")


def test_in_formation_total_cost_zero():
    sc = build_two_vehicle()
    x1 = np.array([1.0, 1.0])
    trajs = [Trajectory([x1] * 6, np.zeros((5, 2))), Trajectory([x1 - [2.0, 1.0]] * 6, np.zeros((5, 2)))]
    assert total_cost(sc.problem, trajs) == 0.0


def _log(costs, x0=(np.zeros(1),)):
    log = RunLog("s", "dual", 0.5, tuple(x0))
    for k, c in enumerate(costs):
        log.records.append(StepRecord(k, [], [], c, 1, True, 0, 0, 0, 0, 0, 0, 0))
    return log


def test_ratio_examples():
    a = _log([1.0, 2.0, 3.0])
    assert suboptimality_ratio(a, a) == 1.0
    assert suboptimality_ratio(_log([2.0, 2.0]), _log([1.0, 1.0])) == 2.0
    assert suboptimality_ratio(_log([2.0, 9.0]), _log([1.0, 1.0]), steps=1) == 2.0


def test_ratio_errors():
    with pytest.raises(UndefinedRatioError):
        suboptimality_ratio(_log([1.0]), _log([0.0]))
    with pytest.raises(ContractError):
        suboptimality_ratio(_log([1.0]), _log([1.0], (np.ones(1),)))
    with pytest.raises(ContractError):
        suboptimality_ratio(_log([1.0]), _log([1.0]), steps=3)

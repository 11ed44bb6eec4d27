"""Experiment definitions: unicycle formations and small linear-quadratic toys.

The pairwise formation term ``c * ||x_i - x_j - d_ij||^2`` is split evenly
between agents ``i`` and ``j`` (each sees weight ``c / 2``, with
``d_ji = -d_ij``), so the stage costs stay nonnegative and the cost graph is
symmetric while the team cost is unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, UndefinedRatioError
from .model import CouplingGraph, MpcProblem, StageCost, SubsystemModel


@dataclass(frozen=True)
class UnicycleParams:
    v_min: float = 0.0
    v_max: float = 0.5
    theta_max: float = math.pi / 6


@dataclass(frozen=True)
class FormationSpec:
    """Desired offsets ``d_ij`` (``x_i - x_j``) per unordered pair ``i < j``."""

    offsets: dict
    pair_weight: float = 2.0
    velocity_weight: float = 10.0

    def __post_init__(self):
        offsets = {}
        for (i, j), d in self.offsets.items():
            d = np.asarray(d, dtype=float)
            if not np.all(np.isfinite(d)):
                raise ContractError("formation offsets must be finite")
            offsets[(i, j)] = d
        object.__setattr__(self, "offsets", offsets)

    def offset(self, i, j):
        """Desired ``x_i - x_j``."""
        if (i, j) in self.offsets:
            return self.offsets[(i, j)]
        return -self.offsets[(j, i)]

    def edges(self):
        return {(j, i) for i, j in self.offsets} | {(i, j) for i, j in self.offsets}


@dataclass(frozen=True)
class Scenario:
    name: str
    problem: MpcProblem
    initial_states: tuple
    alpha: float
    formation: FormationSpec = None
    notes: dict = field(default_factory=dict)
    dual_step: float = 0.5

    def residuals(self, states):
        """Formation residual norms ``||x_i - x_j - d_ij||`` keyed by pair."""
        if self.formation is None:
            return {}
        return {
            (i, j): float(np.linalg.norm(np.asarray(states[i]) - np.asarray(states[j]) - d))
            for (i, j), d in self.formation.offsets.items()
        }


def unicycle_model(params=UnicycleParams()):
    """Position update ``x+ = x + v [cos(theta), sin(theta)]`` with input ``(v, theta)``."""

    def f(x, nbr, u):
        v, th = u[0], u[1]
        return np.array([x[0] + v * math.cos(th), x[1] + v * math.sin(th)])

    def jac(x, nbr, u):
        v, th = u[0], u[1]
        c, s = math.cos(th), math.sin(th)
        return np.eye(2), np.zeros((2, len(nbr))), np.array([[c, -v * s], [s, v * c]])

    return SubsystemModel(
        state_dim=2,
        input_dim=2,
        dynamics=f,
        jacobian=jac,
        input_lower=[params.v_min, -params.theta_max],
        input_upper=[params.v_max, params.theta_max],
        state_names=("x_1", "x_2"),
        input_names=("v", "theta"),
    )


def formation_cost(offsets, pair_weight, velocity_weight):
    """Stage cost of one vehicle.

    ``offsets`` lists the desired ``x_i - x_j`` for each cost-graph neighbor
    in ascending order; each pair term carries ``pair_weight``.
    """
    offsets = [np.asarray(d, dtype=float) for d in offsets]
    dim = 2

    def residuals(x, w):
        return [x - w[k * dim:(k + 1) * dim] - d for k, d in enumerate(offsets)]

    def evaluate(x, w, u):
        r = residuals(x, w)
        return float(pair_weight * sum(float(ri @ ri) for ri in r) + velocity_weight * u[0] ** 2)

    def gradient(x, w, u):
        r = residuals(x, w)
        gx = np.zeros(dim)
        gw = np.zeros(len(w))
        for k, ri in enumerate(r):
            gx += 2.0 * pair_weight * ri
            gw[k * dim:(k + 1) * dim] = -2.0 * pair_weight * ri
        gu = np.zeros(len(u))
        gu[0] = 2.0 * velocity_weight * u[0]
        return gx, gw, gu

    return StageCost(evaluate, gradient)


def formation_problem(formation, n_agents, horizon, velocity_weights=None, params=UnicycleParams()):
    cost_graph = CouplingGraph(n_agents, formation.edges())
    if velocity_weights is None:
        velocity_weights = [formation.velocity_weight] * n_agents
    costs = []
    for i in range(n_agents):
        offsets = [formation.offset(i, j) for j in cost_graph.in_neighbors(i)]
        costs.append(formation_cost(offsets, 0.5 * formation.pair_weight, velocity_weights[i]))
    model = unicycle_model(params)
    return MpcProblem(CouplingGraph(n_agents), cost_graph, [model] * n_agents, costs, horizon)


def build_two_vehicle(alpha=0.5, horizon=5, initial_states=None):
    """Two vehicles, ``d_12 = [2, 1]``, starting at ``[4, -1]`` and ``[1, -5]``."""
    formation = FormationSpec({(0, 1): [2.0, 1.0]})
    if initial_states is None:
        initial_states = ([4.0, -1.0], [1.0, -5.0])
    return Scenario(
        "two_vehicle",
        formation_problem(formation, 2, horizon),
        tuple(np.asarray(x, dtype=float) for x in initial_states),
        alpha,
        formation,
    )


def build_three_vehicle(alpha=0.2, horizon=3, initial_states=None, verbatim_velocity_terms=False):
    """Three vehicles in a triangle formation.

    Each vehicle's own speed is penalized with weight 10. Pass
    ``verbatim_velocity_terms=True`` for the variant
    ``10 (v_0^2 + v_1^2 + v_1^2)``, with speed weights (10, 20, 0).
    """
    formation = FormationSpec({(0, 1): [1.0, -5.0], (0, 2): [-3.0, 2.0], (1, 2): [-4.0, 7.0]})
    if initial_states is None:
        initial_states = ([4.0, -1.0], [1.0, -3.0], [-2.0, 3.0])
    weights = [10.0, 20.0, 0.0] if verbatim_velocity_terms else None
    return Scenario(
        "three_vehicle",
        formation_problem(formation, 3, horizon, velocity_weights=weights),
        tuple(np.asarray(x, dtype=float) for x in initial_states),
        alpha,
        formation,
        notes={"verbatim_velocity_terms": verbatim_velocity_terms},
    )


def linear_model(A, Bu, Bv=None, input_bound=None, state_bound=None):
    """Linear dynamics ``x+ = A x + Bv v + Bu u`` with optional symmetric boxes."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Bu = np.atleast_2d(np.asarray(Bu, dtype=float))
    n, m = Bu.shape
    Bv = np.zeros((n, 0)) if Bv is None else np.atleast_2d(np.asarray(Bv, dtype=float)).reshape(n, -1)

    def f(x, v, u):
        return A @ x + Bv @ v + Bu @ u

    def jac(x, v, u):
        return A, Bv, Bu

    lo_u = None if input_bound is None else -np.abs(input_bound)
    hi_u = None if input_bound is None else np.abs(input_bound)
    lo_x = None if state_bound is None else -np.abs(state_bound)
    hi_x = None if state_bound is None else np.abs(state_bound)
    return SubsystemModel(n, m, f, jac, lo_x, hi_x, lo_u, hi_u)


def quadratic_cost(Q, R, pair_weight=0.0, offsets=()):
    """``x'Qx + u'Ru + pair_weight * sum_j ||x - w_j - d_j||^2``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    offsets = [np.atleast_1d(np.asarray(d, dtype=float)) for d in offsets]
    n = Q.shape[0]

    def evaluate(x, w, u):
        val = float(x @ Q @ x + u @ R @ u)
        for k, d in enumerate(offsets):
            r = x - w[k * n:(k + 1) * n] - d
            val += pair_weight * float(r @ r)
        return val

    def gradient(x, w, u):
        gx = (Q + Q.T) @ x
        gw = np.zeros(len(w))
        for k, d in enumerate(offsets):
            r = x - w[k * n:(k + 1) * n] - d
            gx = gx + 2.0 * pair_weight * r
            gw[k * n:(k + 1) * n] = -2.0 * pair_weight * r
        return gx, gw, (R + R.T) @ u

    return StageCost(evaluate, gradient)


def build_coupled_lq(alpha=0.5, horizon=3, input_bound=None, initial_states=((2.0,), (-1.0,))):
    """Two scalar agents coupled in both dynamics and cost.

    Agent 1's dynamics read agent 0's state and each agent's cost pulls it
    toward the other, so both graphs carry edges. The origin is a zero-cost
    equilibrium. The dynamics slack has weak curvature, so multiplier ascent
    needs a step well below the default; ``dual_step`` is 0.1 (0.2 diverges).
    """
    m0 = linear_model([[0.9]], [[1.0]], input_bound=input_bound)
    m1 = linear_model([[0.8]], [[1.0]], Bv=[[0.3]], input_bound=input_bound)
    c0 = quadratic_cost([[1.0]], [[1.0]], 0.5, [[0.0]])
    c1 = quadratic_cost([[2.0]], [[0.5]], 0.5, [[0.0]])
    problem = MpcProblem(
        CouplingGraph(2, {(0, 1)}),
        CouplingGraph(2, {(0, 1), (1, 0)}),
        [m0, m1],
        [c0, c1],
        horizon,
    )
    return Scenario("coupled_lq", problem, tuple(np.asarray(x, dtype=float) for x in initial_states), alpha,
                    dual_step=0.1)


def build_decoupled(alpha=0.5, horizon=3, initial_states=((1.0,), (-2.0,))):
    """Two independent scalar integrators with ``l = x^2 + u^2`` and ``|u| <= 1``."""
    models = [linear_model([[1.0]], [[1.0]], input_bound=1.0) for _ in range(2)]
    costs = [quadratic_cost([[1.0]], [[1.0]]) for _ in range(2)]
    problem = MpcProblem(CouplingGraph(2), CouplingGraph(2), models, costs, horizon)
    return Scenario("decoupled", problem, tuple(np.asarray(x, dtype=float) for x in initial_states), alpha)


SCENARIOS = {
    "two_vehicle": (build_two_vehicle, {"alpha": 0.5, "horizon": 5}),
    "three_vehicle": (build_three_vehicle, {"alpha": 0.2, "horizon": 3}),
    "coupled_lq": (build_coupled_lq, {"alpha": 0.5, "horizon": 3}),
    "decoupled": (build_decoupled, {"alpha": 0.5, "horizon": 3}),
}


def get_scenario(name, alpha=None, horizon=None):
    """Build a preset by name, overriding ``alpha`` and ``horizon`` when given."""
    if name not in SCENARIOS:
        raise ContractError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    builder, defaults = SCENARIOS[name]
    kwargs = dict(defaults)
    if alpha is not None:
        kwargs["alpha"] = alpha
    if horizon is not None:
        kwargs["horizon"] = horizon
    return builder(**kwargs)


def suboptimality_ratio(dual_log, primal_log, steps=None):
    """Closed-loop cost of the distributed run over that of the centralized run.

    Both logs must start from the same initial states; the first ``steps``
    stage costs of each are summed.
    """
    a = np.asarray(dual_log.stage_costs, dtype=float)
    b = np.asarray(primal_log.stage_costs, dtype=float)
    steps = min(len(a), len(b)) if steps is None else steps
    if len(a) < steps or len(b) < steps:
        raise ContractError("logs are shorter than the requested number of steps")
    for sa, sb in zip(dual_log.initial_states, primal_log.initial_states):
        if not np.array_equal(sa, sb):
            raise ContractError("logs start from different initial states")
    den = math.fsum(b[:steps])
    if den == 0.0:
        raise UndefinedRatioError("centralized closed-loop cost is zero; ratio undefined")
    return math.fsum(a[:steps]) / den

"""Problem containers: coupling graphs, subsystem dynamics, stage costs.

Agents are indexed from 0. Neighbor tuples are always stacked in ascending
agent index, so a multiplier or slack block can be addressed by
``(owner, neighbor, time)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .exceptions import ContractError


@dataclass(frozen=True)
class CouplingGraph:
    """Directed graph over agents ``0..n_agents-1``.

    An edge ``(j, i)`` means agent ``j``'s state enters agent ``i``'s
    dynamics (or cost, for a cost graph).
    """

    n_agents: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n_agents < 1:
            raise ContractError("n_agents must be positive")
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if not (0 <= j < self.n_agents and 0 <= i < self.n_agents):
                raise ContractError(f"edge {(j, i)} has an endpoint outside 0..{self.n_agents - 1}")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def complete(cls, n_agents):
        return cls(n_agents, {(j, i) for i in range(n_agents) for j in range(n_agents) if i != j})

    @cached_property
    def _in(self):
        return tuple(tuple(sorted(j for j, i in self.edges if i == a)) for a in range(self.n_agents))

    @cached_property
    def _out(self):
        return tuple(tuple(sorted(i for j, i in self.edges if j == a)) for a in range(self.n_agents))

    def _check(self, agent):
        if not 0 <= agent < self.n_agents:
            raise IndexError(f"agent {agent} not in 0..{self.n_agents - 1}")

    def in_neighbors(self, agent):
        """Agents whose state enters ``agent``, ascending."""
        self._check(agent)
        return self._in[agent]

    def out_neighbors(self, agent):
        """Agents that ``agent``'s state enters, ascending."""
        self._check(agent)
        return self._out[agent]

    @property
    def is_empty(self):
        return not self.edges


def _box(bound, dim, fill):
    if bound is None:
        return np.full(dim, fill)
    arr = np.broadcast_to(np.asarray(bound, dtype=float), (dim,)).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SubsystemModel:
    """Dynamics ``x+ = f(x, v, u)`` of one agent plus its admissible boxes.

    ``jacobian(x, v, u)`` returns ``(df/dx, df/dv, df/du)`` with shapes
    ``(n, n)``, ``(n, len(v))`` and ``(n, m)``.
    """

    state_dim: int
    input_dim: int
    dynamics: Callable
    jacobian: Callable
    state_lower: np.ndarray = None
    state_upper: np.ndarray = None
    input_lower: np.ndarray = None
    input_upper: np.ndarray = None
    state_names: tuple = None
    input_names: tuple = None

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ContractError("state and input dimensions must be positive")
        n, m = self.state_dim, self.input_dim
        object.__setattr__(self, "state_lower", _box(self.state_lower, n, -np.inf))
        object.__setattr__(self, "state_upper", _box(self.state_upper, n, np.inf))
        object.__setattr__(self, "input_lower", _box(self.input_lower, m, -np.inf))
        object.__setattr__(self, "input_upper", _box(self.input_upper, m, np.inf))
        if np.any(self.state_lower > self.state_upper) or np.any(self.input_lower > self.input_upper):
            raise ContractError("box lower bound exceeds upper bound")
        if self.state_names is None:
            object.__setattr__(self, "state_names", tuple(f"x{c}" for c in range(n)))
        if self.input_names is None:
            object.__setattr__(self, "input_names", tuple(f"u{c}" for c in range(m)))

    @property
    def state_bounded(self):
        return bool(np.isfinite(self.state_lower).any() or np.isfinite(self.state_upper).any())


@dataclass(frozen=True)
class StageCost:
    """Stage cost ``l(x, w, u) >= 0`` with analytic partials ``(dx, dw, du)``."""

    evaluate: Callable
    gradient: Callable


@dataclass(frozen=True)
class MpcProblem:
    """Finite-horizon coupled problem: graphs, agents, costs, horizon ``T``."""

    dynamics_graph: CouplingGraph
    cost_graph: CouplingGraph
    subsystems: tuple
    costs: tuple
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        object.__setattr__(self, "costs", tuple(self.costs))
        n = len(self.subsystems)
        if not (self.dynamics_graph.n_agents == self.cost_graph.n_agents == n == len(self.costs)):
            raise ContractError("graphs, subsystems and costs disagree on the number of agents")
        if self.horizon < 0:
            raise ContractError("horizon must be nonnegative")

    @property
    def n_agents(self):
        return len(self.subsystems)

    def with_horizon(self, horizon):
        return replace(self, horizon=horizon)

    def state_dim(self, agent):
        return self.subsystems[agent].state_dim

    def input_dim(self, agent):
        return self.subsystems[agent].input_dim

    def neighbor_dim(self, graph, agent):
        return sum(self.subsystems[j].state_dim for j in graph.in_neighbors(agent))

    def v_dim(self, agent):
        return self.neighbor_dim(self.dynamics_graph, agent)

    def w_dim(self, agent):
        return self.neighbor_dim(self.cost_graph, agent)

    def neighbor_slices(self, graph, agent):
        """Map in-neighbor ``j`` to its slice inside ``agent``'s stacked vector."""
        out, start = {}, 0
        for j in graph.in_neighbors(agent):
            n = self.subsystems[j].state_dim
            out[j] = slice(start, start + n)
            start += n
        return out

    def slack_box(self, graph, agent):
        """Product of in-neighbor state boxes, as stacked ``(lower, upper)``."""
        nbrs = graph.in_neighbors(agent)
        if not nbrs:
            return np.zeros(0), np.zeros(0)
        lo = np.concatenate([self.subsystems[j].state_lower for j in nbrs])
        hi = np.concatenate([self.subsystems[j].state_upper for j in nbrs])
        return lo, hi


@dataclass(frozen=True)
class Trajectory:
    """Forecast of one agent: states ``x[k..k+T+1]`` and inputs ``u[k..k+T]``."""

    states: np.ndarray
    inputs: np.ndarray
    k: int = 0

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if len(states) not in (len(inputs), len(inputs) + 1):
            raise ContractError("a trajectory needs len(inputs) or len(inputs)+1 states")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    @property
    def horizon(self):
        return len(self.inputs) - 1

    def is_feasible(self, model, atol=0.0):
        """True if every state and input lies inside ``model``'s boxes."""
        x_ok = np.all(self.states >= model.state_lower - atol) and np.all(self.states <= model.state_upper + atol)
        u_ok = np.all(self.inputs >= model.input_lower - atol) and np.all(self.inputs <= model.input_upper + atol)
        return bool(x_ok and u_ok)


def stack_neighbors(graph, agent, states):
    """Concatenate the in-neighbor states of ``agent`` in ascending index order."""
    nbrs = graph.in_neighbors(agent)
    if not nbrs:
        return np.zeros(0)
    return np.concatenate([np.atleast_1d(np.asarray(states[j], dtype=float)) for j in nbrs])


def rollout(problem, agent, initial_state, inputs, neighbor_traj):
    """Apply agent dynamics recursively.

    Parameters
    ----------
    problem : MpcProblem
    agent : int
    initial_state : array_like, shape (n,)
    inputs : array_like, shape (L, m)
    neighbor_traj : array_like, shape (L, nv)
        Stacked in-neighbor states (``v``) at each step.

    Returns
    -------
    ndarray, shape (L + 1, n)
    """
    model = problem.subsystems[agent]
    x0 = np.asarray(initial_state, dtype=float).reshape(-1)
    inputs = np.asarray(inputs, dtype=float).reshape(-1, model.input_dim)
    nv = problem.v_dim(agent)
    neighbor_traj = np.asarray(neighbor_traj, dtype=float).reshape(-1, nv) if nv else np.zeros((len(inputs), 0))
    if x0.shape != (model.state_dim,):
        raise ContractError(f"initial state of agent {agent} must have dimension {model.state_dim}")
    if len(neighbor_traj) != len(inputs):
        raise ContractError("neighbor trajectory and inputs differ in length")
    states = np.empty((len(inputs) + 1, model.state_dim))
    states[0] = x0
    for t in range(len(inputs)):
        states[t + 1] = model.dynamics(states[t], neighbor_traj[t], inputs[t])
    return states


def simulate(problem, initial_states, inputs, frozen=None):
    """Roll out all agents jointly; coupled states interlock at every step.

    ``frozen`` maps agent index to a fixed state sequence used in place of
    that agent's dynamics (its entry in ``inputs`` may then be ``None``).
    Returns a list of ``(L + 1, n_i)`` arrays.
    """
    frozen = frozen or {}
    n_agents = problem.n_agents
    free = [i for i in range(n_agents) if i not in frozen]
    if not free:
        raise ContractError("simulate needs at least one free agent")
    length = len(inputs[free[0]])
    states = [None] * n_agents
    for i in range(n_agents):
        if i in frozen:
            states[i] = np.asarray(frozen[i], dtype=float)
        else:
            states[i] = np.empty((length + 1, problem.state_dim(i)))
            states[i][0] = initial_states[i]
    graph = problem.dynamics_graph
    for t in range(length):
        for i in free:
            v = stack_neighbors(graph, i, [s[t] if s is not None else None for s in states])
            states[i][t + 1] = problem.subsystems[i].dynamics(states[i][t], v, inputs[i][t])
    return states


def step_system(problem, states, inputs):
    """One true closed-loop step from measured ``states`` under ``inputs``."""
    graph = problem.dynamics_graph
    return [
        np.asarray(problem.subsystems[i].dynamics(states[i], stack_neighbors(graph, i, states), inputs[i]), dtype=float)
        for i in range(problem.n_agents)
    ]


def stage_cost(problem, states, inputs):
    """Sum over agents of ``l_i`` at a single time instant."""
    graph = problem.cost_graph
    return float(
        sum(
            problem.costs[i].evaluate(states[i], stack_neighbors(graph, i, states), inputs[i])
            for i in range(problem.n_agents)
        )
    )


def total_cost(problem, trajectories: Sequence[Trajectory]):
    """Finite-horizon cost: sum of stage costs over ``t`` in ``[k, k+T]`` and agents.

    Cost-graph neighbor states are taken from the other agents' trajectories;
    the trajectories need not obey the dynamics.
    """
    if len(trajectories) != problem.n_agents:
        raise ContractError("one trajectory per agent is required")
    n_stages = len(trajectories[0].inputs)
    total = 0.0
    for t in range(n_stages):
        xs = [tr.states[t] for tr in trajectories]
        us = [tr.inputs[t] for tr in trajectories]
        total += stage_cost(problem, xs, us)
    return total


def plan_cost(problem, initial_states, inputs):
    """Cost of the input plan ``inputs`` rolled out from ``initial_states``."""
    states = simulate(problem, initial_states, inputs)
    return total_cost(problem, [Trajectory(s, u) for s, u in zip(states, inputs)])

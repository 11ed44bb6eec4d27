"""Centralized baseline: the stacked finite-horizon problem as one shooting NLP."""

from __future__ import annotations

import numpy as np

from .local_solver import LocalSubproblem, SolverSettings, backpropagate, box_penalty, solve_local
from .model import simulate, stack_neighbors

CENTRALIZED_SETTINGS = SolverSettings(max_iterations=5000, tolerance=1e-8)


def coupled_cost_gradients(problem, states, inputs):
    """Team stage-cost sum over ``len(inputs[0])`` stages with partials.

    Returns ``(value, gx, gu)``; ``gx[i]`` has the shape of ``states[i]`` and
    collects the agent's own partials plus those it receives through
    neighbors' cost terms.
    """
    graph = problem.cost_graph
    n_agents = problem.n_agents
    n_stages = len(inputs[0])
    gx = [np.zeros_like(states[i]) for i in range(n_agents)]
    gu = [np.zeros_like(inputs[i]) for i in range(n_agents)]
    slices = [problem.neighbor_slices(graph, i) for i in range(n_agents)]
    value = 0.0
    for t in range(n_stages):
        xs = [states[i][t] for i in range(n_agents)]
        for i in range(n_agents):
            w = stack_neighbors(graph, i, xs)
            cost = problem.costs[i]
            value += cost.evaluate(xs[i], w, inputs[i][t])
            dx, dw, du = cost.gradient(xs[i], w, inputs[i][t])
            gx[i][t] += dx
            gu[i][t] += du
            for j, sl in slices[i].items():
                gx[j][t] += dw[sl]
    return value, gx, gu


class CentralizedSubproblem(LocalSubproblem):
    """All agents' input sequences as one decision vector; states by coupled rollout."""

    def __init__(self, problem, initial_states, settings=CENTRALIZED_SETTINGS):
        self.problem = problem
        self.initial_states = [np.asarray(x, dtype=float) for x in initial_states]
        self.settings = settings
        n_stages = problem.horizon + 1
        self._shapes = [(n_stages, problem.input_dim(i)) for i in range(problem.n_agents)]
        self._offsets = np.cumsum([0] + [a * b for a, b in self._shapes])
        self.lower = np.concatenate([np.tile(s.input_lower, n_stages) for s in problem.subsystems])
        self.upper = np.concatenate([np.tile(s.input_upper, n_stages) for s in problem.subsystems])

    def split(self, z):
        return [z[self._offsets[i]:self._offsets[i + 1]].reshape(shape) for i, shape in enumerate(self._shapes)]

    def join(self, inputs):
        return np.concatenate([np.asarray(u, dtype=float).reshape(-1) for u in inputs])

    def objective(self, z):
        problem = self.problem
        inputs = self.split(z)
        states = simulate(problem, self.initial_states, inputs)
        value, gx, gu = coupled_cost_gradients(problem, states, inputs)
        T = problem.horizon
        for i, model in enumerate(problem.subsystems):
            if model.state_bounded and self.settings.state_penalty > 0:
                pen, gpen = box_penalty(states[i][1:T + 1], model.state_lower, model.state_upper,
                                        self.settings.state_penalty)
                value += pen
                gx[i][1:T + 1] += gpen
        free = range(problem.n_agents)
        grad_u, _ = backpropagate(problem, states, inputs, free, dict(enumerate(gx)), dict(enumerate(gu)))
        return value, self.join([grad_u[i] for i in free])

    def unpack(self, z):
        inputs = self.split(z)
        return {"inputs": inputs, "states": simulate(self.problem, self.initial_states, inputs)}


def solve_centralized(problem, initial_states, warm_inputs=None, settings=None, extra_starts=()):
    """Solve the stacked problem; returns a LocalSolution whose parts hold inputs and states."""
    settings = settings or CENTRALIZED_SETTINGS
    sub = CentralizedSubproblem(problem, initial_states, settings)
    warm = None if warm_inputs is None else sub.join(warm_inputs)
    starts = [sub.join(s) for s in extra_starts]
    return solve_local(sub, warm, settings, starts)

"""Dual decomposition with gradient ascent on consistency multipliers.

Each agent owns slack copies ``vbar`` (dynamics neighbors) and ``wbar`` (cost
neighbors) of the states it reads. The copies are tied to the neighbors'
forecasts through multipliers ``lam`` and ``mu``. Agent ``i``'s subproblem is

    sum_t  l_i(x_i, wbar_i, u_i) + lam_i . vbar_i + mu_i . wbar_i
           - sum_{j reads i} (lam_{j,i} + mu_{j,i}) . x_i

The dynamics slack at the last horizon step only drives the terminal state,
which carries no cost. Its multiplier is therefore held at zero (any other
value makes the subproblem unbounded), the slack itself is not optimized,
and its consistency residual is ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ContractError, NumericalError, SolverFailure
from .local_solver import LocalSubproblem, SolverSettings, backpropagate, box_penalty, solve_local
from .model import rollout, simulate, stack_neighbors


@dataclass(frozen=True)
class Multipliers:
    """Per-agent multiplier sequences, rows indexed by horizon step.

    ``lam[i]`` has shape ``(T + 1, v_dim(i))`` and ``mu[i]`` shape
    ``(T + 1, w_dim(i))``; columns follow the ascending in-neighbor order.
    """

    lam: tuple
    mu: tuple

    @classmethod
    def zeros(cls, problem):
        n = problem.horizon + 1
        return cls(
            tuple(np.zeros((n, problem.v_dim(i))) for i in range(problem.n_agents)),
            tuple(np.zeros((n, problem.w_dim(i))) for i in range(problem.n_agents)),
        )

    def block(self, problem, kind, owner, neighbor):
        """Multiplier block of ``owner`` for neighbor ``neighbor`` (``kind`` is 'lam' or 'mu')."""
        graph = problem.dynamics_graph if kind == "lam" else problem.cost_graph
        slices = problem.neighbor_slices(graph, owner)
        if neighbor not in slices:
            raise ContractError(f"agent {neighbor} is not a {kind} neighbor of agent {owner}")
        arr = self.lam[owner] if kind == "lam" else self.mu[owner]
        return arr[:, slices[neighbor]]

    def incoming(self, problem, agent):
        """``sum_j lam_{j,agent} + mu_{j,agent}``: price on ``agent``'s own forecast."""
        total = np.zeros((problem.horizon + 1, problem.state_dim(agent)))
        for j in problem.dynamics_graph.out_neighbors(agent):
            total += self.block(problem, "lam", j, agent)
        for j in problem.cost_graph.out_neighbors(agent):
            total += self.block(problem, "mu", j, agent)
        return total

    def shifted(self):
        """Advance one step in time, zero-filling the last row."""

        def shift(a):
            out = np.zeros_like(a)
            out[:-1] = a[1:]
            return out

        return Multipliers(tuple(shift(a) for a in self.lam), tuple(shift(a) for a in self.mu))

    def check(self, problem):
        n = problem.horizon + 1
        for i in range(problem.n_agents):
            if self.lam[i].shape != (n, problem.v_dim(i)) or self.mu[i].shape != (n, problem.w_dim(i)):
                raise ContractError(f"multiplier blocks of agent {i} have the wrong shape")


@dataclass(frozen=True)
class StepSizes:
    """Ascent steps ``h`` (for ``lam``) and ``g`` (for ``mu``); 'diminishing' divides by ``s``."""

    h: float = 0.5
    g: float = None
    schedule: str = "constant"

    def __post_init__(self):
        if self.g is None:
            object.__setattr__(self, "g", self.h)
        if self.h <= 0 or self.g <= 0:
            raise ContractError("step sizes must be positive")
        if self.schedule not in ("constant", "diminishing"):
            raise ContractError("schedule must be 'constant' or 'diminishing'")

    def at(self, s):
        if self.schedule == "diminishing":
            return self.h / s, self.g / s
        return self.h, self.g


class DualSubproblem(LocalSubproblem):
    """Agent ``i``'s Lagrangian term over ``(u, vbar[:T], wbar)``."""

    def __init__(self, problem, agent, multipliers, initial_states, vbar_terminal=None, settings=None):
        settings = settings or SolverSettings()
        self.problem = problem
        self.agent = agent
        self.model = problem.subsystems[agent]
        self.cost = problem.costs[agent]
        self.x0 = np.asarray(initial_states[agent], dtype=float)
        self.initial_states = initial_states
        self.T = T = problem.horizon
        self.m = self.model.input_dim
        self.nv = problem.v_dim(agent)
        self.nw = problem.w_dim(agent)
        multipliers.check(problem)
        self.lam = multipliers.lam[agent]
        self.mu = multipliers.mu[agent]
        self.incoming = multipliers.incoming(problem, agent)
        if vbar_terminal is None:
            vbar_terminal = stack_neighbors(problem.dynamics_graph, agent, initial_states)
        self.vbar_terminal = np.asarray(vbar_terminal, dtype=float).reshape(self.nv)
        self.penalty = settings.state_penalty if self.model.state_bounded else 0.0
        self._sizes = ((T + 1) * self.m, T * self.nv, (T + 1) * self.nw)
        vlo, vhi = problem.slack_box(problem.dynamics_graph, agent)
        wlo, whi = problem.slack_box(problem.cost_graph, agent)
        self.lower = np.concatenate([np.tile(self.model.input_lower, T + 1), np.tile(vlo, T), np.tile(wlo, T + 1)])
        self.upper = np.concatenate([np.tile(self.model.input_upper, T + 1), np.tile(vhi, T), np.tile(whi, T + 1)])

    def split(self, z):
        a, b, _ = self._sizes
        U = z[:a].reshape(self.T + 1, self.m)
        Vb = z[a:a + b].reshape(self.T, self.nv)
        Wb = z[a + b:].reshape(self.T + 1, self.nw)
        return U, np.vstack([Vb, self.vbar_terminal[None, :]]), Wb

    def join(self, U, V, W):
        return np.concatenate([np.ravel(U), np.ravel(np.asarray(V)[:self.T]), np.ravel(W)])

    def objective(self, z):
        T, agent = self.T, self.agent
        U, V, W = self.split(z)
        states = rollout(self.problem, agent, self.x0, U, V)
        gx = np.zeros_like(states)
        gu = np.zeros_like(U)
        gw = np.array(self.mu, dtype=float)
        value = float(np.sum(self.lam[:T] * V[:T]) + np.sum(self.mu * W) - np.sum(self.incoming * states[:T + 1]))
        for t in range(T + 1):
            value += self.cost.evaluate(states[t], W[t], U[t])
            dx, dw, du = self.cost.gradient(states[t], W[t], U[t])
            gx[t] += dx
            gw[t] += dw
            gu[t] += du
        gx[:T + 1] -= self.incoming
        if self.penalty:
            pen, gpen = box_penalty(states[1:T + 1], self.model.state_lower, self.model.state_upper, self.penalty)
            value += pen
            gx[1:T + 1] += gpen
        xs = [None] * self.problem.n_agents
        us = [None] * self.problem.n_agents
        xs[agent], us[agent] = states, U
        grad_u, grad_v = backpropagate(self.problem, xs, us, [agent], {agent: gx}, {agent: gu}, {agent: V})
        gv = self.lam[:T] + grad_v[agent][:T]
        return value, self.join(grad_u[agent], gv, gw)

    def default_start(self):
        """Input-box midpoint; slacks at the neighbors' current states."""
        z = super().default_start()
        a, b, _ = self._sizes
        U = z[:a]
        V = np.tile(stack_neighbors(self.problem.dynamics_graph, self.agent, self.initial_states), (self.T + 1, 1))
        W = np.tile(stack_neighbors(self.problem.cost_graph, self.agent, self.initial_states), (self.T + 1, 1))
        return np.clip(self.join(U, V, W), self.lower, self.upper)

    def unpack(self, z):
        U, V, W = self.split(z)
        return {"inputs": U, "vbar": V, "wbar": W, "states": rollout(self.problem, self.agent, self.x0, U, V)}


def build_local_objective(problem, agent, multipliers, initial_states, vbar_terminal=None, settings=None):
    """Agent ``agent``'s subproblem for the given multipliers and measured states."""
    if not 0 <= agent < problem.n_agents:
        raise IndexError(f"agent {agent} out of range")
    return DualSubproblem(problem, agent, multipliers, initial_states, vbar_terminal, settings)


@dataclass(frozen=True)
class AgentSolution:
    inputs: np.ndarray
    states: np.ndarray
    vbar: np.ndarray
    wbar: np.ndarray
    objective: float
    converged: bool
    iterations: int
    z: np.ndarray


@dataclass(frozen=True)
class DualIterate:
    """Multipliers at round ``s`` together with the agent minimizers they produce."""

    s: int
    initial_states: tuple
    multipliers: Multipliers
    agents: tuple
    value: float
    residual: float

    @property
    def inputs(self):
        return [a.inputs for a in self.agents]

    @property
    def states(self):
        return [a.states for a in self.agents]

    def trace_row(self, k=0):
        row = {"k": k, "s": self.s, "dual_value": self.value, "residual": self.residual}
        for i, a in enumerate(self.agents):
            row[f"objective_{i}"] = a.objective
        return row


def _solve_agents(problem, initial_states, multipliers, settings, warm=None, vbar_terminal=None,
                  restarts=False, anchors=None):
    """Solve every agent's subproblem.

    ``warm`` holds a start per agent (flat vector or ``(U, V, W)``); ``anchors``
    adds one more start per agent, typically a consistent shifted plan, and
    ``restarts`` adds the input-box midpoint (keeping the warm slacks).
    """
    out = []
    for i in range(problem.n_agents):
        sub = build_local_objective(
            problem, i, multipliers, initial_states,
            None if vbar_terminal is None else vbar_terminal[i], settings,
        )
        warm_z = _as_flat(sub, None if warm is None else warm[i])
        extra = []
        anchor = _as_flat(sub, None if anchors is None else anchors[i])
        if anchor is not None and (warm_z is None or not np.array_equal(anchor, warm_z)):
            extra.append(anchor)
        if restarts:
            mid = sub.default_start()
            base = warm_z if warm_z is not None else anchor
            if base is not None:
                a = sub._sizes[0]
                mid[a:] = base[a:]
            extra.append(mid)
        try:
            sol = solve_local(sub, warm_z, settings, extra)
        except NumericalError as exc:
            raise SolverFailure(str(exc), agent=i) from exc
        p = sol.parts
        out.append(AgentSolution(p["inputs"], p["states"], p["vbar"], p["wbar"], sol.value,
                                 sol.converged, sol.iterations, sol.z))
    return tuple(out)


def _as_flat(sub, w):
    if w is None:
        return None
    if isinstance(w, np.ndarray) and w.ndim == 1:
        return w
    return sub.join(*w)


def consistent_starts(problem, initial_states, inputs):
    """Per-agent ``(U, V, W)`` with slacks copied from the joint rollout of ``inputs``.

    At such a point every consistency residual vanishes, so the agents'
    objectives sum to the plan's cost.
    """
    states = simulate(problem, initial_states, inputs)
    T = problem.horizon
    out = []
    for i in range(problem.n_agents):
        V = np.array([stack_neighbors(problem.dynamics_graph, i, [s[t] for s in states]) for t in range(T + 1)])
        W = np.array([stack_neighbors(problem.cost_graph, i, [s[t] for s in states]) for t in range(T + 1)])
        out.append((np.asarray(inputs[i], dtype=float), V.reshape(T + 1, problem.v_dim(i)),
                    W.reshape(T + 1, problem.w_dim(i))))
    return out


def _forecasts(problem, agents):
    """Stacked neighbor forecasts ``(vhat_i, what_i)`` rows ``0..T``."""
    T = problem.horizon
    vhat, what = [], []
    for i in range(problem.n_agents):
        rows_v, rows_w = [], []
        for t in range(T + 1):
            xs = [a.states[t] for a in agents]
            rows_v.append(stack_neighbors(problem.dynamics_graph, i, xs))
            rows_w.append(stack_neighbors(problem.cost_graph, i, xs))
        vhat.append(np.array(rows_v).reshape(T + 1, problem.v_dim(i)))
        what.append(np.array(rows_w).reshape(T + 1, problem.w_dim(i)))
    return vhat, what


def residuals(problem, agents):
    """Consistency residuals ``(vbar - vhat, wbar - what)`` per agent.

    The last dynamics row is inert and reported as zero.
    """
    vhat, what = _forecasts(problem, agents)
    rv, rw = [], []
    for i, a in enumerate(agents):
        r = a.vbar - vhat[i]
        r[-1] = 0.0
        rv.append(r)
        rw.append(a.wbar - what[i])
    return rv, rw


def _value(problem, multipliers, agents):
    rv, rw = residuals(problem, agents)
    total = 0.0
    for i, a in enumerate(agents):
        cost = problem.costs[i]
        for t in range(problem.horizon + 1):
            total += cost.evaluate(a.states[t], a.wbar[t], a.inputs[t])
        total += float(np.sum(multipliers.lam[i] * rv[i]) + np.sum(multipliers.mu[i] * rw[i]))
    return total


def _max_residual(problem, agents):
    rv, rw = residuals(problem, agents)
    return float(max([np.max(np.abs(r), initial=0.0) for r in rv + rw], default=0.0))


def dual_value(problem, iterate):
    """Lagrangian value at the iterate's multipliers and minimizers."""
    return _value(problem, iterate.multipliers, iterate.agents)


def primal_residual(problem, iterate):
    """Max-norm of all consistency residuals; zero iff slacks match forecasts."""
    return _max_residual(problem, iterate.agents)


def initial_iterate(problem, initial_states, multipliers=None, settings=None, warm_inputs=None,
                    restarts=False, anchors=None):
    """First round: solve every agent for ``multipliers`` (zeros by default).

    With ``warm_inputs`` each agent starts from that plan, its slacks set to
    the joint rollout so the start is consistent.
    """
    initial_states = tuple(np.asarray(x, dtype=float) for x in initial_states)
    multipliers = multipliers or Multipliers.zeros(problem)
    warm = None
    vbar_terminal = None
    if warm_inputs is not None:
        warm = consistent_starts(problem, initial_states, warm_inputs)
        vbar_terminal = [w[1][-1] for w in warm]
    agents = _solve_agents(problem, initial_states, multipliers, settings, warm, vbar_terminal,
                           restarts=restarts, anchors=anchors)
    return DualIterate(1, initial_states, multipliers, agents,
                       _value(problem, multipliers, agents), _max_residual(problem, agents))


def update_multipliers(problem, iterate, steps):
    """Gradient-ascent step ``lam + h (vbar - vhat)``, ``mu + g (wbar - what)``."""
    h, g = steps.at(iterate.s)
    rv, rw = residuals(problem, iterate.agents)
    m = iterate.multipliers
    return Multipliers(
        tuple(m.lam[i] + h * rv[i] for i in range(problem.n_agents)),
        tuple(m.mu[i] + g * rw[i] for i in range(problem.n_agents)),
    )


def dual_iteration(problem, iterate, steps=StepSizes(), settings=None, restarts=False, anchors=None):
    """Update the multipliers from the iterate's residuals, then re-solve every agent."""
    multipliers = update_multipliers(problem, iterate, steps)
    vhat, _ = _forecasts(problem, iterate.agents)
    warm = [a.z for a in iterate.agents]
    agents = _solve_agents(problem, iterate.initial_states, multipliers, settings, warm,
                           vbar_terminal=[v[-1] for v in vhat], restarts=restarts, anchors=anchors)
    return replace(
        iterate,
        s=iterate.s + 1,
        multipliers=multipliers,
        agents=agents,
        value=_value(problem, multipliers, agents),
        residual=_max_residual(problem, agents),
    )


def solve_dual(problem, initial_states, steps=StepSizes(), settings=None, tolerance=1e-8,
               max_rounds=1000, multipliers=None):
    """Iterate until the consistency residual drops to ``tolerance``; returns all iterates."""
    it = initial_iterate(problem, initial_states, multipliers, settings)
    history = [it]
    while it.residual > tolerance and it.s < max_rounds:
        it = dual_iteration(problem, it, steps, settings)
        history.append(it)
    return history

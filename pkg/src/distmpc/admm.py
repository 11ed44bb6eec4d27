"""ADMM splitting: proximal steps on the stage costs, projection onto the
dynamics-consistency set, scaled dual updates.

Agent ``i`` owns per-step blocks ``y_i[t] = [xhat, wbar, uhat, vbar]`` for
``t = 0..T``. The consistency set ``C`` requires ``xhat[0]`` to equal the
measured state, the dynamics recursion to hold, every coordinate to respect
its box and every slack to equal the stacked neighbor forecasts.

The scaled iteration is

    y     = argmin  sum l(y) + rho/2 ||y - (zeta - gamma)||^2
    zeta' = Pi_C(y + gamma)
    gamma' = gamma + y - zeta'

An :class:`AdmmIterate` stores ``(zeta, gamma)`` together with the proximal
response ``y`` to them, so its ``value`` is the proximal objective at ``y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ContractError, InfeasibleError, NumericalError, SolverFailure
from .local_solver import LocalSubproblem, SolverSettings, backpropagate, box_penalty, solve_local
from .model import simulate, stack_neighbors

PROJECTION_SETTINGS = SolverSettings(max_iterations=5000, tolerance=1e-10)


@dataclass(frozen=True)
class BlockLayout:
    """Column layout of one agent's ``y`` block."""

    n: int
    nw: int
    m: int
    nv: int

    @classmethod
    def of(cls, problem, agent):
        return cls(problem.state_dim(agent), problem.w_dim(agent), problem.input_dim(agent), problem.v_dim(agent))

    @property
    def width(self):
        return self.n + self.nw + self.m + self.nv

    @property
    def x(self):
        return slice(0, self.n)

    @property
    def w(self):
        return slice(self.n, self.n + self.nw)

    @property
    def u(self):
        a = self.n + self.nw
        return slice(a, a + self.m)

    @property
    def v(self):
        a = self.n + self.nw + self.m
        return slice(a, a + self.nv)

    def pack(self, x, w, u, v):
        rows = len(x)
        return np.hstack([np.reshape(x, (rows, self.n)), np.reshape(w, (rows, self.nw)),
                          np.reshape(u, (rows, self.m)), np.reshape(v, (rows, self.nv))])

    def lower_upper(self, problem, agent):
        model = problem.subsystems[agent]
        wlo, whi = problem.slack_box(problem.cost_graph, agent)
        vlo, vhi = problem.slack_box(problem.dynamics_graph, agent)
        lo = np.concatenate([model.state_lower, wlo, model.input_lower, vlo])
        hi = np.concatenate([model.state_upper, whi, model.input_upper, vhi])
        return lo, hi


def layouts(problem):
    return [BlockLayout.of(problem, i) for i in range(problem.n_agents)]


def zero_blocks(problem):
    return tuple(np.zeros((problem.horizon + 1, lay.width)) for lay in layouts(problem))


def blocks_from_plan(problem, initial_states, inputs, frozen=None):
    """Consistent blocks for an input plan: coupled rollout plus stacked slacks.

    ``inputs`` rows ``0..T`` per agent. With ``frozen`` (agent -> state rows
    ``0..T``) those agents' states are taken as given.
    """
    T = problem.horizon
    states = simulate(problem, initial_states, inputs, frozen)
    out = []
    for i in range(problem.n_agents):
        lay = BlockLayout.of(problem, i)
        xs = states[i][:T + 1]
        u = inputs[i] if inputs[i] is not None else np.zeros((T + 1, lay.m))
        w = np.array([stack_neighbors(problem.cost_graph, i, [s[t] for s in states]) for t in range(T + 1)])
        v = np.array([stack_neighbors(problem.dynamics_graph, i, [s[t] for s in states]) for t in range(T + 1)])
        out.append(lay.pack(xs, w, u, v))
    return tuple(out), states


class ConsistencySet:
    """The set ``C`` for the agents in ``agents``.

    Agents outside ``agents`` are frozen at ``frozen[j]`` (their last
    ``zeta`` block): their states enter the slack equalities as fixed data.
    With ``t`` given, membership only inspects rows ``0..t``.
    """

    def __init__(self, problem, initial_states, agents=None, frozen=None, t=None):
        self.problem = problem
        self.initial_states = tuple(np.asarray(x, dtype=float) for x in initial_states)
        self.agents = tuple(range(problem.n_agents)) if agents is None else tuple(agents)
        self.frozen = dict(frozen or {})
        missing = [j for j in range(problem.n_agents) if j not in self.agents and j not in self.frozen]
        if missing:
            raise ContractError(f"agents {missing} are neither projected nor frozen")
        if t is not None and not 0 <= t <= problem.horizon:
            raise ContractError("t must lie in 0..T")
        self.t = problem.horizon if t is None else t
        for i in self.agents:
            model = problem.subsystems[i]
            if np.any(model.state_lower > self.initial_states[i]) or np.any(model.state_upper < self.initial_states[i]):
                raise InfeasibleError(f"measured state of agent {i} lies outside its state box")

    def _state_rows(self, point):
        lays = layouts(self.problem)
        rows = []
        for j in range(self.problem.n_agents):
            src = point[j] if j in self.agents else self.frozen[j]
            rows.append(np.asarray(src)[:, lays[j].x])
        return rows

    def membership_residual(self, point):
        """Largest violation of any condition defining the set (0 inside)."""
        problem = self.problem
        lays = layouts(problem)
        xs = self._state_rows(point)
        worst = 0.0
        last = self.t
        for i in self.agents:
            lay, blk, model = lays[i], np.asarray(point[i]), problem.subsystems[i]
            x, w, u, v = blk[:, lay.x], blk[:, lay.w], blk[:, lay.u], blk[:, lay.v]
            worst = max(worst, float(np.max(np.abs(x[0] - self.initial_states[i]))))
            for t in range(last + 1):
                if t < last:
                    nxt = model.dynamics(x[t], v[t], u[t])
                    worst = max(worst, float(np.max(np.abs(x[t + 1] - nxt))))
                what = stack_neighbors(problem.cost_graph, i, [r[t] for r in xs])
                vhat = stack_neighbors(problem.dynamics_graph, i, [r[t] for r in xs])
                if lay.nw:
                    worst = max(worst, float(np.max(np.abs(w[t] - what))))
                if lay.nv:
                    worst = max(worst, float(np.max(np.abs(v[t] - vhat))))
            lo, hi = lay.lower_upper(problem, i)
            viol = np.maximum(lo - blk[:last + 1], 0.0) + np.maximum(blk[:last + 1] - hi, 0.0)
            worst = max(worst, float(np.max(viol, initial=0.0)))
        return worst

    def contains(self, point, tol=1e-8):
        return self.membership_residual(point) <= tol


class _ProjectionSubproblem(LocalSubproblem):
    """Least squares ``sum ||block(U) - point||^2`` over the projected agents' inputs."""

    def __init__(self, cset, point, settings):
        self.cset = cset
        self.problem = problem = cset.problem
        self.point = [np.asarray(p, dtype=float) for p in point]
        self.free = cset.agents
        self.lays = layouts(problem)
        self.T = T = problem.horizon
        self.penalty = settings.state_penalty
        self._shapes = [(T + 1, self.lays[i].m) for i in self.free]
        self._offsets = np.cumsum([0] + [a * b for a, b in self._shapes])
        models = problem.subsystems
        self.lower = np.concatenate([np.tile(models[i].input_lower, T + 1) for i in self.free])
        self.upper = np.concatenate([np.tile(models[i].input_upper, T + 1) for i in self.free])
        self.agent = self.free[0] if len(self.free) == 1 else None

    def inputs(self, z):
        out = [None] * self.problem.n_agents
        for k, i in enumerate(self.free):
            out[i] = z[self._offsets[k]:self._offsets[k + 1]].reshape(self._shapes[k])
        return out

    def join(self, inputs):
        return np.concatenate([np.asarray(inputs[i], dtype=float).reshape(-1) for i in self.free])

    def _frozen_states(self):
        return {j: np.asarray(b)[:, self.lays[j].x] for j, b in self.cset.frozen.items()}

    def blocks(self, z):
        inputs = self.inputs(z)
        blocks, states = blocks_from_plan(self.problem, self.cset.initial_states, inputs, self._frozen_states())
        return blocks, states, inputs

    def objective(self, z):
        problem, T = self.problem, self.T
        blocks, states, inputs = self.blocks(z)
        value = 0.0
        gx = {i: np.zeros_like(states[i]) for i in self.free}
        gu = {}
        for i in self.free:
            lay = self.lays[i]
            r = blocks[i] - self.point[i]
            value += float(np.sum(r * r))
            gx[i][:T + 1] += 2.0 * r[:, lay.x]
            gu[i] = 2.0 * r[:, lay.u]
            for graph, part in ((problem.cost_graph, lay.w), (problem.dynamics_graph, lay.v)):
                for j, sl in problem.neighbor_slices(graph, i).items():
                    if j in gx:
                        gx[j][:T + 1] += 2.0 * r[:, part][:, sl]
            model = problem.subsystems[i]
            if model.state_bounded and self.penalty:
                pen, gpen = box_penalty(states[i][1:T + 1], model.state_lower, model.state_upper, self.penalty)
                value += pen
                gx[i][1:T + 1] += gpen
        grad_u, _ = backpropagate(problem, states, inputs, self.free, gx, gu)
        return value, self.join(grad_u)

    def unpack(self, z):
        blocks, _, inputs = self.blocks(z)
        return {"blocks": blocks, "inputs": inputs}


def project_consistency(cset, point, settings=None):
    """Approximate Euclidean projection of ``point`` onto ``cset``.

    Inputs are chosen by least squares; states and slacks follow by rollout,
    so the result is a member of the set by construction (state boxes are
    enforced by penalty). Returns per-agent blocks; frozen agents keep their
    frozen blocks.
    """
    settings = settings or PROJECTION_SETTINGS
    sub = _ProjectionSubproblem(cset, point, settings)
    warm = sub.join([np.asarray(point[i])[:, sub.lays[i].u] if i in sub.free else None
                     for i in range(cset.problem.n_agents)])
    try:
        sol = solve_local(sub, warm, settings)
    except NumericalError as exc:
        raise SolverFailure(str(exc), agent=sub.agent) from exc
    blocks = sol.parts["blocks"]
    return tuple(blocks[i] if i in cset.agents else np.asarray(cset.frozen[i], dtype=float)
                 for i in range(cset.problem.n_agents))


class ProxSubproblem(LocalSubproblem):
    """``sum_t l_i(y[t]) + rho/2 ||y - center||^2`` over the block box; no dynamics."""

    def __init__(self, problem, agent, center, rho):
        self.problem = problem
        self.agent = agent
        self.lay = BlockLayout.of(problem, agent)
        self.cost = problem.costs[agent]
        self.rows = problem.horizon + 1
        self.center = np.asarray(center, dtype=float).reshape(self.rows, self.lay.width)
        self.rho = float(rho)
        lo, hi = self.lay.lower_upper(problem, agent)
        self.lower = np.tile(lo, self.rows)
        self.upper = np.tile(hi, self.rows)

    def objective(self, z):
        lay = self.lay
        y = z.reshape(self.rows, lay.width)
        r = y - self.center
        value = 0.5 * self.rho * float(np.sum(r * r))
        grad = self.rho * r
        for t in range(self.rows):
            x, w, u = y[t, lay.x], y[t, lay.w], y[t, lay.u]
            value += self.cost.evaluate(x, w, u)
            dx, dw, du = self.cost.gradient(x, w, u)
            grad[t, lay.x] += dx
            grad[t, lay.w] += dw
            grad[t, lay.u] += du
        return value, grad.reshape(-1)

    def stage_sum(self, y):
        lay = self.lay
        return float(sum(self.cost.evaluate(r[lay.x], r[lay.w], r[lay.u]) for r in y))

    def unpack(self, z):
        return {"y": z.reshape(self.rows, self.lay.width)}


def admm_y_update(problem, zeta, gamma, agent, rho, settings=None, warm=None):
    """Proximal step of agent ``agent`` toward ``zeta - gamma``; returns ``(y, value)``."""
    center = np.asarray(zeta[agent], dtype=float) - np.asarray(gamma[agent], dtype=float)
    sub = ProxSubproblem(problem, agent, center, rho)
    start = center.reshape(-1) if warm is None else np.asarray(warm, dtype=float).reshape(-1)
    try:
        sol = solve_local(sub, start, settings)
    except NumericalError as exc:
        raise SolverFailure(str(exc), agent=agent) from exc
    return sol.parts["y"].copy(), sol.value


def _squared_norm(blocks):
    return math.fsum(float(np.sum(np.asarray(b) ** 2)) for b in blocks)


@dataclass(frozen=True)
class AdmmIterate:
    """``zeta``, ``gamma`` at round ``s`` and the proximal response ``y`` to them."""

    s: int
    initial_states: tuple
    y: tuple
    zeta: tuple
    gamma: tuple
    rho: float
    value: float
    coupling: str = "joint"
    dual_residual: float = 0.0

    def __post_init__(self):
        if self.rho <= 0:
            raise ContractError("rho must be positive")
        for a, b, c in zip(self.y, self.zeta, self.gamma):
            if not np.shape(a) == np.shape(b) == np.shape(c):
                raise ContractError("y, zeta and gamma blocks must share shapes")

    @property
    def primal_residual(self):
        """``||y - zeta||`` over all agents."""
        return math.sqrt(_squared_norm([a - b for a, b in zip(self.y, self.zeta)]))

    def inputs(self, problem):
        """Input plans carried by ``zeta`` (dynamics-consistent)."""
        return [np.asarray(z)[:, BlockLayout.of(problem, i).u].copy() for i, z in enumerate(self.zeta)]

    def trace_row(self, k=0):
        return {"k": k, "s": self.s, "admm_value": self.value,
                "primal_residual": self.primal_residual, "dual_residual": self.dual_residual}


def admm_value(problem, iterate):
    """``sum_i sum_t l_i(y) + rho/2 ||y - zeta + gamma||^2`` at the iterate."""
    total = 0.0
    for i in range(problem.n_agents):
        y = np.asarray(iterate.y[i])
        sub = ProxSubproblem(problem, i, np.asarray(iterate.zeta[i]) - np.asarray(iterate.gamma[i]), iterate.rho)
        r = y - sub.center
        total += sub.stage_sum(y) + 0.5 * iterate.rho * float(np.sum(r * r))
    return total


def _respond(problem, zeta, gamma, rho, settings, warm=None):
    ys = []
    for i in range(problem.n_agents):
        y, _ = admm_y_update(problem, zeta, gamma, i, rho, settings, None if warm is None else warm[i])
        ys.append(y)
    return tuple(ys)


def _project(problem, initial_states, point, zeta_prev, coupling, settings):
    if coupling == "joint":
        return project_consistency(ConsistencySet(problem, initial_states), point, settings)
    if coupling != "frozen":
        raise ContractError("coupling must be 'joint' or 'frozen'")
    out = []
    for i in range(problem.n_agents):
        frozen = {j: zeta_prev[j] for j in range(problem.n_agents) if j != i}
        cset = ConsistencySet(problem, initial_states, agents=(i,), frozen=frozen)
        out.append(project_consistency(cset, point, settings)[i])
    return tuple(out)


def initial_admm_iterate(problem, initial_states, warm_inputs=None, rho=1.0, settings=None, coupling="joint"):
    """Round 1: ``zeta`` from the rollout of ``warm_inputs`` (box midpoint if absent), ``gamma = 0``."""
    initial_states = tuple(np.asarray(x, dtype=float) for x in initial_states)
    T = problem.horizon
    if warm_inputs is None:
        warm_inputs = []
        for model in problem.subsystems:
            lo, hi = model.input_lower, model.input_upper
            mid = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (np.nan_to_num(lo) + np.nan_to_num(hi)), 0.0)
            warm_inputs.append(np.tile(np.clip(mid, lo, hi), (T + 1, 1)))
    warm_inputs = [np.clip(np.asarray(u, dtype=float), m.input_lower, m.input_upper)
                   for u, m in zip(warm_inputs, problem.subsystems)]
    zeta, _ = blocks_from_plan(problem, initial_states, warm_inputs)
    gamma = zero_blocks(problem)
    y = _respond(problem, zeta, gamma, rho, settings)
    it = AdmmIterate(1, initial_states, y, zeta, gamma, float(rho), 0.0, coupling)
    return replace(it, value=admm_value(problem, it))


def admm_iteration(problem, iterate, settings=None, projection_settings=None):
    """Projection, exact scaled-dual update, then the proximal response."""
    point = tuple(a + b for a, b in zip(iterate.y, iterate.gamma))
    zeta = _project(problem, iterate.initial_states, point, iterate.zeta, iterate.coupling, projection_settings)
    gamma = tuple(g + (y - z) for g, y, z in zip(iterate.gamma, iterate.y, zeta))
    y = _respond(problem, zeta, gamma, iterate.rho, settings, warm=iterate.y)
    dual_res = iterate.rho * math.sqrt(_squared_norm([a - b for a, b in zip(zeta, iterate.zeta)]))
    it = replace(iterate, s=iterate.s + 1, y=y, zeta=zeta, gamma=gamma, dual_residual=dual_res)
    return replace(it, value=admm_value(problem, it))


def solve_admm(problem, initial_states, rho=1.0, iterations=500, settings=None, coupling="joint",
               warm_inputs=None, tolerance=0.0):
    """Run up to ``iterations`` rounds (stopping early once ``||y - zeta|| <= tolerance``)."""
    it = initial_admm_iterate(problem, initial_states, warm_inputs, rho, settings, coupling)
    history = [it]
    while it.s < iterations and not (tolerance > 0 and it.primal_residual <= tolerance):
        it = admm_iteration(problem, it, settings)
        history.append(it)
    return history

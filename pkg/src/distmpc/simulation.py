"""Receding-horizon closed loop driven by dual decomposition, ADMM or a
centralized solve, with the early-termination certificate kept alongside."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import admm as _admm
from . import dual_decomp as _dual
from .centralized import CENTRALIZED_SETTINGS, solve_centralized
from .exceptions import ContractError, SolverFailure
from .local_solver import SolverSettings
from .model import plan_cost, stage_cost, step_system
from .termination import (
    CertificateState,
    check_stop_admm,
    check_stop_dual,
    closed_form_error,
    shift_controls,
    stop_margin,
    tilde_v,
    update_error,
)

METHODS = ("dual", "admm", "centralized")


@dataclass(frozen=True)
class ControllerOptions:
    """Per-step iteration controls shared by the distributed methods.

    ``termination='certificate'`` stops at the first round whose candidate
    passes the stopping test; ``'converged'`` iterates until the consistency
    residual drops below ``residual_tolerance`` (or ``s_max``) and only
    records whether the test holds.

    ``warm_multipliers`` starts each step from the previous step's prices
    after one more ascent step on its final residuals, shifted one slot
    forward; otherwise every step starts from zero prices.

    ``steps=None`` uses the scenario's ``dual_step`` for both ``h`` and ``g``
    (0.5 for a bare problem).
    """

    solver: SolverSettings = SolverSettings()
    steps: _dual.StepSizes = None
    rho: float = 1.0
    theta: float = None
    s_max: int = 200
    warm_multipliers: bool = True
    termination: str = "certificate"
    residual_tolerance: float = 1e-6
    restarts: bool = True
    coupling: str = "joint"
    centralized: SolverSettings = CENTRALIZED_SETTINGS
    reference: bool = False
    trace: bool = False

    def __post_init__(self):
        if self.s_max < 1:
            raise ContractError("s_max must be at least 1")
        if self.rho <= 0:
            raise ContractError("rho must be positive")
        if self.theta is not None and self.theta <= 0:
            raise ContractError("theta must be positive")
        if self.termination not in ("certificate", "converged"):
            raise ContractError("termination must be 'certificate' or 'converged'")


@dataclass
class StepRecord:
    k: int
    states: list
    inputs: list
    stage_cost: float
    iterations: int
    certified: bool
    value: float
    tilde_v: float
    tilde_v_next: float
    e: float
    e_closed_form: float
    margin: float
    bound_slack: float
    reference_value: float = math.nan


@dataclass
class RunLog:
    scenario: str
    method: str
    alpha: float
    initial_states: tuple
    records: list = field(default_factory=list)
    final_states: list = None
    v0: float = None
    theta: float = 0.0
    traces: list = field(default_factory=list)

    @property
    def steps(self):
        return len(self.records)

    @property
    def stage_costs(self):
        return [r.stage_cost for r in self.records]

    @property
    def total_cost(self):
        return math.fsum(self.stage_costs)

    @property
    def certified_fraction(self):
        return sum(r.certified for r in self.records) / len(self.records) if self.records else 0.0

    def average_iterations(self, first=None):
        recs = self.records[:first] if first else self.records
        return sum(r.iterations for r in recs) / len(recs) if recs else 0.0

    def state_history(self, agent):
        """``(H + 1, n)`` measured states of one agent, final state included."""
        rows = [r.states[agent] for r in self.records] + [self.final_states[agent]]
        return np.array(rows)

    def input_history(self, agent):
        return np.array([r.inputs[agent] for r in self.records])


def _midpoint_plan(problem):
    out = []
    for model in problem.subsystems:
        lo, hi = model.input_lower, model.input_upper
        both = np.isfinite(lo) & np.isfinite(hi)
        mid = np.zeros_like(lo)
        mid[both] = 0.5 * (lo[both] + hi[both])
        out.append(np.tile(np.clip(mid, lo, hi), (problem.horizon + 1, 1)))
    return out


def _zero_plan(problem):
    return [np.clip(np.zeros((problem.horizon + 1, m.input_dim)), m.input_lower, m.input_upper)
            for m in problem.subsystems]


@dataclass
class _Candidate:
    inputs: list
    value: float
    u0: list
    next_states: list
    stage_cost: float
    tilde_v_next: float
    margin: float
    passed: bool


def _evaluate(problem, cert, states, inputs, value, tilde_v_now, theta, admm_mode):
    u0 = [np.asarray(u[0], dtype=float) for u in inputs]
    nxt = step_system(problem, states, u0)
    ell = stage_cost(problem, states, u0)
    tv_next = tilde_v(problem, nxt, shift_controls(inputs), theta)
    margin = stop_margin(cert, value, tv_next, ell)
    if admm_mode:
        passed = check_stop_admm(cert, value, tilde_v_now, tv_next, ell)
    else:
        passed = check_stop_dual(cert, value, tv_next, ell)
    return _Candidate([np.array(u) for u in inputs], value, u0, nxt, ell, tv_next, margin, passed)


def _better(a, b):
    if b is None:
        return True
    if a.passed != b.passed:
        return a.passed
    return a.margin > b.margin


class _DualController:
    def __init__(self, problem, opts):
        self.problem = problem
        self.opts = opts
        self.multipliers = None

    def step(self, k, states, warm_plan, cert, tv_now, log):
        problem, opts = self.problem, self.opts
        mult = None
        if opts.warm_multipliers and self.multipliers is not None:
            mult = self.multipliers.shifted()
        anchors = None
        if warm_plan is not None:
            anchors = _dual.consistent_starts(problem, states, warm_plan)
        it = _dual.initial_iterate(problem, states, mult, opts.solver, warm_plan, opts.restarts, anchors)
        best = None
        while True:
            cand = _evaluate(problem, cert, states, it.inputs, it.value, tv_now, 0.0, False)
            if _better(cand, best):
                best, best_it = cand, it
            if opts.trace:
                row = it.trace_row(k)
                row["margin"] = cand.margin
                log.traces.append(row)
            if opts.termination == "certificate" and cand.passed:
                break
            if opts.termination == "converged" and it.residual <= opts.residual_tolerance:
                best, best_it = cand, it
                break
            if it.s >= opts.s_max:
                break
            it = _dual.dual_iteration(problem, it, opts.steps, opts.solver, opts.restarts, anchors)
        # carry the prices after the ascent step on the final residuals
        self.multipliers = _dual.update_multipliers(problem, best_it, opts.steps)
        return best, it.s


class _AdmmController:
    def __init__(self, problem, opts):
        self.problem = problem
        self.opts = opts

    def step(self, k, states, warm_plan, cert, tv_now, log):
        problem, opts = self.problem, self.opts
        it = _admm.initial_admm_iterate(problem, states, warm_plan, opts.rho, opts.solver, opts.coupling)
        best = None
        while True:
            cand = _evaluate(problem, cert, states, it.inputs(problem), it.value, tv_now, cert.theta, True)
            if _better(cand, best):
                best = cand
            if opts.trace:
                row = it.trace_row(k)
                row["margin"] = cand.margin
                log.traces.append(row)
            if opts.termination == "certificate" and cand.passed:
                break
            if opts.termination == "converged" and it.s > 1 and it.primal_residual <= opts.residual_tolerance:
                best = cand
                break
            if it.s >= opts.s_max:
                break
            it = _admm.admm_iteration(problem, it, opts.solver)
        return best, it.s


class _CentralizedController:
    def __init__(self, problem, opts):
        self.problem = problem
        self.opts = opts

    def step(self, k, states, warm_plan, cert, tv_now, log):
        problem = self.problem
        extra = [_midpoint_plan(problem)]
        sol = solve_centralized(problem, states, warm_plan, self.opts.centralized, extra)
        inputs = sol.parts["inputs"]
        cand = _evaluate(problem, cert, states, inputs, plan_cost(problem, states, inputs), tv_now, 0.0, False)
        return cand, 1


_CONTROLLERS = {"dual": _DualController, "admm": _AdmmController, "centralized": _CentralizedController}


def run_closed_loop(scenario, method="dual", alpha=None, steps=200, options=None, initial_states=None):
    """Apply the first control of each horizon solution for ``steps`` steps.

    Parameters
    ----------
    scenario : Scenario or MpcProblem
        With a bare problem, ``initial_states`` and ``alpha`` are required.
    method : {'dual', 'admm', 'centralized'}
    alpha : float, optional
        Suboptimality parameter; defaults to the scenario's.
    steps : int
        Simulation length ``H``.
    options : ControllerOptions, optional

    Returns
    -------
    RunLog
    """
    if method not in METHODS:
        raise ContractError(f"method must be one of {METHODS}, got {method!r}")
    if steps < 1:
        raise ContractError("steps must be at least 1")
    opts = options or ControllerOptions()
    if hasattr(scenario, "problem"):
        problem, name = scenario.problem, scenario.name
        if opts.steps is None:
            opts = replace(opts, steps=_dual.StepSizes(scenario.dual_step))
        alpha = scenario.alpha if alpha is None else alpha
        initial_states = scenario.initial_states if initial_states is None else initial_states
    else:
        problem, name = scenario, "custom"
    if opts.steps is None:
        opts = replace(opts, steps=_dual.StepSizes())
    if alpha is None or initial_states is None:
        raise ContractError("alpha and initial_states are required")
    states = [np.asarray(x, dtype=float).copy() for x in initial_states]
    log = RunLog(name, method, float(alpha), tuple(s.copy() for s in states))
    controller = _CONTROLLERS[method](problem, opts)

    theta = 0.0
    warm_plan = None
    if method == "admm":
        start = _midpoint_plan(problem)
        theta = opts.theta
        if theta is None:
            theta = 0.05 * abs(plan_cost(problem, states, start)) or 1e-6
        tv_now = plan_cost(problem, states, start) + theta
        warm_plan = start
    else:
        tv_now = math.nan
    log.theta = theta
    cert = CertificateState(float(alpha), theta=theta)

    for k in range(steps):
        try:
            cand, iters = controller.step(k, states, warm_plan, cert, tv_now, log)
        except SolverFailure as exc:
            raise SolverFailure(str(exc), agent=exc.agent, step=k) from exc
        if k == 0:
            cert = cert.record_v0(cand.value)
            log.v0 = cert.v0
        e_now = cert.e
        e_closed = 0.0 if k == 0 else closed_form_error(cert.alpha, log.stage_costs, tv_now, cert.v0)
        ref = math.nan
        if opts.reference:
            ref = solve_centralized(problem, states, None, opts.centralized, [_zero_plan(problem)]).value
        bound_slack = cert.v0 - cert.alpha * (cert.accumulated_cost + cand.stage_cost)
        log.records.append(StepRecord(
            k, [s.copy() for s in states], cand.u0, cand.stage_cost, iters, cand.passed, cand.value,
            tv_now, cand.tilde_v_next, e_now, e_closed, cand.margin, bound_slack, ref,
        ))
        shifted = shift_controls(cand.inputs)
        cert = update_error(cert, cand.stage_cost, cand.tilde_v_next, shifted)
        states = cand.next_states
        warm_plan = shifted
        tv_now = cand.tilde_v_next
    log.final_states = [s.copy() for s in states]
    return log

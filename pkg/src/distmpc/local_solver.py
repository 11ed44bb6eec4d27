"""Box-constrained projected-gradient solver for per-agent subproblems.

Every subproblem in this package (the dual-decomposition agent problem, the
ADMM proximal step, the consistency projection and the centralized baseline)
is posed over a flat decision vector ``z`` restricted to a box. States are
eliminated by single shooting, and gradients through the dynamics come from
:func:`backpropagate`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .exceptions import ContractError, NumericalError
from .model import stack_neighbors


@dataclass(frozen=True)
class SolverSettings:
    """Inner-solver controls.

    ``method='lbfgsb'`` runs scipy's L-BFGS-B first and then polishes with
    projected gradient until the tolerance is met; ``'projected-gradient'``
    uses projected gradient alone. ``spectral`` switches on Barzilai-Borwein
    trial steps after the first iteration; the Armijo test still guards every
    accepted step.
    """

    max_iterations: int = 500
    tolerance: float = 1e-6
    initial_step: float = 1.0
    backtracking: float = 0.5
    armijo: float = 1e-4
    state_penalty: float = 1e3
    spectral: bool = True
    min_step: float = 1e-14
    method: str = "lbfgsb"

    def __post_init__(self):
        if self.method not in ("lbfgsb", "projected-gradient"):
            raise ContractError("method must be 'lbfgsb' or 'projected-gradient'")
        if self.max_iterations < 1:
            raise ContractError("max_iterations must be positive")
        if self.tolerance <= 0 or self.initial_step <= 0 or self.armijo <= 0 or self.state_penalty < 0:
            raise ContractError("solver tolerances and steps must be positive")
        if not 0.0 < self.backtracking < 1.0:
            raise ContractError("backtracking factor must lie in (0, 1)")


def project_box(point, lower, upper):
    """Coordinatewise clamp of ``point`` onto ``[lower, upper]``."""
    return np.minimum(np.maximum(np.asarray(point, dtype=float), lower), upper)


class LocalSubproblem:
    """Smooth objective over a box; subclasses define ``objective`` and ``unpack``."""

    agent = None
    lower: np.ndarray
    upper: np.ndarray

    def objective(self, z):
        """Return ``(value, gradient)`` at ``z``."""
        raise NotImplementedError

    def unpack(self, z):
        return {"z": z}

    def default_start(self):
        """Box midpoint where finite, the finite bound on half-infinite coordinates, else 0."""
        lo, hi = self.lower, self.upper
        both = np.isfinite(lo) & np.isfinite(hi)
        mid = np.zeros_like(lo)
        mid[both] = 0.5 * (lo[both] + hi[both])
        return np.clip(mid, lo, hi)


@dataclass
class LocalSolution:
    z: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    parts: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


_ROUNDING = 64 * np.finfo(float).eps


def projected_gradient_norm(z, g, lower, upper):
    return float(np.max(np.abs(z - project_box(z - g, lower, upper)), initial=0.0))


def _evaluate(sub, z):
    f, g = sub.objective(z)
    f = float(f)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalError(
            f"non-finite objective or gradient in subproblem of agent {sub.agent} "
            f"(f={f}, |z|={np.linalg.norm(z):.3g})"
        )
    return f, g


def _descend(sub, z, settings, budget=None):
    """Projected gradient with Armijo backtracking; ``history`` holds accepted values."""
    lo, hi = sub.lower, sub.upper
    budget = settings.max_iterations if budget is None else budget
    f, g = _evaluate(sub, z)
    history = [f]
    step = settings.initial_step
    gn = projected_gradient_norm(z, g, lo, hi)
    it = 0
    while it < budget:
        if gn <= settings.tolerance:
            return LocalSolution(z, f, gn, it, True, history=history)
        alpha = step
        while True:
            z_new = project_box(z - alpha * g, lo, hi)
            d = z_new - z
            f_new, g_new = _evaluate(sub, z_new)
            slope = float(g @ d)
            if f_new <= f + settings.armijo * slope:
                break
            # decrease below the resolution of f: accept if f did not visibly grow
            noise = _ROUNDING * (1.0 + abs(f))
            if -slope <= noise and f_new <= f + noise:
                break
            alpha *= settings.backtracking
            if alpha < settings.min_step:
                # no representable decrease left
                return LocalSolution(z, f, gn, it, False, history=history)
        it += 1
        step = settings.initial_step
        if settings.spectral:
            y = g_new - g
            sy = float(d @ y)
            if sy > 0.0:
                step = min(max(float(d @ d) / sy, 1e-10), 1e10)
        z, f, g = z_new, f_new, g_new
        history.append(f)
        gn = projected_gradient_norm(z, g, lo, hi)
    return LocalSolution(z, f, gn, it, gn <= settings.tolerance, history=history)


def _quasi_newton(sub, z, settings):
    f0, g0 = _evaluate(sub, z)
    if projected_gradient_norm(z, g0, sub.lower, sub.upper) <= settings.tolerance:
        return LocalSolution(z, f0, 0.0, 0, True, history=[f0])
    bounds = list(zip(np.where(np.isfinite(sub.lower), sub.lower, None),
                      np.where(np.isfinite(sub.upper), sub.upper, None)))
    res = minimize(lambda x: _evaluate(sub, x), z, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": settings.max_iterations, "ftol": 0.0,
                            "gtol": 0.1 * settings.tolerance, "maxcor": 20})
    zq = project_box(res.x, sub.lower, sub.upper)
    fq, _ = _evaluate(sub, zq)
    if fq > f0:
        zq = z
    used = int(res.nit)
    polish = _descend(sub, zq, settings, max(settings.max_iterations - used, 1))
    polish.iterations += used
    polish.history = [f0] + polish.history
    return polish


def solve_local(sub, warm_start=None, settings=None, extra_starts=()):
    """Minimize ``sub`` over its box.

    The engine follows ``settings.method``; in either case the returned point
    lies in the box and the final phase is projected gradient with Armijo
    backtracking, so stationarity is judged by the projected-gradient norm.

    Parameters
    ----------
    sub : LocalSubproblem
    warm_start : ndarray, optional
        Starting point; clipped onto the box. Defaults to ``sub.default_start()``.
    settings : SolverSettings, optional
    extra_starts : sequence of ndarray
        Additional starting points. The lowest-objective result is kept, which
        guards against the flat directions of nonconvex dynamics.

    Returns
    -------
    LocalSolution
        ``parts`` holds ``sub.unpack(z)`` at the returned point.
    """
    settings = settings or SolverSettings()
    starts = [warm_start] if warm_start is not None else []
    starts.extend(extra_starts)
    if not starts:
        starts = [sub.default_start()]
    best = None
    for z0 in starts:
        z0 = project_box(np.asarray(z0, dtype=float).reshape(-1), sub.lower, sub.upper)
        if settings.method == "lbfgsb":
            sol = _quasi_newton(sub, z0, settings)
        else:
            sol = _descend(sub, z0, settings)
        if best is None or sol.value < best.value:
            best = sol
    best.parts = sub.unpack(best.z)
    return best


def box_penalty(states, lower, upper, weight):
    """Quadratic penalty ``weight * dist(x, box)^2`` summed over rows, with gradient."""
    below = np.minimum(states - lower, 0.0)
    above = np.maximum(states - upper, 0.0)
    viol = below + above
    return weight * float(np.sum(viol * viol)), 2.0 * weight * viol


def backpropagate(problem, states, inputs, free, gx, gu, vbar=None):
    """Reverse accumulation through a (possibly coupled) rollout.

    Parameters
    ----------
    states : list of ndarray
        Rolled-out states ``(L + 1, n_i)`` for every agent the rollout touched.
    inputs : list
        Inputs ``(L, m_i)`` of the free agents.
    free : sequence of int
        Agents whose inputs are decision variables.
    gx, gu : dict
        Direct partials of the objective w.r.t. each free agent's states and inputs.
    vbar : dict, optional
        Agents whose dynamics read a supplied neighbor sequence ``(L, nv_i)``
        instead of the neighbors' rolled-out states.

    Returns
    -------
    grad_u : dict
        Total gradient w.r.t. each free agent's inputs.
    grad_v : dict
        Gradient w.r.t. the supplied ``vbar`` sequences (dynamics part only).
    """
    vbar = vbar or {}
    free = list(free)
    free_set = set(free)
    graph = problem.dynamics_graph
    length = len(inputs[free[0]])
    adj = {i: np.array(gx[i][length], dtype=float) for i in free}
    grad_u = {i: np.array(gu[i], dtype=float) for i in free}
    grad_v = {i: np.zeros((length, problem.v_dim(i))) for i in vbar}
    slices = {i: problem.neighbor_slices(graph, i) for i in free}
    for t in range(length - 1, -1, -1):
        new = {i: np.array(gx[i][t], dtype=float) for i in free}
        for i in free:
            if i in vbar:
                v = vbar[i][t]
            else:
                v = stack_neighbors(graph, i, [s[t] if s is not None else None for s in states])
            A, B, C = problem.subsystems[i].jacobian(states[i][t], v, inputs[i][t])
            lam = adj[i]
            grad_u[i][t] += C.T @ lam
            new[i] += A.T @ lam
            if B.size:
                bv = B.T @ lam
                if i in vbar:
                    grad_v[i][t] = bv
                else:
                    for j, sl in slices[i].items():
                        if j in free_set:
                            new[j] += bv[sl]
        adj = new
    return grad_u, grad_v

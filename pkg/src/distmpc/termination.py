"""Early-termination certificates for distributed MPC iterations.

At step ``k`` the iteration may stop at round ``S_k`` once

    V_k(S_k) - Vt_{k+1} >= e[k] + alpha * l(x[k], u(S_k)[k])

where ``Vt_k`` is the cost of the previous plan shifted one step forward and
rolled out from the measured state, and ``e`` obeys

    e[0] = 0,  e[1] = alpha l_0 + Vt_1 - V_0(S_0),
    e[k] = e[k-1] + alpha l_{k-1} + Vt_k - Vt_{k-1}.

Unrolled, ``e[k] = alpha sum_{t<k} l_t + Vt_k - V_0(S_0)``. Certified steps
therefore keep ``alpha sum_{t<=k} l_t <= V_0(S_0)``. The ADMM variant adds
``theta`` to every ``Vt`` and also requires ``Vt_k >= V_k(S_k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ContractError
from .model import plan_cost


@dataclass(frozen=True)
class CertificateState:
    """Bookkeeping carried across closed-loop steps.

    ``theta`` is the constant margin added to ``tilde_v`` in ADMM mode (0 for
    dual decomposition). ``v0`` stays ``None`` until step 0 terminates.
    """

    alpha: float
    k: int = 0
    e: float = 0.0
    tilde_v: float = None
    shifted_controls: tuple = None
    accumulated_cost: float = 0.0
    v0: float = None
    theta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.theta < 0:
            raise ContractError("theta must be nonnegative")
        if self.k == 0 and self.e != 0.0:
            raise ContractError("e[0] is fixed at 0")

    def record_v0(self, value):
        if self.k != 0:
            raise ContractError("V_0 can only be recorded at step 0")
        return replace(self, v0=float(value))


def shift_controls(controls):
    """Drop the first row of each sequence and append a zero row."""
    out = []
    for u in controls:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        s = np.zeros_like(u)
        s[:-1] = u[1:]
        out.append(s)
    return out


def tilde_v(problem, states, shifted_controls, theta=0.0):
    """Cost of ``shifted_controls`` rolled out jointly from ``states``, plus ``theta``."""
    controls = [np.asarray(u, dtype=float) for u in shifted_controls]
    if any(len(u) != problem.horizon + 1 for u in controls):
        raise ContractError("shifted controls must have T + 1 rows")
    return plan_cost(problem, states, controls) + theta


def update_error(cert, stage_cost, tilde_v_k, shifted_controls=None):
    """Advance ``cert`` from step ``k`` to ``k + 1``.

    ``stage_cost`` is the realized team stage cost at step ``k`` and
    ``tilde_v_k`` the shifted-plan bound at the new step ``k + 1``.
    """
    if cert.v0 is None:
        raise ContractError("V_0 has not been recorded; e[0] = 0 cannot be advanced")
    a = cert.alpha
    if cert.k == 0:
        e = a * stage_cost + tilde_v_k - cert.v0
    else:
        e = cert.e + a * stage_cost + tilde_v_k - cert.tilde_v
    return replace(
        cert,
        k=cert.k + 1,
        e=e,
        tilde_v=float(tilde_v_k),
        shifted_controls=None if shifted_controls is None else tuple(shifted_controls),
        accumulated_cost=cert.accumulated_cost + stage_cost,
    )


def closed_form_error(alpha, stage_costs, tilde_v_k, v0):
    """``alpha * sum(stage_costs) + tilde_v_k - v0``: the unrolled recursion."""
    return alpha * math.fsum(stage_costs) + tilde_v_k - v0


def stop_margin(cert, value_now, tilde_v_next, stage_cost_now):
    """Slack of the main stopping inequality (nonnegative when it holds)."""
    return value_now - tilde_v_next - cert.e - cert.alpha * stage_cost_now


def check_stop_dual(cert, dual_value_now, tilde_v_next, stage_cost_now):
    return stop_margin(cert, dual_value_now, tilde_v_next, stage_cost_now) >= 0.0


def check_stop_admm(cert, admm_value_now, tilde_v_now, tilde_v_next, stage_cost_now):
    """The dual test plus the upper-bound condition ``tilde_v_now >= admm_value_now``."""
    if tilde_v_now < admm_value_now:
        return False
    return stop_margin(cert, admm_value_now, tilde_v_next, stage_cost_now) >= 0.0


def guarantee_ratio(cert):
    """``alpha * accumulated_cost / V_0``; at most 1 along a certified run."""
    if cert.v0 is None:
        raise ContractError("V_0 has not been recorded")
    if cert.alpha == 0.0 or cert.accumulated_cost == 0.0:
        return 0.0
    if cert.v0 <= 0.0:
        return math.inf
    return cert.alpha * cert.accumulated_cost / cert.v0

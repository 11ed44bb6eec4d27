import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from distmpc.model import CouplingGraph, MpcProblem  # noqa: E402
from distmpc.scenarios import build_coupled_lq, build_decoupled, linear_model, quadratic_cost  # noqa: E402

ACCEPTANCE_LINES = []


def integrator_problem(n_agents=1, horizon=1, dyn_edges=(), input_bound=None):
    """Scalar integrators ``x+ = x + u + sum v`` with ``l = x^2 + u^2``."""
    dyn = CouplingGraph(n_agents, set(dyn_edges))
    models = []
    for i in range(n_agents):
        nv = len(dyn.in_neighbors(i))
        models.append(linear_model([[1.0]], [[1.0]], Bv=[[1.0] * nv] if nv else None, input_bound=input_bound))
    costs = [quadratic_cost([[1.0]], [[1.0]]) for _ in range(n_agents)]
    return MpcProblem(dyn, CouplingGraph(n_agents), models, costs, horizon)


def random_lq(rng, n_agents=None, horizon=None):
    """Small random coupled linear-quadratic problem with input boxes, plus initial states."""
    n_agents = int(rng.integers(1, 4)) if n_agents is None else n_agents
    horizon = int(rng.integers(0, 3)) if horizon is None else horizon
    n = int(rng.integers(1, 3))
    pairs = [(j, i) for i in range(n_agents) for j in range(n_agents) if i != j]
    dyn = CouplingGraph(n_agents, {e for e in pairs if rng.random() < 0.5})
    cg = CouplingGraph(n_agents, {e for e in pairs if rng.random() < 0.5})
    models, costs = [], []
    for i in range(n_agents):
        m = int(rng.integers(1, 3))
        nv = n * len(dyn.in_neighbors(i))
        A = np.eye(n) + 0.2 * rng.standard_normal((n, n))
        B = rng.standard_normal((n, m))
        Bv = 0.3 * rng.standard_normal((n, nv)) if nv else None
        models.append(linear_model(A, B, Bv, input_bound=rng.uniform(0.5, 2.0, m)))
        offsets = [np.zeros(n)] * len(cg.in_neighbors(i))
        costs.append(quadratic_cost(np.eye(n), 0.5 * np.eye(m), float(rng.uniform(0.1, 1.0)), offsets))
    problem = MpcProblem(dyn, cg, models, costs, horizon)
    x0 = tuple(rng.uniform(-2.0, 2.0, n) for _ in range(n_agents))
    return problem, x0


@pytest.fixture
def coupled_lq():
    return build_coupled_lq()


@pytest.fixture
def decoupled():
    return build_decoupled()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

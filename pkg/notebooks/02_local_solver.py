# %% [markdown]
# # The box-constrained inner solver
#
# Every subproblem is a smooth function over a box. `solve_local` runs
# L-BFGS-B and finishes with projected gradient, or projected gradient alone.

# %%
import numpy as np

from distmpc import SolverSettings, project_box, solve_local
from distmpc.centralized import solve_centralized
from distmpc.local_solver import LocalSubproblem
from distmpc.scenarios import build_two_vehicle


class OneStep(LocalSubproblem):
    """u^2 + (1 + u)^2 over |u| <= 10; the minimizer is u = -0.5."""

    lower = np.array([-10.0])
    upper = np.array([10.0])

    def objective(self, z):
        u = z[0]
        return u * u + (1 + u) ** 2, np.array([4 * u + 2])


for method in ("lbfgsb", "projected-gradient"):
    sol = solve_local(OneStep(), settings=SolverSettings(method=method, tolerance=1e-10))
    print(f"{method:>18}: u = {sol.z[0]:.10f}, value {sol.value:.10f}, {sol.iterations} iterations")

# %% [markdown]
# Projection onto a box is a coordinatewise clamp.

# %%
print(project_box([0.7, -1.0], [0.0, -np.pi / 6], [0.5, np.pi / 6]))

# %% [markdown]
# The centralized baseline stacks every agent's inputs into one decision
# vector. Accepted objective values never increase by more than the
# rounding noise of evaluating the objective.

# %%
sc = build_two_vehicle()
sol = solve_centralized(sc.problem, sc.initial_states)
print("centralized horizon cost:", sol.value, "converged:", sol.converged)
noise = 64 * np.finfo(float).eps * (1 + abs(sol.history[0]))
print("monotone:", bool(np.all(np.diff(sol.history) <= noise)))
for i, u in enumerate(sol.parts["inputs"]):
    print(f"vehicle {i} first input (v, theta):", np.round(u[0], 4))

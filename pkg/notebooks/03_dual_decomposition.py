# %% [markdown]
# # Dual decomposition on a convex instance
#
# Two scalar agents: agent 1's dynamics read agent 0's state, and each cost
# pulls the agent toward the other. We price the consistency of the local
# copies and ascend on the prices. The dual value approaches the optimum
# from below.

# %%
import numpy as np

from distmpc import StepSizes, SolverSettings
from distmpc.centralized import solve_centralized
from distmpc.dual_decomp import solve_dual
from distmpc.model import plan_cost
from distmpc.scenarios import get_scenario

sc = get_scenario("coupled_lq")
best = solve_centralized(sc.problem, sc.initial_states).value
hist = solve_dual(sc.problem, sc.initial_states, StepSizes(0.1),
                  SolverSettings(tolerance=1e-10, max_iterations=2000), tolerance=1e-8)

# %%
print(f"centralized optimum {best:.10f}")
for it in hist[::20] + [hist[-1]]:
    print(f"s={it.s:4d}  dual value {it.value:.10f}  residual {it.residual:.2e}")
print("largest dual value minus optimum:", max(it.value for it in hist) - best)
print("primal cost of final plan:", plan_cost(sc.problem, sc.initial_states, hist[-1].inputs))

# %% [markdown]
# Step sizes matter here: the dynamics slack is weakly curved, and h = 0.2
# already makes the ascent diverge. Each scenario carries a default step.

# %%
print("default dual step for this scenario:", sc.dual_step)

# %% [markdown]
# # Problems, graphs and rollouts
#
# An `MpcProblem` bundles two coupling graphs (who reads whose state in the
# dynamics, and in the cost), one `SubsystemModel` and one `StageCost` per
# agent, and a horizon `T`. Agents are numbered from 0.

# %%
import numpy as np

from distmpc import CouplingGraph, Trajectory, rollout, stack_neighbors, total_cost
from distmpc.model import plan_cost, simulate
from distmpc.scenarios import build_two_vehicle, get_scenario

# %% [markdown]
# Neighbor states are stacked in ascending agent index.

# %%
g = CouplingGraph(3, {(1, 0), (2, 0)})
print(stack_neighbors(g, 0, [np.array([1.0]), np.array([5.0]), np.array([7.0, 8.0])]))
print(stack_neighbors(g, 1, [np.array([1.0]), np.array([5.0]), np.array([7.0, 8.0])]))

# %% [markdown]
# The unicycle moves by `v [cos(theta), sin(theta)]` per step, with
# `0 <= v <= 0.5` and `|theta| <= pi/6`.

# %%
sc = build_two_vehicle()
print(rollout(sc.problem, 0, [0.0, 0.0], [[0.5, np.pi / 6], [0.5, 0.0]], np.zeros((2, 0))))

# %% [markdown]
# Costs are evaluated on any set of trajectories; they need not obey the
# dynamics. At the start the formation error is `[1, 3]`, so each stage costs 20.

# %%
x1, x2 = sc.initial_states
trajs = [Trajectory([x1] * 6, np.zeros((5, 2))), Trajectory([x2] * 6, np.zeros((5, 2)))]
print("cost of standing still:", total_cost(sc.problem, trajs))

# %% [markdown]
# With coupled dynamics the rollout has to advance all agents together.

# %%
lq = get_scenario("coupled_lq")
plan = [np.zeros((4, 1)), np.zeros((4, 1))]
for i, s in enumerate(simulate(lq.problem, lq.initial_states, plan)):
    print(f"agent {i}:", np.round(s[:, 0], 4))
print("plan cost:", plan_cost(lq.problem, lq.initial_states, plan))

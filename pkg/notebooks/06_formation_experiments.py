# %% [markdown]
# # Formation experiments
#
# Two unicycles converge to the offset `d_12 = [2, 1]`; three unicycles to a
# triangle. The suboptimality ratio compares the distributed closed-loop
# cost with the centralized one.

# %%
import numpy as np

from distmpc import build_three_vehicle, build_two_vehicle, run_closed_loop, suboptimality_ratio

steps = 200
primal = run_closed_loop(build_two_vehicle(), "centralized", steps=steps)
print(f"centralized closed-loop cost {primal.total_cost:.4f}")

# %%
for alpha in (0.1, 0.3, 0.5, 0.7):
    log = run_closed_loop(build_two_vehicle(alpha=alpha), "dual", steps=steps)
    rho = suboptimality_ratio(log, primal, steps)
    print(f"alpha {alpha}: rho {rho:.4f} (bound {1 / alpha:.2f}), certified {log.certified_fraction:.2f}, "
          f"mean S_k over 100 steps {log.average_iterations(100):.2f}")

# %% [markdown]
# Formation error of the last run over time.

# %%
sc = build_two_vehicle()
res = [sc.residuals([log.state_history(i)[k] for i in range(2)])[(0, 1)] for k in range(steps + 1)]
print("residual at k = 0, 10, 20, 50, 200:", [round(res[k], 4) for k in (0, 10, 20, 50, 200)])

# %%
three = build_three_vehicle()
log3 = run_closed_loop(three, "dual", steps=300)
final = three.residuals(log3.final_states)
print("three-vehicle final pairwise residuals:", {k: round(v, 4) for k, v in final.items()})

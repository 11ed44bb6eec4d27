# %% [markdown]
# # Command-line runs
#
# `distmpc run`, `distmpc sweep-alpha` and `distmpc compare` write CSV and
# JSON artifacts; the same entry point is callable from Python.

# %%
import csv
import json
import tempfile
from pathlib import Path

from distmpc.cli import main

out = Path(tempfile.mkdtemp())
main(["compare", "--scenario", "decoupled", "--steps", "10", "--output", str(out / "compare")])
print(json.dumps(json.loads((out / "compare" / "summary.json").read_text()), indent=1))

# %%
main(["sweep-alpha", "--scenario", "two_vehicle", "--alphas", "0.3,0.7", "--steps", "50",
      "--output", str(out / "sweep")])
with open(out / "sweep" / "rho_table.csv") as fh:
    for row in csv.DictReader(fh):
        print(row["alpha"], row["rho"], row["inverse_alpha"], row["certified_fraction"])

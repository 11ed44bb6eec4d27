"""Command-line front end: ``run``, ``sweep-alpha`` and ``compare``.

Settings come from built-in defaults, then an optional flat JSON file
(``--config``), then explicit flags. Relative output directories are placed
under ``$DMPC_OUTPUT_ROOT`` when that variable is set.

Exit codes: 0 success, 2 usage error, 3 solver failure, 4 no step certified.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from .dual_decomp import StepSizes
from .exceptions import ContractError, SolverFailure, UndefinedRatioError
from .local_solver import SolverSettings
from .scenarios import SCENARIOS, get_scenario, suboptimality_ratio
from .simulation import METHODS, ControllerOptions, run_closed_loop

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_UNCERTIFIED = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "DMPC_OUTPUT_ROOT"


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "two_vehicle"
    method: str = "dual"
    alpha: float = None
    horizon: int = None
    steps: int = 200
    h: float = None
    g: float = None
    step_schedule: str = "constant"
    rho_admm: float = 1.0
    theta: float = None
    s_max: int = 200
    tolerance: float = 1e-6
    max_iterations: int = 500
    solver_method: str = "lbfgsb"
    warm_multipliers: bool = True
    termination: str = "certificate"
    residual_tolerance: float = 1e-6
    output: str = None
    seed: int = 0
    alphas: tuple = (0.1, 0.3, 0.5, 0.7)

    def __post_init__(self):
        def bad(name, why):
            raise ContractError(f"{name}: {why}")

        if self.scenario not in SCENARIOS:
            bad("scenario", f"unknown {self.scenario!r}; choose from {sorted(SCENARIOS)}")
        if self.method not in METHODS:
            bad("method", f"must be one of {METHODS}")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            bad("alpha", "must lie in [0, 1]")
        if self.horizon is not None and self.horizon < 0:
            bad("horizon", "must be nonnegative")
        if self.steps < 1:
            bad("steps", "must be at least 1")
        if self.h is not None and not self.h > 0:
            bad("h", "must be positive")
        for name in ("rho_admm", "tolerance", "residual_tolerance"):
            if not getattr(self, name) > 0:
                bad(name, "must be positive")
        if self.g is not None and not self.g > 0:
            bad("g", "must be positive")
        if self.theta is not None and not self.theta > 0:
            bad("theta", "must be positive")
        if self.s_max < 1:
            bad("s_max", "must be at least 1")
        if self.max_iterations < 1:
            bad("max_iterations", "must be at least 1")
        if self.step_schedule not in ("constant", "diminishing"):
            bad("step_schedule", "must be 'constant' or 'diminishing'")
        if self.termination not in ("certificate", "converged"):
            bad("termination", "must be 'certificate' or 'converged'")
        if self.solver_method not in ("lbfgsb", "projected-gradient"):
            bad("solver_method", "must be 'lbfgsb' or 'projected-gradient'")
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas or any(not 0.0 < a <= 1.0 for a in alphas):
            bad("alphas", "need at least one value, each in (0, 1]")
        object.__setattr__(self, "alphas", alphas)

    def options(self, scenario):
        """Controller options; ``h`` falls back to the scenario's dual step."""
        h = scenario.dual_step if self.h is None else self.h
        return ControllerOptions(
            solver=SolverSettings(max_iterations=self.max_iterations, tolerance=self.tolerance,
                                  method=self.solver_method),
            steps=StepSizes(h, self.g, self.step_schedule),
            rho=self.rho_admm,
            theta=self.theta,
            s_max=self.s_max,
            warm_multipliers=self.warm_multipliers,
            termination=self.termination,
            residual_tolerance=self.residual_tolerance,
            trace=True,
        )

    def scenario_for(self, alpha=None):
        return get_scenario(self.scenario, alpha if alpha is not None else self.alpha, self.horizon)


def _fmt(value):
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _resolve_output(config, default):
    out = Path(config.output or default)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _trajectory_rows(scenario, log):
    problem = scenario.problem
    rows = []
    n_steps = log.steps
    for k in range(n_steps + 1):
        states = log.records[k].states if k < n_steps else log.final_states
        for i, model in enumerate(problem.subsystems):
            u = log.records[k].inputs[i] if k < n_steps else [math.nan] * model.input_dim
            rows.append([k, i, *map(float, states[i]), *map(float, u)])
    return rows


def _trajectory_header(scenario):
    model = scenario.problem.subsystems[0]
    return ["k", "agent", *model.state_names, *model.input_names]


def _uniform_dims(scenario):
    models = scenario.problem.subsystems
    return all(m.state_names == models[0].state_names and m.input_names == models[0].input_names for m in models)


def _certificate_rows(log):
    return [[r.k, r.iterations, r.e, r.e_closed_form, r.tilde_v, r.tilde_v_next, r.value, r.certified,
             r.margin, r.bound_slack, r.stage_cost] for r in log.records]


CERTIFICATE_HEADER = ["k", "S_k", "e", "e_closed_form", "tilde_v", "tilde_v_next", "value", "certified",
                      "margin", "bound_slack", "stage_cost"]


def _trace_rows(log):
    if not log.traces:
        return [], []
    keys = list(log.traces[0].keys())
    for row in log.traces[1:]:
        keys.extend(k for k in row if k not in keys)
    return keys, [[row.get(k, "") for k in keys] for row in log.traces]


def _summary(config, scenario, log):
    out = {
        "scenario": scenario.name,
        "method": log.method,
        "alpha": log.alpha,
        "horizon": scenario.problem.horizon,
        "steps": log.steps,
        "total_cost": log.total_cost,
        "certified_fraction": log.certified_fraction,
        "average_iterations": log.average_iterations(),
        "average_iterations_first_100": log.average_iterations(100),
        "v0": log.v0,
        "guarantee_ratio": log.alpha * log.total_cost / log.v0 if log.v0 else None,
        "theta": log.theta,
        "seed": config.seed,
    }
    if scenario.formation is not None:
        out["final_residuals"] = {f"{i}-{j}": r for (i, j), r in scenario.residuals(log.final_states).items()}
    return out


def cmd_run(config):
    scenario = config.scenario_for()
    out = _resolve_output(config, f"runs/{config.scenario}-{config.method}")
    log = run_closed_loop(scenario, config.method, steps=config.steps, options=config.options(scenario))
    if _uniform_dims(scenario):
        write_csv(out / "trajectory.csv", _trajectory_header(scenario), _trajectory_rows(scenario, log))
    write_csv(out / "iterations.csv", ["k", "S_k"], [[r.k, r.iterations] for r in log.records])
    write_csv(out / "certificate.csv", CERTIFICATE_HEADER, _certificate_rows(log))
    keys, rows = _trace_rows(log)
    if keys:
        write_csv(out / "traces.csv", keys, rows)
    summary = _summary(config, scenario, log)
    write_json(out / "summary.json", summary)
    print(f"{scenario.name} {config.method}: total cost {log.total_cost:.6g}, "
          f"certified {log.certified_fraction:.3f}, mean S_k {log.average_iterations():.3f} -> {out}")
    if config.method != "centralized" and log.certified_fraction == 0.0:
        return EXIT_UNCERTIFIED
    return EXIT_OK


def cmd_sweep_alpha(config):
    out = _resolve_output(config, f"runs/{config.scenario}-sweep")
    base = config.scenario_for()
    opts = config.options(base)
    primal = run_closed_loop(base, "centralized", steps=config.steps, options=opts)
    rows = []
    for alpha in config.alphas:
        log = run_closed_loop(config.scenario_for(alpha), "dual", steps=config.steps, options=opts)
        try:
            rho = suboptimality_ratio(log, primal, config.steps)
        except UndefinedRatioError:
            rho = math.nan
        rows.append([alpha, rho, 1.0 / alpha, log.certified_fraction, log.total_cost, primal.total_cost,
                     log.average_iterations()])
        print(f"alpha {alpha:g}: rho {rho:.6g} (bound {1.0 / alpha:.6g}), certified {log.certified_fraction:.3f}")
    write_csv(out / "rho_table.csv",
              ["alpha", "rho", "inverse_alpha", "certified_fraction", "dual_cost", "centralized_cost",
               "average_iterations"], rows)
    return EXIT_OK


def cmd_compare(config):
    scenario = config.scenario_for()
    out = _resolve_output(config, f"runs/{config.scenario}-compare")
    opts = config.options(scenario)
    cost_rows, trace_rows, totals = [], [], {}
    for method in METHODS:
        log = run_closed_loop(scenario, method, steps=config.steps, options=opts)
        running = 0.0
        for r in log.records:
            running += r.stage_cost
            cost_rows.append([method, r.k, r.stage_cost, running, r.iterations, r.certified])
        for row in log.traces:
            residual = row.get("residual", row.get("primal_residual"))
            value = row.get("dual_value", row.get("admm_value"))
            trace_rows.append([method, row["k"], row["s"], value, residual])
        totals[method] = {"total_cost": log.total_cost, "certified_fraction": log.certified_fraction,
                          "average_iterations": log.average_iterations()}
    write_csv(out / "costs.csv", ["method", "k", "stage_cost", "cumulative_cost", "S_k", "certified"], cost_rows)
    write_csv(out / "convergence.csv", ["method", "k", "s", "value", "residual"], trace_rows)
    write_json(out / "summary.json", {"scenario": scenario.name, "steps": config.steps, "methods": totals})
    for method, t in totals.items():
        print(f"{method}: total cost {t['total_cost']:.10g}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep-alpha": cmd_sweep_alpha, "compare": cmd_compare}


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _alphas(text):
    try:
        return tuple(float(a) for a in text.split(",") if a.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


_FLAG_TYPES = {"alphas": _alphas, "warm_multipliers": _bool}


def build_parser():
    parser = argparse.ArgumentParser(prog="distmpc", description="Distributed MPC experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat JSON file with RunConfig fields")
        for f in fields(RunConfig):
            kind = _FLAG_TYPES.get(f.name)
            if kind is None:
                default = f.default
                kind = type(default) if default is not None and not isinstance(default, bool) else None
                if f.name in ("alpha", "h", "g", "theta"):
                    kind = float
                elif f.name == "horizon":
                    kind = int
                elif kind is None:
                    kind = str
            p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=None)
    return parser


def load_config(args):
    values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ContractError(f"config: cannot read {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ContractError("config: expected a flat JSON object")
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ContractError(f"config: unknown fields {unknown}")
        values.update(data)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if "alphas" in values:
        values["alphas"] = tuple(values["alphas"])
    return RunConfig(**values)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
    except (ContractError, TypeError) as exc:
        print(f"distmpc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](config)
    except SolverFailure as exc:
        print(f"distmpc: solver failure at step {exc.step} (agent {exc.agent}): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ContractError as exc:
        print(f"distmpc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""``eot`` command line: run one experiment config and write its artifacts.

Exit status: 0 all assertions pass, 1 an assertion failed, 2 config
error, 3 solver error (partial results and the error go to the manifest).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import reporting
from .config import ConfigError, Instance, RunConfig, load_config
from .exact import brute_force_assignment, check_optimality, solve_exact
from .instances import make_rng
from .lab import (
    CostFamily,
    EpsSchedule,
    ScheduleError,
    example52,
    example52_instance,
    invariant_audit,
    ldp_estimate,
    run_schedule,
)
from .measures import InstanceError, NonFiniteError
from .multimarginal import MAX_EXACT_CELLS, mm_schedule
from .simplex import SimplexError
from .sinkhorn import SinkhornError, sinkhorn_solve

logger = logging.getLogger("eotlab")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
SOLVER_ERRORS = (ScheduleError, SinkhornError, SimplexError, NonFiniteError, InstanceError)


class Run:
    """Collects files and assertion outcomes for one invocation."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.files: list[Path] = []
        self.assertions: dict = {}
        self.summary: dict = {}
        self.report = None

    def add(self, *paths):
        self.files.extend(Path(p) for p in paths)

    def check(self, name: str, passed: bool, **detail):
        self.assertions[name] = {"passed": bool(passed), **detail}

    def declared(self, name: str, default=None):
        return self.cfg.assertions.get(name, default)


def _additive_payload(family: dict, shape, seed: int) -> np.ndarray:
    if "h" in family:
        return np.asarray(family["h"], dtype=float)
    rng = make_rng(int(family.get("h_seed", seed)))
    return rng.uniform(float(family.get("h_low", 0.0)), float(family.get("h_high", 1.0)), size=shape)


def _family(cfg: RunConfig) -> CostFamily:
    table = cfg.family
    kind = table.get("kind", "none")
    C = cfg.instance.cost
    if kind == "none":
        return CostFamily(C)
    if kind == "additive":
        return CostFamily(C, "additive", _additive_payload(table, C.shape, cfg.seed))
    costs = table.get("costs")
    if not isinstance(costs, dict):
        raise ConfigError("[family] custom needs a [family.costs] table of epsilon -> matrix")
    return CostFamily(C, "custom", {float(k): np.asarray(v, float) for k, v in costs.items()})


def _threshold(run: Run, name: str, value: float, binding: bool = True):
    limit = run.declared(name)
    if limit is None:
        return
    if not binding:
        run.check(name, True, value=value, threshold=float(limit), skipped="non-binding")
    else:
        run.check(name, value <= float(limit), value=value, threshold=float(limit))


def _flag(run: Run, name: str, passed, value=None):
    if not run.declared(name, False):
        return
    if passed is None:
        run.check(name, True, skipped="not applicable")
    else:
        run.check(name, passed, **({} if value is None else {"value": value}))


def _write_potentials(run: Run, f, g):
    rows = [["f", i, v] for i, v in enumerate(f)] + [["g", j, v] for j, v in enumerate(g)]
    run.add(reporting.write_csv(run.out / "potentials.csv", ["side", "index", "value"], rows))


def _write_coupling(run: Run, mass):
    rows = [[i, j, mass[i, j]] for i in range(mass.shape[0]) for j in range(mass.shape[1])]
    run.add(reporting.write_csv(run.out / "coupling.csv", ["i", "j", "mass"], rows))


def run_solve(run: Run, threads: int):
    inst = run.cfg.instance
    cfg = run.cfg.solver
    try:
        sol = sinkhorn_solve(inst.mu, inst.nu, inst.cost, cfg)
    except SinkhornError as exc:
        raise ScheduleError(cfg.epsilon, exc) from exc
    audit = invariant_audit(sol, inst.cost, inst.mu, inst.nu)
    header = ["eps", "S_eps", "I_eps", "residual_row", "residual_col", "iterations"]
    row = [cfg.epsilon, sol.dual, sol.primal, sol.residuals[0], sol.residuals[1], sol.iterations]
    run.add(reporting.write_csv(run.out / "report.csv", header, [row]))
    _write_potentials(run, sol.potentials.f, sol.potentials.g)
    _write_coupling(run, sol.coupling.mass)
    run.summary["audit"] = {c.name: {"passed": c.passed, "slack": c.slack} for c in audit.checks}
    run.check("converged", max(sol.residuals) <= cfg.tol, value=max(sol.residuals))
    _flag(run, "audit", audit.passed, audit.worst_slack)
    _threshold(run, "duality_gap_max", abs(sol.primal - sol.dual))


def run_exact(run: Run, threads: int):
    inst = run.cfg.instance
    sol = solve_exact(inst.mu, inst.nu, inst.cost)
    diag = check_optimality(sol.coupling, sol.potentials, inst.cost, inst.mu, inst.nu)
    header = ["value", "max_violation", "slackness_defect", "gap", "dual_unique_hint", "pivots"]
    run.add(reporting.write_csv(run.out / "report.csv", header, [[sol.value, *diag.values(), sol.dual_unique_hint, sol.pivots]]))
    _write_potentials(run, sol.potentials.f, sol.potentials.g)
    _write_coupling(run, sol.coupling.mass)
    run.summary.update({"value": sol.value, "dual_unique_hint": sol.dual_unique_hint, "optimality": diag})
    certificate = diag["max_violation"] <= 1e-9 and diag["slackness_defect"] <= 1e-9 and abs(diag["gap"]) <= 1e-9
    run.check("certificate", certificate, **diag)
    try:
        oracle = brute_force_assignment(inst.mu, inst.nu, inst.cost)
    except InstanceError:
        oracle = None
    if oracle is not None:
        run.summary["brute_force_value"] = oracle
    _flag(run, "oracle", None if oracle is None else abs(oracle - sol.value) <= 1e-9, oracle)


def run_converge(run: Run, threads: int):
    inst = run.cfg.instance
    family = _family(run.cfg)
    spot = run.declared("cold_start_max") is not None
    report = run_schedule(
        inst.mu, inst.nu, family, run.cfg.schedule, run.cfg.solver,
        warm_start=run.cfg.warm_start, threads=threads, spot_check=spot,
    )
    run.report = report
    header, rows = reporting.convergence_table(report)
    run.add(reporting.write_csv(run.out / "report.csv", header, rows))
    for name, passed in report.checks.items():
        run.check(name, passed)
    last = report.rows[-1]
    run.summary.update({
        "S0": report.S0,
        "dual_unique_hint": report.dual_unique_hint,
        "l1_binding": report.l1_binding,
        "final": {"eps": last.eps, "gap_to_S0": last.gap_to_S0, "L1_f": last.L1_f, "L1_g": last.L1_g},
    })
    _threshold(run, "final_gap_to_S0_max", last.gap_to_S0)
    _threshold(run, "final_L1_max", max(last.L1_f, last.L1_g), binding=report.l1_binding)
    if "cold_start_deviation" in report.meta:
        _threshold(run, "cold_start_max", report.meta["cold_start_deviation"])
    log_inv = math.log(1.0 / report.meta["min_cell_weight"])
    excess = max(r.max_violation - r.eps * log_inv for r in report.rows)
    _flag(run, "entry_bound", excess <= 10 * run.cfg.solver.tol, excess)


def run_ldp(run: Run, threads: int):
    inst = run.cfg.instance
    event = run.cfg.experiment["event"]
    report = ldp_estimate(inst.mu, inst.nu, inst.cost, event, run.cfg.schedule, run.cfg.solver)
    run.report = report
    header, rows = reporting.ldp_table(report)
    run.add(reporting.write_csv(run.out / "report.csv", header, rows))
    run.check("rows_present", bool(report.rows), dropped=report.dropped)
    run.summary.update({
        "target": report.target,
        "final_gap": report.final_gap,
        "dual_unique_hint": report.dual_unique_hint,
        "dropped_eps": report.dropped,
    })
    _threshold(run, "final_gap_max", report.final_gap, binding=report.dual_unique_hint)
    identity = None
    if len(report.event) == 1 and report.rows:
        i, j = report.event[0]
        mu, nu, C = inst.mu, inst.nu, inst.cost.values
        identity = max(
            abs(r.rate - (r.f[i] + r.g[j] - C[i, j] + r.eps * math.log(mu.weights[i] * nu.weights[j])))
            for r in report.rows
        )
    _flag(run, "single_cell_identity", None if identity is None else identity <= 1e-12, identity)


EXAMPLE52_EXTRA = ("f_min", "f_max", "g_min", "g_max")


def run_example52(run: Run, threads: int):
    n = int(run.cfg.experiment["n"])
    report = example52(n, run.cfg.schedule, run.cfg.solver)
    run.report = report
    header, rows = reporting.convergence_table(report, EXAMPLE52_EXTRA)
    run.add(reporting.write_csv(run.out / "report.csv", header, rows))
    for name, passed in report.checks.items():
        run.check(name, passed)
    run.summary.update({"grid": n, "S0": report.S0, "max_spread": report.meta["max_spread"]})
    _flag(run, "constant_half", report.checks["potentials_constant_half"])
    if run.declared("control_nonconstant", False):
        eps_end = float(run.cfg.experiment.get("control_eps_end", 1e-2))
        sched = run.cfg.schedule
        control_schedule = EpsSchedule(sched.eps_start, max(eps_end, sched.eps_end), sched.factor)
        control = example52(n, control_schedule, run.cfg.solver, kernel="squared-euclidean")
        header, rows = reporting.convergence_table(control, EXAMPLE52_EXTRA)
        run.add(reporting.write_csv(run.out / "control.csv", header, rows))
        run.summary["control_min_spread"] = min(max(np.ptp(r.f), np.ptp(r.g)) for r in control.rows)
        _flag(run, "control_nonconstant", n > 1 and control.checks["potentials_nonconstant"], run.summary["control_min_spread"])


def run_mm(run: Run, threads: int):
    problem = run.cfg.multi
    solver = run.cfg.solver
    with_exact = problem.cost.size <= MAX_EXACT_CELLS
    try:
        report = mm_schedule(problem, run.cfg.schedule, tol=solver.tol, max_iter=solver.max_iter, exact=with_exact)
    except SinkhornError as exc:
        raise ScheduleError(math.nan, exc) from exc
    run.report = report
    header = ["eps", "dual", "primal", "gap_to_exact", "max_residual", "iterations"]
    rows = [[r.eps, r.dual, r.primal, r.gap_to_exact, r.max_residual, r.iterations] for r in report.rows]
    run.add(reporting.write_csv(run.out / "report.csv", header, rows))
    for name, passed in report.checks.items():
        run.check(name, passed)
    last = report.rows[-1]
    run.summary.update({"exact_value": report.exact_value, "final_gap": last.gap_to_exact})
    _threshold(run, "final_gap_max", abs(last.gap_to_exact), binding=with_exact)
    _threshold(run, "residual_max", max(r.max_residual for r in report.rows))


RUNNERS = {
    "solve": run_solve,
    "exact": run_exact,
    "converge": run_converge,
    "ldp": run_ldp,
    "example52": run_example52,
    "mm": run_mm,
}


def _timestamp() -> str:
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return time.strftime("%Y%m%dT%H%M%SZ", time.gmtime(epoch))


def _write_partial(run: Run, exc: ScheduleError):
    if exc.rows and hasattr(exc.rows[0], "S_eps"):
        from .lab import CSV_COLUMNS

        rows = [[getattr(r, c) for c in CSV_COLUMNS] for r in exc.rows]
        run.add(reporting.write_csv(run.out / "partial.csv", CSV_COLUMNS, rows))


def run_config(config_path, command: str, out, seed: int | None = None, figures: bool = False) -> int:
    """Run one config end to end; returns the process exit status."""
    out = Path(out)
    try:
        cfg = load_config(config_path, command, seed)
        if command == "example52":
            mu, nu, C = example52_instance(int(cfg.experiment["n"]))
            cfg.instance = Instance(mu, nu, C)
    except (ConfigError, InstanceError) as exc:
        print(f"eot: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out.mkdir(parents=True, exist_ok=True)
    threads = max(1, int(os.environ.get("EOT_THREADS", "1")))
    run = Run(cfg, out)
    status, error = "ok", None
    try:
        RUNNERS[command](run, threads)
    except ConfigError as exc:
        print(f"eot: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        status = "error"
        cause = exc.cause if isinstance(exc, ScheduleError) else exc
        error = {
            "type": type(cause).__name__,
            "message": str(cause),
            "epsilon": getattr(exc, "epsilon", None),
            "completed_rows": len(getattr(exc, "rows", [])),
        }
        if isinstance(exc, ScheduleError):
            _write_partial(run, exc)
        print(f"eot: solver error: {exc}", file=sys.stderr)

    if run.report is not None and run.report.rows:
        run.add(*reporting.emit_plot_data(run.report, out / "series"))
        if figures:
            from .plotting import render_figures

            run.add(*render_figures(run.report, out / "figures"))

    passed = status == "ok" and all(a["passed"] for a in run.assertions.values())
    if status == "ok" and not passed:
        status = "assertion_failed"
    config_hash = cfg.config_hash()
    summary = {
        "command": command,
        "config": cfg.raw,
        "config_hash": config_hash,
        "instance_hash": cfg.instance_hash(),
        "seed": cfg.seed,
        "status": status,
        "error": error,
        "assertions": run.assertions,
        "passed": passed,
        **run.summary,
    }
    run.add(reporting.write_json(out / "summary.json", summary))
    manifest = {
        "run_id": f"{_timestamp()}-{config_hash[:12]}",
        "command": command,
        "config_file": Path(config_path).name,
        "config": cfg.raw,
        "config_hash": config_hash,
        "instance_hash": cfg.instance_hash(),
        "seed": cfg.seed,
        "status": status,
        "error": error,
        "files": [
            {"path": p.relative_to(out).as_posix(), "sha256": reporting.file_digest(p)} for p in run.files
        ],
        "assertions": {name: a["passed"] for name, a in run.assertions.items()},
    }
    reporting.write_json(out / "manifest.json", manifest)
    if status == "error":
        return EXIT_SOLVER
    return EXIT_OK if passed else EXIT_ASSERT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eot", description="Entropic optimal transport experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (TOML)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed for generated instances")
        p.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return run_config(args.config, args.command, args.out, seed=args.seed, figures=args.figures)


if __name__ == "__main__":
    sys.exit(main())

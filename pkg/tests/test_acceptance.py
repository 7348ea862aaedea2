"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line with the measured numbers; the
lines are printed in the pytest terminal summary. Running this file as a
script prints the same lines without pytest.
"""

import math
import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np

from eotlab import (
    EpsSchedule,
    MultiProblem,
    SinkhornConfig,
    brute_force_assignment,
    check_optimality,
    example52,
    invariant_audit,
    ldp_estimate,
    mm_exact,
    mm_sinkhorn,
    run_schedule,
    sinkhorn_solve,
    solve_exact,
)
from eotlab.cli import main as cli_main
from eotlab.instances import assignment_instance, grid_instance, make_rng, random_instance, random_tensor_problem
from eotlab.lab import CostFamily, cost_perturbation_gap
from eotlab.multimarginal import mm_schedule
from eotlab.sinkhorn import softmin_update, softmin_update_cols

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script from elsewhere
    ACCEPTANCE_LINES = []

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
EPSILONS = (1.0, 0.1, 0.01)
TOL = 1e-10


def record(number, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


@lru_cache(maxsize=None)
def random_solves():
    """The 150 solves shared by criteria 1 to 4, with wall-clock time per solve."""
    out = []
    for seed in range(50):
        mu, nu, C = random_instance(seed, 20, 20)
        for eps in EPSILONS:
            t0 = time.perf_counter()
            sol = sinkhorn_solve(mu, nu, C, SinkhornConfig(eps, tol=TOL))
            out.append((mu, nu, C, eps, sol, time.perf_counter() - t0))
    return out


def grid30():
    return grid_instance(30, 30, seed=0)


def test_criterion_01_duality_gap():
    worst_gap, worst_time, worst_res = 0.0, 0.0, 0.0
    for _, _, _, _, sol, seconds in random_solves():
        worst_gap = max(worst_gap, abs(sol.primal - sol.dual) / max(1.0, abs(sol.primal)))
        worst_time = max(worst_time, seconds)
        worst_res = max(worst_res, max(sol.residuals))
    ok = worst_gap <= 1e-6 and worst_time < 1.0 and worst_res <= TOL
    record(1, ok, f"max relative gap {worst_gap:.2e} (<= 1e-6), slowest solve {worst_time:.3f} s (< 1 s), max residual {worst_res:.1e}")


def test_criterion_02_fixed_point():
    worst = 0.0
    for mu, nu, C, eps, sol, _ in random_solves():
        g = softmin_update_cols(sol.potentials.f, C, mu, eps)
        f = softmin_update(g, C, nu, eps)
        worst = max(worst, np.max(np.abs(f - sol.potentials.f)), np.max(np.abs(g - sol.potentials.g)))
    record(2, worst <= 1e-9, f"one extra sweep moves potentials by {worst:.2e} (<= 1e-9)")


def test_criterion_03_normalization():
    worst = 0.0
    for mu, nu, _, _, sol, _ in random_solves():
        half = sol.dual / 2
        worst = max(worst, abs(mu.weights @ sol.potentials.f - half), abs(nu.weights @ sol.potentials.g - half))
    record(3, worst <= 1e-8, f"max |integral - S/2| = {worst:.2e} (<= 1e-8)")


def test_criterion_04_audit():
    worst, failed = 0.0, []
    for mu, nu, C, eps, sol, _ in random_solves():
        report = invariant_audit(sol, C, mu, nu, threshold=1e-8)
        worst = max(worst, report.worst_slack)
        failed += [c.name for c in report.checks if not c.passed]
    detail = f"worst audit slack {worst:.2e} (<= 1e-8)" + (f", failing: {sorted(set(failed))}" if failed else "")
    record(4, worst <= 1e-8 and not failed, detail)


def test_criterion_05_oracle():
    worst_value, worst_cert = 0.0, 0.0
    for seed in range(100):
        mu, nu, C = assignment_instance(seed, 2 + seed % 5)
        sol = solve_exact(mu, nu, C)
        worst_value = max(worst_value, abs(sol.value - brute_force_assignment(mu, nu, C)))
        d = check_optimality(sol.coupling, sol.potentials, C, mu, nu)
        worst_cert = max(worst_cert, d["max_violation"], d["slackness_defect"], abs(d["gap"]))
    ok = worst_value <= 1e-9 and worst_cert <= 1e-9
    record(5, ok, f"value vs enumeration {worst_value:.1e}, certificate {worst_cert:.1e} (both <= 1e-9)")


def test_criterion_06_schedule_on_grid30():
    mu, nu, C = grid30()
    t0 = time.perf_counter()
    report = run_schedule(mu, nu, CostFamily(C), EpsSchedule(1.0, 1e-3, 0.5), SinkhornConfig(1.0, tol=TOL))
    seconds = time.perf_counter() - t0
    S = report.column("S_eps")
    a = float(np.max(np.diff(S)))
    b = float(np.min(S - report.S0))
    c = max(r.max_violation - (r.eps * math.log(900.0) + 1e-8) for r in report.rows)
    L1f, L1g = report.column("L1_f"), report.column("L1_g")
    ok_a, ok_b, ok_c = a <= 1e-8, b >= -1e-8, c <= 0
    if report.dual_unique_hint:
        ok_d = L1f[-1] < L1f[0] and L1g[-1] < L1g[0] and max(L1f[-1], L1g[-1]) <= 0.05
        d = f"(d) L1_f {L1f[0]:.3f}->{L1f[-1]:.2e}, L1_g {L1g[0]:.3f}->{L1g[-1]:.2e}"
    else:
        ok_d, d = True, "(d) skipped: dual_unique_hint false"
    ok = ok_a and ok_b and ok_c and ok_d and seconds < 30
    detail = (
        f"{len(report.rows)} rows, (a) max increase {a:.1e}, (b) min S-S0 {b:.2e}, "
        f"(c) worst excess over bound {c:.2e}, {d}, {seconds:.2f} s"
    )
    record(6, ok, detail)


def test_criterion_07_ldp():
    mu, nu, C = grid_instance(10, 10, seed=0)
    sched = EpsSchedule(1.0, 1e-3, 0.5)
    cfg = SinkhornConfig(1.0, tol=TOL)
    exact = solve_exact(mu, nu, C)
    corner = ldp_estimate(mu, nu, C, [(0, 9)], sched, cfg, exact=exact)
    identity = 0.0
    for r in corner.rows:
        expected = r.f[0] + r.g[9] - C.values[0, 9] + r.eps * math.log(mu.weights[0] * nu.weights[9])
        identity = max(identity, abs(r.rate - expected))
    full = ldp_estimate(mu, nu, C, [(i, j) for i in range(10) for j in range(10)], sched, cfg, exact=exact)
    full_rate = max(abs(r.rate) for r in full.rows)
    last = corner.rows[-1]
    ok = identity <= 1e-12 and full_rate <= 1e-10 and corner.dual_unique_hint and last.eps == 1e-3 and last.gap <= 0.05
    detail = (
        f"single-cell identity {identity:.1e} (<= 1e-12), full-grid rate {full_rate:.1e} (<= 1e-10), "
        f"corner |rate - target| at eps=1e-3: {last.gap:.2e} (<= 0.05), hint {corner.dual_unique_hint}"
    )
    record(7, ok, detail)


def test_criterion_08_example52():
    sched = EpsSchedule(1.0, 1e-3, 0.5)
    worst = 0.0
    for n in (1, 10, 50):
        report = example52(n, sched)
        for r in report.rows:
            worst = max(worst, np.max(np.abs(r.f - 0.5)), np.max(np.abs(r.g - 0.5)))
    # the control stops at 1e-2; below it the uniform grid does not reach tol 1e-10 in the iteration budget
    control = example52(10, EpsSchedule(1.0, 1e-2, 0.5), kernel="squared-euclidean")
    spread = min(max(np.ptp(r.f), np.ptp(r.g)) for r in control.rows)
    ok = worst <= 1e-9 and spread >= 1e-3
    record(8, ok, f"max |f-1/2|, |g-1/2| = {worst:.1e} (<= 1e-9) for n in 1,10,50; control min spread {spread:.3f} (>= 1e-3)")


def test_criterion_09_multimarginal():
    t0 = time.perf_counter()
    consistency = 0.0
    for seed in range(3):
        mu, nu, C = random_instance(seed, 5, 5)
        two = sinkhorn_solve(mu, nu, C, SinkhornConfig(0.2, tol=1e-13))
        multi = mm_sinkhorn(MultiProblem([mu, nu], C.values), 0.2, tol=1e-13)
        f, g = multi.family.potentials
        consistency = max(consistency, np.max(np.abs(f - two.potentials.f)), np.max(np.abs(g - two.potentials.g)))

    single = MultiProblem([mu.__class__([[0.0]], [1.0])] * 3, np.full((1, 1, 1), 3.0))
    closed = mm_sinkhorn(single, 0.5)
    closed_exact = all(np.array_equal(f, [1.0]) for f in closed.family.potentials)
    closed_exact = closed_exact and all(np.array_equal(f, [1.0]) for f in mm_exact(single).family.potentials)

    residual = max(max(mm_sinkhorn(random_tensor_problem(s, (5, 5, 5)), 0.1, tol=TOL).residuals) for s in range(3))

    sched = list(EpsSchedule(1.0, 1e-2, 0.5))
    worst_gap = 0.0
    for sizes in ((3, 3, 3), (4, 4, 4)):
        for seed in range(3):
            rep = mm_schedule(random_tensor_problem(seed, sizes), sched, tol=TOL)
            worst_gap = max(worst_gap, abs(rep.rows[-1].gap_to_exact))
    seconds = time.perf_counter() - t0
    ok = consistency <= 1e-8 and closed_exact and residual <= TOL and worst_gap <= 0.05 and seconds < 60
    detail = (
        f"N=2 consistency {consistency:.1e} (<= 1e-8), singleton closed form exact: {closed_exact}, "
        f"5x5x5 residual {residual:.1e} (<= 1e-10), dual - exact at eps=1e-2 {worst_gap:.3f} (<= 0.05), {seconds:.1f} s"
    )
    record(9, ok, detail)


def test_criterion_10_varying_costs():
    mu, nu, C = grid30()
    h = make_rng(7).uniform(0.0, 1.0, size=C.shape)
    sched = EpsSchedule(1.0, 1e-3, 0.5)
    gap, fixed, _ = cost_perturbation_gap(mu, nu, C, h, sched, SinkhornConfig(1.0, tol=TOL))
    bound = 2 * 1e-3 * float(np.max(np.abs(h))) + 1e-8
    ok = gap <= 2e-3 + 1e-8 and fixed.dual_unique_hint
    record(10, ok, f"sup-norm gap {gap:.2e} (<= 2e-3 + 1e-8; with ||h|| = {np.max(np.abs(h)):.3f} the bound is {bound:.2e})")


def test_criterion_11_determinism(tmp_path):
    runs = [
        ("converge", "grid30.toml"),
        ("converge", "grid30_additive.toml"),
        ("ldp", "ldp_corner.toml"),
        ("example52", "example52_n1.toml"),
        ("mm", "mm_random.toml"),
        ("exact", "exact_three_point.toml"),
        ("solve", "solve_two_point.toml"),
    ]
    differing = []
    for cmd, name in runs:
        trees = []
        for k in range(2):
            out = tmp_path / f"{name}-{k}"
            cli_main([cmd, "--config", str(CONFIGS / name), "--out", str(out)])
            trees.append({p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
        if trees[0] != trees[1] or not trees[0]:
            differing.append(name)
    record(11, not differing, f"{len(runs)} configs run twice, differing outputs: {differing or 'none'}")


if __name__ == "__main__":
    import tempfile

    failures = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                failures += 1
    sys.exit(1 if failures else 0)

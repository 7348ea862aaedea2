"""Small-noise experiments: epsilon schedules, LDP rates, invariant audits.

Every experiment returns a plain report object; serialization lives in
:mod:`eotlab.reporting`.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .exact import ExactSolution, c_transform, solve_exact
from .measures import (
    CostKernel,
    CostMatrix,
    DiscreteMeasure,
    InstanceError,
    build_cost_matrix,
)
from .sinkhorn import SinkhornConfig, SinkhornSolution, sinkhorn_solve

logger = logging.getLogger(__name__)


class ScheduleError(RuntimeError):
    """A solver failure inside a schedule; carries the offending epsilon and the rows done so far."""

    def __init__(self, epsilon: float, cause: Exception, rows=()):
        super().__init__(f"{type(cause).__name__} at epsilon={epsilon!r}: {cause}")
        self.epsilon = epsilon
        self.cause = cause
        self.rows = list(rows)


@dataclass(frozen=True)
class EpsSchedule:
    """Geometric schedule ``eps_start * factor**k``, closed off with ``eps_end`` itself."""

    eps_start: float
    eps_end: float
    factor: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.eps_start) and self.eps_start > self.eps_end > 0):
            raise InstanceError("need eps_start > eps_end > 0")
        if not 0 < self.factor < 1:
            raise InstanceError("factor must lie in (0, 1)")

    @property
    def values(self) -> list[float]:
        out = []
        k = 0
        while True:
            eps = self.eps_start * self.factor**k
            if eps <= self.eps_end * (1 + 1e-9):
                break
            out.append(eps)
            k += 1
        out.append(float(self.eps_end))
        return out

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class CostFamily:
    """Costs ``c_eps`` converging to a limit cost as epsilon goes to zero.

    ``perturbation`` is ``"none"``, ``"additive"`` (``c + eps * h``) or
    ``"custom"`` (``payload`` maps epsilon to a full matrix).
    """

    limit: CostMatrix
    perturbation: str = "none"
    payload: object = None
    separable_bound: tuple | None = None

    def __post_init__(self):
        if self.perturbation not in ("none", "additive", "custom"):
            raise InstanceError(f"unknown perturbation {self.perturbation!r}")
        if self.perturbation == "additive":
            h = np.asarray(self.payload, dtype=float)
            if h.shape != self.limit.shape or not np.all(np.isfinite(h)):
                raise InstanceError("additive perturbation must be a finite matrix of the cost's shape")
        if self.perturbation == "custom" and not isinstance(self.payload, dict):
            raise InstanceError("custom perturbation needs a {epsilon: matrix} mapping")

    def cost_at(self, epsilon: float) -> CostMatrix:
        if self.perturbation == "none":
            return self.limit
        if self.perturbation == "additive":
            return CostMatrix(self.limit.values + epsilon * np.asarray(self.payload, dtype=float))
        for key, matrix in self.payload.items():
            if math.isclose(float(key), epsilon, rel_tol=1e-12):
                return CostMatrix(matrix)
        raise InstanceError(f"custom family has no cost for epsilon={epsilon!r}")

    def bound(self, schedule) -> tuple[np.ndarray, np.ndarray]:
        if self.separable_bound is not None:
            c1, c2 = self.separable_bound
            return np.asarray(c1, float), np.asarray(c2, float)
        worst = np.max([self.cost_at(eps).values for eps in schedule], axis=0)
        return worst.max(axis=1), np.zeros(worst.shape[1])

    def check(self, schedule) -> None:
        """Common separable majorant and shrinking deviation from the limit on the schedule."""
        c1, c2 = self.bound(schedule)
        deviations = []
        for eps in schedule:
            values = self.cost_at(eps).values
            excess = values - (c1[:, None] + c2[None, :])
            if excess.max() > 0:
                raise InstanceError(f"cost at epsilon={eps!r} exceeds the separable bound by {excess.max():.3e}")
            deviations.append(float(np.max(np.abs(values - self.limit.values))))
        if any(b > a * (1 + 1e-12) + 1e-15 for a, b in zip(deviations, deviations[1:])):
            raise InstanceError(f"cost deviation from the limit does not shrink along the schedule: {deviations}")


@dataclass
class ScheduleRow:
    eps: float
    S_eps: float
    I_eps: float
    L1_f: float
    L1_g: float
    gap_to_S0: float
    max_violation: float
    iterations: int
    f: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    projected_dual: float = math.nan


CSV_COLUMNS = ("eps", "S_eps", "I_eps", "L1_f", "L1_g", "gap_to_S0", "max_violation", "iterations")


@dataclass
class ConvergenceReport:
    rows: list
    S0: float
    dual_unique_hint: bool
    exact: ExactSolution = field(repr=False)
    meta: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    tol: float = 1e-10

    @property
    def l1_binding(self) -> bool:
        return self.dual_unique_hint

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def standard_checks(self) -> dict:
        slack = 10 * self.tol
        S = self.column("S_eps")
        out = {"S_above_S0": bool(np.all(S >= self.S0 - slack))}
        if self.meta.get("perturbation", "none") == "none":
            out["S_nonincreasing"] = bool(np.all(np.diff(S) <= slack))
        return out


def _run_one(mu, nu, C, eps, cfg: SinkhornConfig, init_g):
    return sinkhorn_solve(mu, nu, C, replace(cfg, epsilon=eps), init_g=init_g)


def run_schedule(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    family: CostFamily,
    schedule: EpsSchedule,
    cfg: SinkhornConfig,
    warm_start: bool = True,
    threads: int = 1,
    spot_check: bool = False,
) -> ConvergenceReport:
    """Solve the exact problem at the limit cost, then Sinkhorn at every scheduled epsilon.

    With ``warm_start`` each solve starts from the previous epsilon's ``g``;
    otherwise solves are independent and may use ``threads`` workers. Rows
    are always ordered by decreasing epsilon.
    """
    family.limit.check_against(mu, nu)
    eps_list = list(schedule)
    family.check(eps_list)
    exact = solve_exact(mu, nu, family.limit)
    limit = family.limit

    rows: list[ScheduleRow] = []
    solutions: list[SinkhornSolution] = []
    if warm_start or threads <= 1:
        g = None
        for eps in eps_list:
            C = family.cost_at(eps)
            try:
                sol = _run_one(mu, nu, C, eps, cfg, g if warm_start else None)
            except Exception as exc:
                raise ScheduleError(eps, exc, rows) from exc
            g = sol.potentials.g
            solutions.append(sol)
            rows.append(_schedule_row(eps, sol, C, limit, exact, mu, nu))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_one, mu, nu, family.cost_at(eps), eps, cfg, None) for eps in eps_list]
            for eps, fut in zip(eps_list, futures):
                try:
                    sol = fut.result()
                except Exception as exc:
                    raise ScheduleError(eps, exc, rows) from exc
                solutions.append(sol)
                rows.append(_schedule_row(eps, sol, family.cost_at(eps), limit, exact, mu, nu))

    meta = {
        "m": mu.size,
        "n": nu.size,
        "perturbation": family.perturbation,
        "schedule": eps_list,
        "min_cell_weight": float(mu.weights.min() * nu.weights.min()),
    }
    if spot_check and warm_start:
        eps = eps_list[-1]
        cold = _run_one(mu, nu, family.cost_at(eps), eps, cfg, None)
        meta["cold_start_deviation"] = float(
            max(
                np.max(np.abs(cold.potentials.f - solutions[-1].potentials.f)),
                np.max(np.abs(cold.potentials.g - solutions[-1].potentials.g)),
            )
        )
    report = ConvergenceReport(rows, exact.value, exact.dual_unique_hint, exact, meta, tol=cfg.tol)
    report.checks.update(report.standard_checks())
    return report


def _schedule_row(eps, sol, C, limit, exact, mu, nu) -> ScheduleRow:
    f, g = sol.potentials.f, sol.potentials.g
    f0, g0 = exact.potentials.f, exact.potentials.g
    return ScheduleRow(
        eps=float(eps),
        S_eps=sol.dual,
        I_eps=sol.primal,
        L1_f=float(mu.weights @ np.abs(f - f0)),
        L1_g=float(nu.weights @ np.abs(g - g0)),
        gap_to_S0=sol.dual - exact.value,
        max_violation=float(np.max(f[:, None] + g[None, :] - C.values)),
        iterations=sol.iterations,
        f=f,
        g=g,
        projected_dual=float(mu.weights @ f + nu.weights @ c_transform(f, limit)),
    )


@dataclass
class LdpRow:
    eps: float
    log_mass: float
    rate: float
    gap: float
    f: np.ndarray = field(default=None, repr=False)
    g: np.ndarray = field(default=None, repr=False)

    @property
    def mass(self) -> float:
        # may underflow to 0.0 for far-off events; the rate comes from log_mass
        return math.exp(self.log_mass)


@dataclass
class LdpReport:
    event: list
    rows: list
    target: float
    dual_unique_hint: bool
    dropped: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def final_gap(self) -> float:
        return self.rows[-1].gap if self.rows else math.nan


def _event_mask(event, shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for cell in event:
        i, j = (int(c) for c in cell)
        if not (0 <= i < shape[0] and 0 <= j < shape[1]):
            raise InstanceError(f"event cell {(i, j)} outside the {shape} grid")
        mask[i, j] = True
    return mask


def log_event_mass(sol_f, sol_g, C: CostMatrix, epsilon: float, mu, nu, mask) -> float:
    """``log pi_eps(E)`` evaluated in the log domain."""
    z = (sol_f[:, None] + sol_g[None, :] - C.values) / epsilon + np.log(np.outer(mu.weights, nu.weights))
    z = z[mask]
    zmax = z.max()
    return float(zmax + np.log(np.exp(z - zmax).sum()))


def ldp_estimate(mu, nu, C: CostMatrix, event, schedule: EpsSchedule, cfg: SinkhornConfig, exact: ExactSolution | None = None) -> LdpReport:
    """Rates ``eps log pi_eps(E)`` along the schedule against ``-min_E (C - f0 - g0)``."""
    event = [tuple(int(c) for c in cell) for cell in event]
    if not event:
        raise InstanceError("event must contain at least one cell")
    mask = _event_mask(event, C.shape)
    if exact is None:
        exact = solve_exact(mu, nu, C)
    rate_fn = C.values - exact.potentials.f[:, None] - exact.potentials.g[None, :]
    target = -float(rate_fn[mask].min())

    rows, dropped = [], []
    g = None
    for eps in schedule:
        try:
            sol = _run_one(mu, nu, C, eps, cfg, g)
        except Exception as exc:
            raise ScheduleError(eps, exc, rows) from exc
        g = sol.potentials.g
        log_mass = log_event_mass(sol.potentials.f, sol.potentials.g, C, eps, mu, nu, mask)
        if not math.isfinite(log_mass):
            dropped.append(float(eps))
            logger.warning("event log-mass is not finite at epsilon=%g; row dropped", eps)
            continue
        rate = eps * log_mass
        rows.append(LdpRow(float(eps), log_mass, rate, abs(rate - target), sol.potentials.f, sol.potentials.g))
    return LdpReport(event, rows, target, exact.dual_unique_hint, dropped, {"m": mu.size, "n": nu.size})


@dataclass
class AuditCheck:
    name: str
    passed: bool
    slack: float
    margin: float


@dataclass
class AuditReport:
    checks: list
    threshold: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AuditCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def worst_slack(self) -> float:
        return max(c.slack for c in self.checks)


def invariant_audit(solution: SinkhornSolution, C: CostMatrix, mu: DiscreteMeasure, nu: DiscreteMeasure, threshold: float | None = None) -> AuditReport:
    """Check a converged solution against the a-priori bounds and identities it must satisfy.

    ``margin`` is the worst signed excess (<= 0 means satisfied); ``slack``
    is its positive part. Nothing here raises on a failed check.
    """
    if threshold is None:
        threshold = 10 * solution.coupling.tol
    eps = solution.epsilon
    f, g = solution.potentials.f, solution.potentials.g
    c = C.values
    S = solution.dual
    margins = {}
    margins["f_upper"] = float(np.max(f - c @ nu.weights))
    margins["g_upper"] = float(np.max(g - mu.weights @ c))
    margins["f_lower"] = float(np.max(np.min(c - g[None, :], axis=1) - f))
    margins["g_lower"] = float(np.max(np.min(c - f[:, None], axis=0) - g))
    cost_osc_rows = np.max(np.abs(c[:, None, :] - c[None, :, :]), axis=2)
    cost_osc_cols = np.max(np.abs(c[:, :, None] - c[:, None, :]), axis=0)
    margins["f_lipschitz"] = float(np.max(np.abs(f[:, None] - f[None, :]) - cost_osc_rows))
    margins["g_lipschitz"] = float(np.max(np.abs(g[:, None] - g[None, :]) - cost_osc_cols))
    margins["normalization_f"] = abs(float(mu.weights @ f) - S / 2)
    margins["normalization_g"] = abs(float(nu.weights @ g) - S / 2)
    density = np.exp((f[:, None] + g[None, :] - c) / eps)
    margins["row_identity"] = float(np.max(np.abs(density @ nu.weights - 1.0)))
    margins["col_identity"] = float(np.max(np.abs(mu.weights @ density - 1.0)))
    checks = [
        AuditCheck(name, bool(m <= threshold), max(0.0, m), m) for name, m in margins.items()
    ]
    return AuditReport(checks, threshold)


def example52_instance(n: int, kernel: str = "off-diagonal-indicator"):
    """Uniform grids ``k/n`` and ``k/n + 1/(2n)``: disjoint supports, so the diagonal is never sampled."""
    if n < 1:
        raise InstanceError("grid size must be >= 1")
    x = np.arange(n) / n
    mu = DiscreteMeasure.uniform(x)
    nu = DiscreteMeasure.uniform(x + 1.0 / (2 * n))
    return mu, nu, build_cost_matrix(CostKernel(kernel), mu, nu)


def example52(n: int, schedule: EpsSchedule, cfg: SinkhornConfig | None = None, kernel: str = "off-diagonal-indicator", atol: float = 1e-9) -> ConvergenceReport:
    """Indicator cost off the diagonal: every epsilon should give ``f = g = 1/2``.

    With ``kernel="squared-euclidean"`` the same grids serve as a negative
    control; there the potentials are not constant.
    """
    mu, nu, C = example52_instance(n, kernel)
    cfg = cfg or SinkhornConfig(epsilon=1.0)
    report = run_schedule(mu, nu, CostFamily(C), schedule, cfg)
    spreads = [max(np.ptp(r.f), np.ptp(r.g)) for r in report.rows]
    report.meta.update({"experiment": "example52", "grid": n, "kernel": kernel})
    report.meta["max_spread"] = float(max(spreads))
    if kernel == "off-diagonal-indicator":
        report.checks["potentials_constant_half"] = bool(
            all(np.max(np.abs(r.f - 0.5)) <= atol and np.max(np.abs(r.g - 0.5)) <= atol for r in report.rows)
        )
    else:
        report.checks["potentials_nonconstant"] = bool(min(spreads) >= 1e-3)
    return report


def cost_perturbation_gap(mu, nu, C: CostMatrix, h, schedule: EpsSchedule, cfg: SinkhornConfig) -> tuple[float, ConvergenceReport, ConvergenceReport]:
    """Sup-norm distance at the last epsilon between runs on ``c`` and on ``c + eps*h``."""
    fixed = run_schedule(mu, nu, CostFamily(C), schedule, cfg)
    varying = run_schedule(mu, nu, CostFamily(C, "additive", np.asarray(h, float)), schedule, cfg)
    a, b = fixed.rows[-1], varying.rows[-1]
    gap = float(max(np.max(np.abs(a.f - b.f)), np.max(np.abs(a.g - b.g))))
    return gap, fixed, varying

"""Entropic and exact transport with N >= 2 marginals on a dense cost tensor."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .measures import DiscreteMeasure, InstanceError, NonFiniteError
from .simplex import SimplexError, solve_lp
from .sinkhorn import MaxIterExceeded

MAX_SINKHORN_CELLS = 10**7
MAX_EXACT_CELLS = 10**4
NORMALIZATION_TOL = 1e-10


@dataclass(frozen=True)
class MultiProblem:
    measures: tuple
    cost: np.ndarray

    def __post_init__(self):
        measures = tuple(self.measures)
        if len(measures) < 2:
            raise InstanceError("need at least two marginals")
        if not all(isinstance(m, DiscreteMeasure) for m in measures):
            raise InstanceError("marginals must be DiscreteMeasure instances")
        cost = np.array(self.cost, dtype=float)
        expected = tuple(m.size for m in measures)
        if cost.shape != expected:
            raise InstanceError(f"cost tensor has shape {cost.shape}, expected {expected}")
        if not np.all(np.isfinite(cost)) or np.any(cost < 0):
            raise InstanceError("cost tensor entries must be finite and >= 0")
        cost.setflags(write=False)
        object.__setattr__(self, "measures", measures)
        object.__setattr__(self, "cost", cost)

    @property
    def n_marginals(self) -> int:
        return len(self.measures)

    @property
    def shape(self) -> tuple:
        return self.cost.shape

    def _broadcast(self, k: int, vec: np.ndarray) -> np.ndarray:
        shape = [1] * self.n_marginals
        shape[k] = len(vec)
        return np.asarray(vec).reshape(shape)

    def tensor_sum(self, vectors) -> np.ndarray:
        """``sum_k vectors[k][x_k]`` on the full grid, accumulated in axis order."""
        total = np.zeros(self.shape)
        for k, vec in enumerate(vectors):
            total = total + self._broadcast(k, vec)
        return total

    def log_reference(self) -> np.ndarray:
        return self.tensor_sum([np.log(m.weights) for m in self.measures])


@dataclass(frozen=True)
class PotentialFamily:
    potentials: tuple
    epsilon: float = 0.0
    normalized: bool = False

    def integrals(self, measures) -> np.ndarray:
        return np.array([float(m.weights @ f) for m, f in zip(measures, self.potentials)])


@dataclass(frozen=True)
class CouplingTensor:
    mass: np.ndarray
    tol: float = 0.0

    def marginal(self, k: int) -> np.ndarray:
        axes = tuple(a for a in range(self.mass.ndim) if a != k)
        return self.mass.sum(axis=axes)

    def residuals(self, measures) -> list[float]:
        return [float(np.abs(self.marginal(k) - m.weights).sum()) for k, m in enumerate(measures)]


@dataclass(frozen=True)
class MultiSinkhornResult:
    family: PotentialFamily
    coupling: CouplingTensor
    iterations: int
    residuals: list
    dual: float
    primal: float


@dataclass(frozen=True)
class MultiExactResult:
    value: float
    coupling: CouplingTensor
    family: PotentialFamily


def normalize_family(potentials, measures) -> list[np.ndarray]:
    """Shift each potential by a constant (shifts summing to zero) so all integrals agree."""
    ints = np.array([float(m.weights @ f) for m, f in zip(measures, potentials)])
    target = ints.sum() / len(ints)
    return [np.asarray(f, float) + (target - i) for f, i in zip(potentials, ints)]


def _lse_except(z: np.ndarray, k: int) -> np.ndarray:
    axes = tuple(a for a in range(z.ndim) if a != k)
    zmax = z.max(axis=axes, keepdims=True)
    s = np.exp(z - zmax).sum(axis=axes)
    return np.log(s) + zmax.reshape(-1)


def mm_sinkhorn(problem: MultiProblem, epsilon: float, tol: float = 1e-10, max_iter: int = 100_000, init=None) -> MultiSinkhornResult:
    """Cyclic soft-min updates over marginals 1..N until every marginal residual is <= ``tol``."""
    if not epsilon > 0:
        raise InstanceError("epsilon must be > 0")
    if problem.cost.size > MAX_SINKHORN_CELLS:
        raise InstanceError(f"cost tensor has {problem.cost.size} cells (limit {MAX_SINKHORN_CELLS})")
    measures = problem.measures
    N = problem.n_marginals
    log_ref = problem.log_reference()
    scaled_cost = problem.cost / epsilon
    if init is None:
        pots = [np.zeros(m.size) for m in measures]
    else:
        pots = [np.array(f, dtype=float) for f in init]
    log_w = [np.log(m.weights) for m in measures]

    residuals = [math.inf] * N
    it = 0
    while it < max_iter:
        it += 1
        for k in range(N):
            z = problem.tensor_sum(pots) / epsilon - scaled_cost + log_ref
            # z's k-marginal is log of the current plan's k-marginal
            pots[k] = pots[k] - epsilon * (_lse_except(z, k) - log_w[k])
        pots = normalize_family(pots, measures)
        if not all(np.all(np.isfinite(f)) for f in pots):
            raise NonFiniteError("non-finite potentials", it)
        z = problem.tensor_sum(pots) / epsilon - scaled_cost + log_ref
        plan = np.exp(z)
        residuals = CouplingTensor(plan).residuals(measures)
        if max(residuals) <= tol:
            break
    else:
        raise MaxIterExceeded(
            f"multimarginal residual {max(residuals):.3e} > tol {tol:.1e} after {max_iter} sweeps",
            [max(residuals)],
        )

    family = PotentialFamily(tuple(pots), epsilon=epsilon, normalized=True)
    mass = float(plan.sum())
    dual = float(sum(family.integrals(measures))) - epsilon * mass + epsilon
    pos = plan > 0
    entropy = float(np.sum(plan[pos] * (z[pos] - log_ref[pos])))
    primal = float(np.sum(plan * problem.cost)) + epsilon * entropy
    return MultiSinkhornResult(family, CouplingTensor(plan, tol), it, residuals, dual, primal)


def marginal_constraints(problem: MultiProblem) -> tuple[np.ndarray, np.ndarray]:
    """Equality system ``A @ vec(pi) = b`` stacking one block of rows per marginal."""
    shape = problem.shape
    cells = int(np.prod(shape))
    index = np.arange(cells).reshape(shape)
    rows, rhs = [], []
    for k, m in enumerate(problem.measures):
        for x in range(shape[k]):
            row = np.zeros(cells)
            row[np.take(index, x, axis=k).ravel()] = 1.0
            rows.append(row)
            rhs.append(m.weights[x])
    return np.array(rows), np.array(rhs)


def mm_exact(problem: MultiProblem) -> MultiExactResult:
    """Multimarginal linear program solved with the dense simplex; duals normalized symmetrically."""
    if problem.cost.size > MAX_EXACT_CELLS:
        raise InstanceError(f"exact multimarginal limited to {MAX_EXACT_CELLS} cells, got {problem.cost.size}")
    A, b = marginal_constraints(problem)
    lp = solve_lp(problem.cost.ravel(), A, b)
    splits = np.cumsum([m.size for m in problem.measures])[:-1]
    pots = normalize_family(np.split(lp.duals, splits), problem.measures)

    mass = lp.x.reshape(problem.shape)
    slack = problem.cost - problem.tensor_sum(pots)
    if slack.min() < -1e-9:
        raise SimplexError(f"dual infeasible by {-slack.min():.3e}", lp.basis)
    if np.any(slack[mass > 1e-12] > 1e-9):
        raise SimplexError("complementary slackness violated", lp.basis)
    family = PotentialFamily(tuple(pots), epsilon=0.0, normalized=True)
    return MultiExactResult(lp.value, CouplingTensor(mass, 1e-9), family)


@dataclass
class MultiScheduleRow:
    eps: float
    dual: float
    primal: float
    gap_to_exact: float
    max_residual: float
    iterations: int
    potentials: tuple = field(repr=False, default=())


@dataclass
class MultiReport:
    rows: list
    exact_value: float
    meta: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)


def mm_schedule(problem: MultiProblem, schedule, tol: float = 1e-10, max_iter: int = 100_000, exact: bool = True) -> MultiReport:
    """Warm-started multimarginal solves along ``schedule``, compared with the exact value."""
    value = mm_exact(problem).value if exact else math.nan
    rows = []
    init = None
    for eps in schedule:
        res = mm_sinkhorn(problem, eps, tol=tol, max_iter=max_iter, init=init)
        init = res.family.potentials
        rows.append(
            MultiScheduleRow(
                float(eps), res.dual, res.primal, res.dual - value, max(res.residuals), res.iterations, res.family.potentials
            )
        )
    report = MultiReport(rows, value, {"shape": list(problem.shape), "schedule": list(schedule)})
    if exact:
        report.checks["dual_above_exact"] = bool(all(r.gap_to_exact >= -10 * tol for r in rows))
    return report

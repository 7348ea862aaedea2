"""Log-domain Sinkhorn iteration for the Schrödinger potentials.

Each sweep updates ``g`` from ``f`` and then ``f`` from ``g`` by an exact
soft-min, then re-centres the pair so that ``sum(mu*f) == sum(nu*g)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .measures import (
    Coupling,
    CostMatrix,
    DiscreteMeasure,
    InstanceError,
    NonFiniteError,
    PotentialPair,
    dual_value,
    marginal_residuals,
    primal_value,
)

logger = logging.getLogger(__name__)

# exp() overflows a double just above 709.78
_EXP_LIMIT = 700.0


class SinkhornError(RuntimeError):
    pass


class MaxIterExceeded(SinkhornError):
    """Raised when the marginal residual is still above ``tol`` after ``max_iter`` sweeps."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


class DualityGapError(SinkhornError):
    pass


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float
    tol: float = 1e-10
    max_iter: int = 100_000
    gap_tol: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InstanceError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.tol > 0:
            raise InstanceError(f"tol must be > 0, got {self.tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InstanceError(f"max_iter must be a positive integer, got {self.max_iter}")
        if not self.gap_tol > 0:
            raise InstanceError(f"gap_tol must be > 0, got {self.gap_tol}")


@dataclass(frozen=True)
class SinkhornSolution:
    potentials: PotentialPair
    coupling: Coupling
    iterations: int
    residuals: tuple[float, float]
    primal: float
    dual: float
    history: list[float] = field(default_factory=list, repr=False, compare=False)

    @property
    def epsilon(self) -> float:
        return self.potentials.epsilon


def _softmin_rows(h: np.ndarray, cost: np.ndarray, log_w: np.ndarray, epsilon: float) -> np.ndarray:
    # out_i = -eps * log sum_j w_j exp((h_j - cost_ij)/eps), shifted by the row max
    z = (h[None, :] - cost) / epsilon + log_w[None, :]
    zmax = z.max(axis=1)
    s = np.exp(z - zmax[:, None]).sum(axis=1)
    return -epsilon * (zmax + np.log(s))


def softmin_update(g, C: CostMatrix, nu: DiscreteMeasure, epsilon: float) -> np.ndarray:
    """``f_i = -eps log sum_j nu_j exp((g_j - C_ij)/eps)`` by max-shifted log-sum-exp."""
    if not epsilon > 0:
        raise InstanceError("softmin_update needs epsilon > 0")
    g = np.asarray(g, dtype=float)
    if g.shape != (nu.size,) or C.shape[1] != nu.size:
        raise InstanceError(f"g has shape {g.shape}, cost {C.shape}, nu size {nu.size}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("g must be finite")
    f = _softmin_rows(g, C.values, np.log(nu.weights), epsilon)
    if not np.all(np.isfinite(f)):
        raise NonFiniteError("softmin produced a non-finite value", int(np.argmin(np.isfinite(f))))
    return f


def softmin_update_cols(f, C: CostMatrix, mu: DiscreteMeasure, epsilon: float) -> np.ndarray:
    """The column counterpart: ``g_j = -eps log sum_i mu_i exp((f_i - C_ij)/eps)``."""
    return softmin_update(f, CostMatrix(C.values.T), mu, epsilon)


def normalize_pair(pp: PotentialPair, mu: DiscreteMeasure, nu: DiscreteMeasure) -> PotentialPair:
    """Shift ``(f + a, g - a)`` so that both potentials integrate to the same value."""
    a = (float(nu.weights @ pp.g) - float(mu.weights @ pp.f)) / 2.0
    return PotentialPair(pp.f + a, pp.g - a, epsilon=pp.epsilon, normalized=True)


def plan_from_potentials(pp: PotentialPair, C: CostMatrix, epsilon: float, mu: DiscreteMeasure, nu: DiscreteMeasure) -> Coupling:
    """``pi_ij = mu_i nu_j exp((f_i + g_j - C_ij)/eps)``; feasibility is not checked."""
    if not epsilon > 0:
        raise InstanceError("plan_from_potentials needs epsilon > 0")
    C.check_against(mu, nu)
    z = (pp.f[:, None] + pp.g[None, :] - C.values) / epsilon
    if np.any(z > _EXP_LIMIT):
        i, j = np.unravel_index(int(np.argmax(z)), z.shape)
        raise NonFiniteError(f"plan exponent {z[i, j]:.1f} overflows", (int(i), int(j)))
    return Coupling(np.outer(mu.weights, nu.weights) * np.exp(z))


def _log_plan(f, g, cost, log_mu, log_nu, epsilon):
    return (f[:, None] + g[None, :] - cost) / epsilon + log_mu[:, None] + log_nu[None, :]


def sinkhorn_sweep(f, g, C: CostMatrix, mu: DiscreteMeasure, nu: DiscreteMeasure, epsilon: float):
    """One full sweep (g from f, then f from g, then re-centre); returns ``(f, g)``."""
    cost = C.values
    g = _softmin_rows(np.asarray(f, float), cost.T, np.log(mu.weights), epsilon)
    f = _softmin_rows(g, cost, np.log(nu.weights), epsilon)
    a = (float(nu.weights @ g) - float(mu.weights @ f)) / 2.0
    return f + a, g - a


def sinkhorn_solve(mu: DiscreteMeasure, nu: DiscreteMeasure, C: CostMatrix, cfg: SinkhornConfig, init_g=None) -> SinkhornSolution:
    """Iterate the Schrödinger equations until the plan's L1 marginal residual is <= ``cfg.tol``.

    ``init_g`` warm-starts the column potential; the default is ``g = 0``.
    """
    C.check_against(mu, nu)
    eps = cfg.epsilon
    cost = C.values
    cost_t = np.ascontiguousarray(cost.T)
    log_mu, log_nu = np.log(mu.weights), np.log(nu.weights)
    if init_g is None:
        g = np.zeros(nu.size)
    else:
        g = np.array(init_g, dtype=float)
        if g.shape != (nu.size,) or not np.all(np.isfinite(g)):
            raise InstanceError("init_g must be a finite vector matching nu")
    f = _softmin_rows(g, cost, log_nu, eps)

    history: list[float] = []
    residual = np.inf
    it = 0
    while it < cfg.max_iter:
        it += 1
        g = _softmin_rows(f, cost_t, log_mu, eps)
        f = _softmin_rows(g, cost, log_nu, eps)
        a = (float(nu.weights @ g) - float(mu.weights @ f)) / 2.0
        f, g = f + a, g - a
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise NonFiniteError("non-finite potentials", it)
        pi = np.exp(_log_plan(f, g, cost, log_mu, log_nu, eps))
        residual = max(
            float(np.abs(pi.sum(axis=1) - mu.weights).sum()),
            float(np.abs(pi.sum(axis=0) - nu.weights).sum()),
        )
        history.append(residual)
        if residual <= cfg.tol:
            break
    else:
        raise MaxIterExceeded(
            f"marginal residual {residual:.3e} > tol {cfg.tol:.1e} after {cfg.max_iter} sweeps "
            f"(epsilon={eps!r})",
            history,
        )

    pp = PotentialPair(f, g, epsilon=eps, normalized=True)
    coupling = Coupling(pi, tol=cfg.tol)
    residuals = marginal_residuals(coupling, mu, nu)

    row_mass = np.exp(_log_plan(f, g, cost, np.zeros_like(log_mu), log_nu, eps)).sum(axis=1)
    worst = float(np.max(np.abs(row_mass - 1.0)))
    if worst > 10 * cfg.tol:
        raise SinkhornError(f"row identity off by {worst:.3e} (> 10*tol)")

    primal = primal_value(coupling, C, eps, mu, nu)
    dual = dual_value(pp, C, mu, nu, eps)
    if abs(primal - dual) > cfg.gap_tol * max(1.0, abs(primal)):
        raise DualityGapError(f"duality gap {abs(primal - dual):.3e} exceeds gap_tol at epsilon={eps!r}")
    logger.debug("sinkhorn eps=%g converged in %d sweeps (residual %.2e)", eps, it, residual)
    return SinkhornSolution(pp, coupling, it, residuals, primal, dual, history)

"""Value types for discrete transport instances and the scalar functionals on them.

Everything here is immutable after construction: arrays are copied and
marked read-only so instances can be shared freely between solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

WEIGHT_SUM_TOL = 1e-12
NORMALIZATION_TOL = 1e-10

# Explicit +inf marker for H(pi | mu x nu) when pi is not absolutely continuous.
INFINITE_ENTROPY = math.inf


class InstanceError(ValueError):
    """Raised when a measure, cost or coupling violates its invariants."""


class NonFiniteError(ArithmeticError):
    """Raised when a computation produces a non-finite value.

    ``index`` points at the offending entry (or sweep) when known.
    """

    def __init__(self, message: str, index=None):
        super().__init__(message if index is None else f"{message} (at {index})")
        self.index = index


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability measure supported on finitely many distinct points of R^d."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2:
            raise InstanceError("atoms must be a list of coordinate vectors")
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(weights) < 1 or len(weights) != len(atoms):
            raise InstanceError(
                f"need as many weights as atoms (got {len(weights)} and {len(atoms)})"
            )
        if not np.all(np.isfinite(atoms)):
            raise InstanceError("atom coordinates must be finite")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise InstanceError("weights must be strictly positive")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise InstanceError(f"weights sum to {weights.sum()!r}, not 1")
        if len(np.unique(atoms, axis=0)) != len(atoms):
            raise InstanceError("atoms must be pairwise distinct")
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "weights", _frozen(weights))

    @classmethod
    def uniform(cls, atoms) -> "DiscreteMeasure":
        atoms = np.asarray(atoms, dtype=float)
        n = len(atoms)
        return cls(atoms, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self):
        return self.size

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return np.array_equal(self.atoms, other.atoms) and np.array_equal(
            self.weights, other.weights
        )

    __hash__ = None


KERNEL_KINDS = ("squared-euclidean", "p-norm", "off-diagonal-indicator", "explicit-matrix")


@dataclass(frozen=True)
class CostKernel:
    """A cost function c(x, y) >= 0, evaluated lazily on atom grids.

    Supported kinds: ``squared-euclidean``, ``p-norm`` (params ``{"p": p}``
    with p >= 1, giving ``|x - y|_p``), ``off-diagonal-indicator`` (``1`` if
    ``x != y``) and ``explicit-matrix`` (params ``{"matrix": rows}``).
    """

    kind: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise InstanceError(f"unknown cost kind {self.kind!r}")
        if self.kind == "p-norm":
            p = float(self.params.get("p", 2.0))
            if not p >= 1:
                raise InstanceError(f"p-norm needs p >= 1, got {p}")
        if self.kind == "explicit-matrix" and "matrix" not in self.params:
            raise InstanceError("explicit-matrix kernel needs a 'matrix' parameter")

    @classmethod
    def matrix(cls, values) -> "CostKernel":
        return cls("explicit-matrix", {"matrix": np.asarray(values, dtype=float).tolist()})

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Cost on the full grid ``x[i], y[j]`` as an (m, n) array."""
        if self.kind == "explicit-matrix":
            return np.array(self.params["matrix"], dtype=float)
        diff = x[:, None, :] - y[None, :, :]
        if self.kind == "squared-euclidean":
            return np.einsum("ijk,ijk->ij", diff, diff)
        if self.kind == "p-norm":
            p = float(self.params.get("p", 2.0))
            return np.sum(np.abs(diff) ** p, axis=-1) ** (1.0 / p)
        return np.any(diff != 0, axis=-1).astype(float)


@dataclass(frozen=True)
class CostMatrix:
    """Nonnegative finite cost evaluated on the atoms of two measures."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or 0 in values.shape:
            raise InstanceError(f"cost matrix must be a nonempty 2-d grid, got shape {values.shape}")
        bad = ~np.isfinite(values) | (values < 0)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise InstanceError(f"cost entry ({i}, {j}) = {values[i, j]!r} is not finite and >= 0")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def shape(self):
        return self.values.shape

    def check_against(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
        if self.values.shape != (mu.size, nu.size):
            raise InstanceError(
                f"cost shape {self.values.shape} does not match measures ({mu.size}, {nu.size})"
            )


def build_cost_matrix(kernel: CostKernel, mu: DiscreteMeasure, nu: DiscreteMeasure) -> CostMatrix:
    if kernel.kind != "explicit-matrix" and mu.dim != nu.dim:
        raise InstanceError(f"atoms live in different dimensions ({mu.dim} vs {nu.dim})")
    values = kernel.evaluate(mu.atoms, nu.atoms)
    if values.shape != (mu.size, nu.size):
        raise InstanceError(
            f"explicit cost has shape {values.shape}, expected ({mu.size}, {nu.size})"
        )
    return CostMatrix(values)


@dataclass(frozen=True)
class Coupling:
    """Nonnegative mass matrix; ``tol`` is the feasibility tolerance it was accepted at."""

    mass: np.ndarray
    tol: float = 0.0

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=float)
        if mass.ndim != 2:
            raise InstanceError("coupling must be a 2-d grid")
        if not np.all(np.isfinite(mass)) or np.any(mass < 0):
            raise InstanceError("coupling entries must be finite and >= 0")
        object.__setattr__(self, "mass", _frozen(mass))

    @property
    def shape(self):
        return self.mass.shape

    def is_feasible(self, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float | None = None) -> bool:
        tol = self.tol if tol is None else tol
        r_row, r_col = marginal_residuals(self, mu, nu)
        return r_row <= tol and r_col <= tol


@dataclass(frozen=True)
class PotentialPair:
    """Dual potentials ``(f, g)``; ``epsilon == 0`` marks Kantorovich potentials."""

    f: np.ndarray
    g: np.ndarray
    epsilon: float = 0.0
    normalized: bool = False

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float).ravel()
        g = np.asarray(self.g, dtype=float).ravel()
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise NonFiniteError("potentials must be finite")
        if self.epsilon < 0:
            raise InstanceError("epsilon must be >= 0")
        object.__setattr__(self, "f", _frozen(f))
        object.__setattr__(self, "g", _frozen(g))

    def normalization_defect(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        return abs(float(mu.weights @ self.f) - float(nu.weights @ self.g))

    def check_normalized(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
        if self.normalized and self.normalization_defect(mu, nu) > NORMALIZATION_TOL:
            raise InstanceError(
                f"pair flagged normalized but defect is {self.normalization_defect(mu, nu):.3e}"
            )


def _check_shape(shape, mu: DiscreteMeasure, nu: DiscreteMeasure, what: str) -> None:
    if tuple(shape) != (mu.size, nu.size):
        raise InstanceError(f"{what} has shape {tuple(shape)}, expected ({mu.size}, {nu.size})")


def relative_entropy(pi: Coupling, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """H(pi | mu x nu) with 0 log 0 = 0; ``INFINITE_ENTROPY`` off the product support."""
    _check_shape(pi.shape, mu, nu, "coupling")
    ref = np.outer(mu.weights, nu.weights)
    p = pi.mass
    pos = p > 0
    if np.any(pos & (ref <= 0)):
        return INFINITE_ENTROPY
    return float(np.sum(p[pos] * np.log(p[pos] / ref[pos])))


def transport_cost(pi: Coupling, C: CostMatrix) -> float:
    return float(np.sum(C.values * pi.mass))


def primal_value(pi: Coupling, C: CostMatrix, epsilon: float, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """<C, pi> + epsilon * H(pi | mu x nu)."""
    _check_shape(pi.shape, mu, nu, "coupling")
    _check_shape(C.shape, mu, nu, "cost")
    if epsilon < 0:
        raise InstanceError("epsilon must be >= 0")
    cost = transport_cost(pi, C)
    if epsilon == 0:
        return cost
    h = relative_entropy(pi, mu, nu)
    if h == INFINITE_ENTROPY:
        return INFINITE_ENTROPY
    return cost + epsilon * h


def dual_value(pp: PotentialPair, C: CostMatrix, mu: DiscreteMeasure, nu: DiscreteMeasure, epsilon: float) -> float:
    """Entropic dual objective at ``(f, g)``.

    The exponential term is summed as ``exp(M) * sum(w * exp(z - M))`` so a
    large exponent overflows only if the total itself is not representable.
    """
    if not epsilon > 0:
        raise InstanceError("dual_value needs epsilon > 0")
    _check_shape(C.shape, mu, nu, "cost")
    z = (pp.f[:, None] + pp.g[None, :] - C.values) / epsilon
    if not np.all(np.isfinite(z)):
        i, j = np.argwhere(~np.isfinite(z))[0]
        raise NonFiniteError("non-finite exponent in dual objective", (int(i), int(j)))
    zmax = float(z.max())
    inner = float(np.sum(np.outer(mu.weights, nu.weights) * np.exp(z - zmax)))
    with np.errstate(over="raise"):
        try:
            mass = math.exp(zmax) * inner
        except OverflowError:
            i, j = np.unravel_index(int(np.argmax(z)), z.shape)
            raise NonFiniteError("exponential term overflows", (int(i), int(j))) from None
    if not math.isfinite(mass):
        i, j = np.unravel_index(int(np.argmax(z)), z.shape)
        raise NonFiniteError("exponential term overflows", (int(i), int(j)))
    return float(mu.weights @ pp.f + nu.weights @ pp.g - epsilon * mass + epsilon)


def marginal_residuals(pi: Coupling, mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[float, float]:
    """L1 distances of the row and column sums of ``pi`` to the target marginals."""
    _check_shape(pi.shape, mu, nu, "coupling")
    r_row = float(np.sum(np.abs(pi.mass.sum(axis=1) - mu.weights)))
    r_col = float(np.sum(np.abs(pi.mass.sum(axis=0) - nu.weights)))
    return r_row, r_col

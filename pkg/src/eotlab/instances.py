"""Seeded instance generators.

All randomness goes through a Philox (counter-based, 64-bit key) generator
so that a seed fully determines an instance on every platform.
"""

from __future__ import annotations

import numpy as np

from .measures import CostKernel, CostMatrix, DiscreteMeasure, build_cost_matrix


def make_rng(seed: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _random_weights(rng, n):
    w = rng.uniform(0.5, 1.5, n)
    return w / w.sum()


def _measure(atoms, weights):
    # renormalization can leave the sum a few ulps from 1
    weights = np.asarray(weights, float)
    weights = weights / weights.sum()
    return DiscreteMeasure(atoms, weights)


def random_instance(seed: int, m: int, n: int, dim: int = 2):
    """Atoms uniform in the unit cube, weights in [0.5, 1.5] renormalized, squared-euclidean cost."""
    rng = make_rng(seed)
    mu = _measure(rng.uniform(size=(m, dim)), _random_weights(rng, m))
    nu = _measure(rng.uniform(size=(n, dim)), _random_weights(rng, n))
    return mu, nu, build_cost_matrix(CostKernel("squared-euclidean"), mu, nu)


def grid_instance(m: int, n: int, seed: int = 0, uniform: bool = False, offset: float = 0.0):
    """Equispaced 1-d grids on [0, 1] with squared-euclidean cost.

    Random weights (the default) make the monotone optimal coupling
    non-degenerate, so the Kantorovich potentials are unique.
    """
    rng = make_rng(seed)
    x = np.linspace(0.0, 1.0, m)
    y = np.linspace(0.0, 1.0, n) + offset
    if uniform:
        mu, nu = DiscreteMeasure.uniform(x), DiscreteMeasure.uniform(y)
    else:
        mu = _measure(x, _random_weights(rng, m))
        nu = _measure(y, _random_weights(rng, n))
    return mu, nu, build_cost_matrix(CostKernel("squared-euclidean"), mu, nu)


def assignment_instance(seed: int, n: int):
    """Uniform marginals on n points with i.i.d. uniform[0, 1] costs."""
    rng = make_rng(seed)
    cost = CostMatrix(rng.uniform(size=(n, n)))
    points = np.arange(n, dtype=float)
    return DiscreteMeasure.uniform(points), DiscreteMeasure.uniform(points), cost


def random_tensor_problem(seed: int, sizes, uniform: bool = False):
    from .multimarginal import MultiProblem

    rng = make_rng(seed)
    measures = []
    for n in sizes:
        points = np.arange(n, dtype=float)
        measures.append(DiscreteMeasure.uniform(points) if uniform else _measure(points, _random_weights(rng, n)))
    return MultiProblem(measures, rng.uniform(size=tuple(sizes)))

"""Exact (epsilon = 0) transport by the transportation simplex.

The basis is a spanning tree of the bipartite row/column graph with
``m + n - 1`` cells; dual potentials are read off the tree, so the
Kantorovich pair comes for free with the optimal coupling.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .measures import (
    Coupling,
    CostMatrix,
    DiscreteMeasure,
    InstanceError,
    PotentialPair,
    transport_cost,
)
from .simplex import SimplexError

FEAS_TOL = 1e-9
SUPPORT_TOL = 1e-12
UNIQUE_TOL = 1e-7
PERTURBATION = 1e-9


@dataclass(frozen=True)
class ExactSolution:
    coupling: Coupling
    value: float
    potentials: PotentialPair
    dual_unique_hint: bool
    pivots: int = 0


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    m, n = len(a), len(b)
    a, b = a.copy(), b.copy()
    flow = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        x = min(a[i], b[j])
        flow[i, j] = x
        basis.append((i, j))
        a[i] -= x
        b[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1 or (i < m - 1 and a[i] <= b[j]):
            i += 1
        else:
            j += 1
    return flow, basis


def _tree_duals(basis, cost, m, n):
    # nodes 0..m-1 are rows, m..m+n-1 columns; u_0 = 0 anchors the tree
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for other in adj[node]:
            if np.isnan(pot[other]):
                i, j = (node, other - m) if node < m else (other, node - m)
                pot[other] = cost[i, j] - pot[node]
                queue.append(other)
    if np.isnan(pot).any():
        raise SimplexError("basis is not a spanning tree", list(basis))
    return pot[:m], pot[m:]


def _tree_path(basis, m, n, start, goal):
    """Node path from row ``start`` to column node ``goal`` inside the basis tree."""
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for other in adj[node]:
            if other not in parent:
                parent[other] = node
                queue.append(other)
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def transportation_simplex(a, b, cost, max_pivots: int | None = None):
    """Optimal flow and tree duals ``(flow, u, v, basis, pivots)`` for the balanced problem."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    if max_pivots is None:
        max_pivots = 50 * (m + n) * max(m, n) + 1000
    flow, basis = _northwest_corner(a, b)
    in_basis = np.zeros((m, n), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    tol = 1e-12 * max(1.0, float(np.abs(cost).max()))
    degenerate_run = 0
    pivots = 0
    while True:
        u, v = _tree_duals(basis, cost, m, n)
        reduced = cost - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        negative = reduced < -tol
        if not negative.any():
            return flow, u, v, basis, pivots
        if pivots >= max_pivots:
            raise SimplexError(f"no optimum after {pivots} pivots", list(basis))
        if degenerate_run > m + n:
            # Bland: first improving cell in row-major order
            ei, ej = map(int, np.argwhere(negative)[0])
        else:
            # Dantzig; argmin returns the row-major first among ties
            ei, ej = np.unravel_index(int(np.argmin(reduced)), reduced.shape)
            ei, ej = int(ei), int(ej)

        path = _tree_path(basis, m, n, ei, m + ej)
        # cycle: entering cell (+), then tree cells alternating -, +, -, ...
        cells = []
        for k in range(len(path) - 1):
            p, q = path[k], path[k + 1]
            cells.append((p, q - m) if p < m else (q, p - m))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(flow[c] for c in minus)
        tied = [c for c in minus if flow[c] <= theta + SUPPORT_TOL * 1e-3]
        leave = min(tied)
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[ei, ej] += theta
        flow[leave] = 0.0
        flow[flow < 0] = 0.0
        basis.remove(leave)
        basis.append((ei, ej))
        in_basis[leave] = False
        in_basis[ei, ej] = True
        degenerate_run = degenerate_run + 1 if theta <= SUPPORT_TOL else 0
        pivots += 1


def _normalized(u, v, mu, nu) -> PotentialPair:
    a = (float(nu.weights @ v) - float(mu.weights @ u)) / 2.0
    return PotentialPair(u + a, v - a, epsilon=0.0, normalized=True)


def _support_connected(mass: np.ndarray) -> bool:
    m, n = mass.shape
    seen = np.zeros(m + n, dtype=bool)
    seen[0] = True
    stack = [0]
    support = mass > SUPPORT_TOL
    while stack:
        node = stack.pop()
        nbrs = np.flatnonzero(support[node]) + m if node < m else np.flatnonzero(support[:, node - m])
        for other in nbrs:
            if not seen[other]:
                seen[other] = True
                stack.append(int(other))
    return bool(seen.all())


def solve_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, C: CostMatrix, check_uniqueness: bool = True) -> ExactSolution:
    """Optimal coupling, value and normalized Kantorovich potentials.

    ``dual_unique_hint`` requires both that the optimal support connects
    every row and column (so complementary slackness pins the duals up to
    a constant) and that re-solving with 1e-9 cost noise reproduces the
    normalized potentials within 1e-7.
    """
    C.check_against(mu, nu)
    cost = C.values
    flow, u, v, _, pivots = transportation_simplex(mu.weights, nu.weights, cost)
    pp = _normalized(u, v, mu, nu)
    coupling = Coupling(flow, tol=FEAS_TOL)
    value = transport_cost(coupling, C)

    diag = check_optimality(coupling, pp, C, mu, nu)
    if diag["max_violation"] > FEAS_TOL or diag["slackness_defect"] > FEAS_TOL or abs(diag["gap"]) > FEAS_TOL:
        raise SimplexError(f"optimality certificate failed: {diag}")

    hint = False
    if check_uniqueness and _support_connected(flow):
        rng = np.random.Generator(np.random.Philox(0))
        noisy = cost + PERTURBATION * rng.uniform(size=cost.shape)
        _, u2, v2, _, _ = transportation_simplex(mu.weights, nu.weights, noisy)
        pp2 = _normalized(u2, v2, mu, nu)
        hint = bool(
            np.max(np.abs(pp2.f - pp.f)) <= UNIQUE_TOL and np.max(np.abs(pp2.g - pp.g)) <= UNIQUE_TOL
        )
    return ExactSolution(coupling, value, pp, hint, pivots)


def brute_force_assignment(mu: DiscreteMeasure, nu: DiscreteMeasure, C: CostMatrix) -> float:
    """Minimum over permutation couplings; only valid for equal-size uniform marginals."""
    n = mu.size
    if nu.size != n or n > 8:
        raise InstanceError("brute force needs m == n <= 8")
    if not (np.allclose(mu.weights, 1.0 / n, rtol=0, atol=1e-15) and np.allclose(nu.weights, 1.0 / n, rtol=0, atol=1e-15)):
        raise InstanceError("brute force needs uniform marginals")
    cost = C.values
    rows = np.arange(n)
    return min(float(cost[rows, list(p)].sum()) / n for p in itertools.permutations(range(n)))


def check_optimality(pi: Coupling, pp: PotentialPair, C: CostMatrix, mu: DiscreteMeasure, nu: DiscreteMeasure) -> dict:
    """Dual feasibility, complementary slackness and duality gap of a primal/dual pair."""
    slack = C.values - pp.f[:, None] - pp.g[None, :]
    support = pi.mass > SUPPORT_TOL
    return {
        "max_violation": float(np.max(-slack)),
        "slackness_defect": float(np.max(slack[support])) if support.any() else 0.0,
        "gap": transport_cost(pi, C) - float(mu.weights @ pp.f) - float(nu.weights @ pp.g),
    }


def c_transform(h, C: CostMatrix, direction: str = "col") -> np.ndarray:
    """``direction="col"``: ``g_j = min_i (C_ij - h_i)``; ``"row"``: ``f_i = min_j (C_ij - h_j)``."""
    h = np.asarray(h, dtype=float)
    if direction == "col":
        return np.min(C.values - h[:, None], axis=0)
    if direction == "row":
        return np.min(C.values - h[None, :], axis=1)
    raise ValueError(f"direction must be 'col' or 'row', got {direction!r}")

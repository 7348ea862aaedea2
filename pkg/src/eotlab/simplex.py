"""Dense revised simplex for small equality-form linear programs.

    minimize c @ x  subject to  A @ x = b,  x >= 0

Used for the multimarginal ground truth, where the constraint matrix is
the flattened tensor marginalization. Dantzig pricing with a switch to
Bland's rule while pivots stay degenerate, which rules out cycling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SimplexError(RuntimeError):
    def __init__(self, message: str, basis=None):
        super().__init__(message)
        self.basis = basis


@dataclass
class LPResult:
    x: np.ndarray
    duals: np.ndarray
    value: float
    basis: np.ndarray
    pivots: int


def _iterate(A, b, c, basis, allowed, tol, max_pivots):
    m, n = A.shape
    degenerate_run = 0
    pivots = 0
    while True:
        B = A[:, basis]
        x_B = np.linalg.solve(B, b)
        y = np.linalg.solve(B.T, c[basis])
        reduced = c - A.T @ y
        reduced[~allowed] = 0.0
        reduced[basis] = 0.0
        candidates = np.flatnonzero(reduced < -tol)
        if len(candidates) == 0:
            return basis, x_B, y, pivots
        if pivots >= max_pivots:
            raise SimplexError(f"no optimum after {pivots} pivots", basis.copy())
        if degenerate_run > m:
            enter = int(candidates[0])
        else:
            enter = int(candidates[np.argmin(reduced[candidates])])
        d = np.linalg.solve(B, A[:, enter])
        pos = np.flatnonzero(d > tol)
        if len(pos) == 0:
            raise SimplexError("problem is unbounded", basis.copy())
        ratios = np.maximum(x_B[pos], 0.0) / d[pos]
        theta = ratios.min()
        ties = pos[ratios <= theta + tol]
        # smallest variable index among tied leaving rows (Bland)
        leave_row = int(ties[np.argmin(basis[ties])])
        degenerate_run = degenerate_run + 1 if theta <= tol else 0
        basis = basis.copy()
        basis[leave_row] = enter
        pivots += 1


def solve_lp(c, A, b, tol: float = 1e-11, max_pivots: int = 50_000) -> LPResult:
    """Two-phase revised simplex. Linearly dependent rows are tolerated.

    ``duals`` has one entry per original row (zero for rows found redundant).
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.array(c, dtype=float)
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A = A * sign[:, None]
    b = b * sign

    # phase I on [A | I]
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = np.arange(n, n + m)
    allowed = np.ones(n + m, dtype=bool)
    basis, x_B, _, piv1 = _iterate(A1, b, c1, basis, allowed, tol, max_pivots)
    if float(c1[basis] @ x_B) > 1e-9 * max(1.0, float(np.abs(b).sum())):
        raise SimplexError("problem is infeasible", basis)

    # drive zero-level artificials out of the basis; rows where that fails are redundant
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] < n:
            continue
        Binv_row = np.linalg.solve(A1[:, basis].T, np.eye(m)[r])
        row = Binv_row @ A
        row[basis[basis < n]] = 0.0
        candidates = np.flatnonzero(np.abs(row) > 1e-9)
        if len(candidates):
            basis[r] = int(candidates[0])
        else:
            keep[r] = False

    rows = np.flatnonzero(keep)
    A2, b2 = A[rows], b[rows]
    basis2 = basis[rows]
    if np.any(basis2 >= n):
        raise SimplexError("artificial variable left in basis", basis2)
    basis2, x_B, y, piv2 = _iterate(A2, b2, c, basis2, np.ones(n, dtype=bool), tol, max_pivots)

    x = np.zeros(n)
    x[basis2] = np.maximum(x_B, 0.0)
    duals = np.zeros(m)
    duals[rows] = y
    duals *= sign
    return LPResult(x, duals, float(c @ x), basis2, piv1 + piv2)

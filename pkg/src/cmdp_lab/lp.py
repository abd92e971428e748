"""Dense two-phase simplex for small linear programs.

Solves ``min c.x  s.t.  A_eq x = b_eq, x >= 0`` with Bland's anti-cycling
rule.  Meant for occupancy-measure programs with at most a few hundred
variables; no attempt is made at sparsity or numerical refinement.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-11
FEAS_TOL = 1e-9


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    status: str  # "optimal", "infeasible" or "unbounded"
    iterations: int


def _pivot(tab, basis, row, col):
    tab[row] /= tab[row, col]
    for i in range(tab.shape[0]):
        if i != row and tab[i, col] != 0.0:
            tab[i] -= tab[i, col] * tab[row]
    basis[row] = col


def _run(tab, basis, allowed, max_iter):
    """Iterate simplex pivots on ``tab`` whose last row holds reduced costs."""
    m = tab.shape[0] - 1
    for it in range(max_iter):
        costs = tab[-1, :-1]
        entering = next((j for j in allowed if costs[j] < -PIVOT_TOL), None)
        if entering is None:
            return "optimal", it
        col = tab[:m, entering]
        best_row, best_ratio = None, np.inf
        for i in range(m):
            if col[i] > PIVOT_TOL:
                ratio = tab[i, -1] / col[i]
                if ratio < best_ratio - 1e-14 or (
                        abs(ratio - best_ratio) <= 1e-14 and basis[i] < basis[best_row]):
                    best_row, best_ratio = i, ratio
        if best_row is None:
            return "unbounded", it
        _pivot(tab, basis, best_row, entering)
    raise RuntimeError("simplex did not terminate; iteration cap reached")


def simplex(c, A_eq, b_eq, max_iter: int = 10_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    A = np.array(A_eq, dtype=float, copy=True)
    b = np.array(b_eq, dtype=float, copy=True)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # phase 1: artificial variables n..n+m-1
    tab = np.zeros((m + 1, n + m + 1))
    tab[:m, :n] = A
    tab[:m, n:n + m] = np.eye(m)
    tab[:m, -1] = b
    tab[-1, :n] = -A.sum(axis=0)
    tab[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    status, it1 = _run(tab, basis, range(n + m), max_iter)
    if -tab[-1, -1] > FEAS_TOL:
        return LPResult(np.full(n, np.nan), np.nan, "infeasible", it1)

    # drive zero-level artificials out of the basis; drop redundant rows
    keep = []
    for i in range(m):
        if basis[i] < n:
            keep.append(i)
            continue
        nz = np.flatnonzero(np.abs(tab[i, :n]) > PIVOT_TOL)
        if nz.size:
            _pivot(tab, basis, i, int(nz[0]))
            keep.append(i)
    rows = keep + [m]
    tab = np.hstack([tab[rows, :n], tab[rows, -1:]])
    basis = [basis[i] for i in keep]

    # phase 2
    tab[-1, :] = 0.0
    tab[-1, :n] = c
    for i, j in enumerate(basis):
        tab[-1] -= c[j] * tab[i]
    status, it2 = _run(tab, basis, range(n), max_iter)
    x = np.zeros(n)
    for i, j in enumerate(basis):
        x[j] = tab[i, -1]
    x[np.abs(x) < 1e-15] = 0.0
    if status == "unbounded":
        return LPResult(x, -np.inf, status, it1 + it2)
    return LPResult(x, float(c @ x), "optimal", it1 + it2)

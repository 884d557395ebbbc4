"""Dense-tableau two-phase simplex with Bland's anti-cycling rule.

Problems here have at most a few hundred variables, so a plain tableau is
fast enough and yields exact vertex solutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-12
COST_TOL = 1e-11


class LpStructureError(RuntimeError):
    """The LP is infeasible or unbounded."""


@dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    status: str  # "optimal"
    basis: np.ndarray
    reduced_costs: np.ndarray
    iterations: int


def _pivot(T: np.ndarray, row: int, col: int):
    T[row] /= T[row, col]
    col_vals = T[:, col].copy()
    col_vals[row] = 0.0
    T -= np.outer(col_vals, T[row])


def _bland(T: np.ndarray, basis: np.ndarray, allowed: np.ndarray, max_iter: int) -> int:
    """Minimise the cost row ``T[-1]`` in place; returns the iteration count.

    The last tableau row holds reduced costs (and minus the objective in the
    last column), the last column holds the right-hand side.
    """
    m = T.shape[0] - 1
    for it in range(max_iter):
        rc = T[-1, :-1]
        candidates = np.flatnonzero((rc < -COST_TOL) & allowed)
        if candidates.size == 0:
            return it
        col = candidates[0]  # lowest index enters
        column = T[:m, col]
        pos = column > PIVOT_TOL
        if not np.any(pos):
            raise LpStructureError("LP is unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / column[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        row = ties[np.argmin(basis[ties])]  # lowest basic index leaves
        _pivot(T, row, col)
        basis[row] = col
    raise LpStructureError("simplex iteration limit reached")


def simplex_standard(c: np.ndarray, A: np.ndarray, b: np.ndarray, max_iter: int = 50_000) -> SimplexResult:
    """Minimise ``c @ x`` subject to ``A @ x == b`` and ``x >= 0``."""
    A = np.array(A, dtype=float, ndmin=2)
    b = np.array(b, dtype=float)
    c = np.array(c, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # phase 1: artificial identity, minimise their sum
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = np.arange(n, n + m)
    allowed = np.ones(n + m, dtype=bool)
    iters = _bland(T, basis, allowed, max_iter)
    if -T[-1, -1] > 1e-9 * max(1.0, np.abs(b).max(initial=0.0)):
        raise LpStructureError(f"LP is infeasible (phase-1 residual {-T[-1, -1]:.3g})")

    # drive remaining artificials out of the basis, dropping redundant rows
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] >= n:
            nz = np.flatnonzero(np.abs(T[r, :n]) > 1e-9)
            if nz.size:
                _pivot(T, r, nz[0])
                basis[r] = nz[0]
            else:
                keep[r] = False
    rows = np.flatnonzero(keep)
    T2 = np.zeros((rows.size + 1, n + 1))
    T2[:-1, :n] = T[rows, :n]
    T2[:-1, -1] = T[rows, -1]
    basis = basis[rows]
    # phase 2 cost row: c - c_B B^-1 A
    T2[-1, :n] = c
    T2[-1, -1] = 0.0
    for r, j in enumerate(basis):
        T2[-1] -= c[j] * T2[r]
    iters += _bland(T2, basis, np.ones(n, dtype=bool), max_iter)

    x = np.zeros(n)
    x[basis] = T2[:-1, -1]
    x = np.clip(x, 0.0, None)
    return SimplexResult(
        x=x, objective=float(c @ x), status="optimal", basis=basis.copy(),
        reduced_costs=T2[-1, :n].copy(), iterations=iters,
    )


def solve_general(
    c: np.ndarray,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    A_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    free: np.ndarray | None = None,
    maximize: bool = True,
) -> tuple[float, np.ndarray, SimplexResult]:
    """Optimise ``c @ x`` with equalities, ``<=`` rows, and ``x >= 0`` except ``free``.

    Free variables are split into positive and negative parts and each
    inequality gets a slack column.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    free = np.zeros(n, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)

    free_idx = np.flatnonzero(free)
    n_split = n + free_idx.size
    m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]
    A = np.zeros((m_eq + m_ub, n_split + m_ub))
    A[:m_eq, :n] = A_eq
    A[:m_eq, n:n_split] = -A_eq[:, free_idx]
    A[m_eq:, :n] = A_ub
    A[m_eq:, n:n_split] = -A_ub[:, free_idx]
    A[m_eq:, n_split:] = np.eye(m_ub)
    b = np.concatenate([b_eq, b_ub])
    cs = np.zeros(n_split + m_ub)
    sign = -1.0 if maximize else 1.0
    cs[:n] = sign * c
    cs[n:n_split] = -sign * c[free_idx]

    res = simplex_standard(cs, A, b)
    x = res.x[:n].copy()
    x[free_idx] -= res.x[n:n_split]
    return float(c @ x), x, res

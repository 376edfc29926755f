"""Two-phase primal simplex on a dense numpy tableau.

Small, deterministic, and warm-startable: Bland's rule (lowest eligible
index enters, lowest basic index leaves among ratio ties) guarantees
termination and makes repeated solves bit-reproducible. A previous
optimal basis can be passed back in; if it is still primal-feasible for
the new right-hand side, phase 1 is skipped entirely.

Solves  min c.x  s.t.  a_eq x = b_eq,  a_ub x <= b_ub,  x >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContractViolation


class SimplexError(ContractViolation):
    pass


@dataclass
class LinearProgram:
    c: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        self.a_eq = np.atleast_2d(np.asarray(self.a_eq, dtype=np.float64))
        self.b_eq = np.asarray(self.b_eq, dtype=np.float64)
        self.a_ub = np.atleast_2d(np.asarray(self.a_ub, dtype=np.float64))
        self.b_ub = np.asarray(self.b_ub, dtype=np.float64)


@dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    basis: np.ndarray
    iterations: int
    status: str


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    column = tableau[:, col].copy()
    column[row] = 0.0
    tableau -= np.outer(column, tableau[row])
    basis[row] = col


def _run_phase(
    tableau: np.ndarray,
    basis: np.ndarray,
    allowed: np.ndarray,
    tol: float,
    max_iter: int,
) -> int:
    """Pivot the (last-row) objective to optimality; returns pivot count."""
    m = tableau.shape[0] - 1
    iters = 0
    obj = tableau[-1]
    while True:
        entering = -1
        for j in np.flatnonzero(allowed):
            if obj[j] < -tol:
                entering = int(j)
                break
        if entering < 0:
            return iters
        col = tableau[:m, entering]
        rhs = tableau[:m, -1]
        best_ratio = None
        leaving = -1
        for i in range(m):
            if col[i] > tol:
                ratio = rhs[i] / col[i]
                if (
                    best_ratio is None
                    or ratio < best_ratio - tol
                    or (abs(ratio - best_ratio) <= tol and basis[i] < basis[leaving])
                ):
                    best_ratio = ratio
                    leaving = i
        if leaving < 0:
            raise SimplexError("LP is unbounded")
        _pivot(tableau, basis, leaving, entering)
        iters += 1
        if iters > max_iter:
            raise SimplexError(f"simplex exceeded {max_iter} pivots")


def simplex_solve(
    lp: LinearProgram,
    basis: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 50000,
) -> SimplexResult:
    n = lp.c.size
    m_eq = lp.b_eq.size
    m_ub = lp.b_ub.size
    m = m_eq + m_ub
    n_slack = m_ub
    width = n + n_slack

    a = np.zeros((m, width))
    b = np.zeros(m)
    if m_eq:
        a[:m_eq, :n] = lp.a_eq
        b[:m_eq] = lp.b_eq
    if m_ub:
        a[m_eq:, :n] = lp.a_ub
        b[m_eq:] = lp.b_ub
        a[m_eq:, n : n + n_slack] = np.eye(n_slack)
    neg = b < 0
    a[neg] *= -1.0
    b[neg] = -b[neg]

    iterations = 0

    # warm start: previous basis, if still feasible for the new rhs
    if basis is not None and len(basis) == m and np.all(np.asarray(basis) < width):
        basis = np.asarray(basis, dtype=np.int64).copy()
        bmat = a[:, basis]
        try:
            binv_a = np.linalg.solve(bmat, np.hstack([a, b[:, None]]))
        except np.linalg.LinAlgError:
            binv_a = None
        if binv_a is not None and np.all(binv_a[:, -1] >= -tol):
            tableau = np.zeros((m + 1, width + 1))
            tableau[:m] = binv_a
            tableau[-1, :n] = lp.c
            for i, bv in enumerate(basis):
                coeff = tableau[-1, bv]
                if coeff != 0.0:
                    tableau[-1] -= coeff * tableau[i]
            allowed = np.ones(width, dtype=bool)
            iterations += _run_phase(tableau, basis, allowed, tol, max_iter)
            return _extract(tableau, basis, n, lp.c, iterations)

    # cold start: phase 1 with artificials on every row lacking a +1 slack
    need_art = np.ones(m, dtype=bool)
    init_basis = np.full(m, -1, dtype=np.int64)
    for i in range(m_eq, m):
        slack_col = n + (i - m_eq)
        if a[i, slack_col] > 0:  # not negated
            need_art[i] = False
            init_basis[i] = slack_col
    art_rows = np.flatnonzero(need_art)
    n_art = art_rows.size
    total = width + n_art
    tableau = np.zeros((m + 1, total + 1))
    tableau[:m, :width] = a
    tableau[:m, -1] = b
    for k, i in enumerate(art_rows):
        tableau[i, width + k] = 1.0
        init_basis[i] = width + k
    basis = init_basis

    if n_art:
        tableau[-1, width:total] = 1.0
        for i in art_rows:
            tableau[-1] -= tableau[i]
        allowed = np.ones(total, dtype=bool)
        iterations += _run_phase(tableau, basis, allowed, tol, max_iter)
        if tableau[-1, -1] < -1e-7:
            raise SimplexError("LP is infeasible")
        # drive surviving artificials out of the basis where possible
        for i in range(m):
            if basis[i] >= width:
                row = tableau[i, :width]
                cols = np.flatnonzero(np.abs(row) > tol)
                if cols.size:
                    _pivot(tableau, basis, i, int(cols[0]))
                    iterations += 1

    tableau[-1, :] = 0.0
    tableau[-1, :n] = lp.c
    for i, bv in enumerate(basis):
        coeff = tableau[-1, bv]
        if coeff != 0.0:
            tableau[-1] -= coeff * tableau[i]
    allowed = np.zeros(tableau.shape[1] - 1, dtype=bool)
    allowed[:width] = True
    iterations += _run_phase(tableau, basis, allowed, tol, max_iter)
    return _extract(tableau, basis, n, lp.c, iterations)


def _extract(
    tableau: np.ndarray, basis: np.ndarray, n: int, c: np.ndarray, iterations: int
) -> SimplexResult:
    width = tableau.shape[1] - 1
    x_full = np.zeros(width)
    for i, bv in enumerate(basis):
        if bv < width:
            x_full[bv] = tableau[i, -1]
    x = np.maximum(x_full[:n], 0.0)
    return SimplexResult(
        x=x,
        objective=float(c @ x),
        basis=basis.copy(),
        iterations=iterations,
        status="optimal",
    )

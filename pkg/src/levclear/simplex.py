"""Dense two-phase simplex with Bland's rule.

Built for the liability-allocation program: a few hundred variables, exact
vertex answers preferred over speed.  Bland's smallest-index rule guarantees
termination without anti-cycling perturbations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SimplexError(RuntimeError):
    """Infeasible, unbounded, or out of pivots."""


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int


def _pivot(tableau, basis, row, col):
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    # keep the pivot column numerically clean
    tableau[:, col] = 0.0
    tableau[row, col] = 1.0
    basis[row] = col


def _run(tableau, basis, cost_row, n_rows, max_iter, tol):
    """Minimize the cost row by Bland's rule; tableau rows 0..n_rows-1 are constraints."""
    for iteration in range(max_iter):
        entering = -1
        for j in range(tableau.shape[1] - 1):
            if cost_row[j] < -tol:
                entering = j
                break
        if entering < 0:
            return iteration
        leaving = -1
        best = np.inf
        for i in range(n_rows):
            coef = tableau[i, entering]
            if coef > tol:
                ratio = tableau[i, -1] / coef
                if ratio < best - tol or (abs(ratio - best) <= tol and
                                          (leaving < 0 or basis[i] < basis[leaving])):
                    best = ratio
                    leaving = i
        if leaving < 0:
            raise SimplexError("objective is unbounded below")
        _pivot(tableau, basis, leaving, entering)
        cost_row -= cost_row[entering] * tableau[leaving]
        cost_row[entering] = 0.0
    raise SimplexError("pivot budget exhausted")


def solve_lp(c, a_eq=None, b_eq=None, a_ub=None, b_ub=None,
             max_iter: int = 100_000, tol: float = 1e-9) -> LPResult:
    """min c'x  s.t.  a_eq x = b_eq,  a_ub x <= b_ub,  x >= 0."""
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    rows = []
    rhs = []
    n_ub = 0 if a_ub is None else np.atleast_2d(a_ub).shape[0]
    if a_ub is not None:
        a_ub = np.atleast_2d(np.asarray(a_ub, dtype=float))
        b_ub = np.atleast_1d(np.asarray(b_ub, dtype=float))
        slack = np.eye(n_ub)
        rows.append(np.hstack([a_ub, slack]))
        rhs.append(b_ub)
    if a_eq is not None:
        a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
        b_eq = np.atleast_1d(np.asarray(b_eq, dtype=float))
        rows.append(np.hstack([a_eq, np.zeros((a_eq.shape[0], n_ub))]))
        rhs.append(b_eq)
    if not rows:
        raise ValueError("no constraints given")
    a = np.vstack(rows)
    b = np.concatenate(rhs)
    neg = b < 0
    a[neg] *= -1.0
    b[neg] *= -1.0
    m_rows, n_cols = a.shape

    # phase 1: artificial basis
    tableau = np.hstack([a, np.eye(m_rows), b[:, None]])
    basis = list(range(n_cols, n_cols + m_rows))
    cost1 = np.zeros(tableau.shape[1] - 1)
    cost1[n_cols:] = 1.0
    reduced1 = cost1.copy()
    # price out the artificial basis
    reduced1[: tableau.shape[1] - 1] -= tableau[:, :-1].sum(axis=0)
    phase1_obj = -float(b.sum())
    full1 = np.concatenate([reduced1, [phase1_obj]])
    it1 = _run(tableau, basis, full1, m_rows, max_iter, tol)
    if -full1[-1] > 1e-7 * (1.0 + abs(b).max()):
        raise SimplexError("constraints are infeasible")
    # drive leftover artificials out of the basis where possible
    for i in range(m_rows):
        if basis[i] >= n_cols:
            for j in range(n_cols):
                if abs(tableau[i, j]) > tol:
                    _pivot(tableau, basis, i, j)
                    break

    # phase 2 on the structural columns
    tableau = np.hstack([tableau[:, :n_cols], tableau[:, -1:]])
    cost2 = np.zeros(n_cols)
    cost2[:n] = c
    reduced2 = cost2.copy()
    obj = 0.0
    for i, var in enumerate(basis):
        if var < n_cols and cost2[var] != 0.0:
            reduced2 -= cost2[var] * tableau[i, :-1]
            obj -= cost2[var] * tableau[i, -1]
    full2 = np.concatenate([reduced2, [obj]])
    it2 = _run(tableau, basis, full2, m_rows, max_iter, tol)

    x = np.zeros(n_cols)
    for i, var in enumerate(basis):
        if var < n_cols:
            x[var] = tableau[i, -1]
    x = np.maximum(x[:n], 0.0)
    return LPResult(x=x, objective=float(c @ x), iterations=it1 + it2)

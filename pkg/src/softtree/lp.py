"""Feasibility of ``{x : A x <= d}`` by phase-1 simplex with Bland's rule."""

from __future__ import annotations

import numpy as np

PIVOT_TOL = 1e-12
FEAS_TOL = 1e-9


def _phase1_min(T, basis, n_cols):
    """Run Bland-rule simplex on a phase-1 tableau; return the optimum."""
    m = T.shape[0] - 1
    obj = T[-1]
    while True:
        enter = -1
        for j in range(n_cols):
            if obj[j] < -PIVOT_TOL:
                enter = j
                break
        if enter < 0:
            return -obj[-1]
        col = T[:m, enter]
        best, leave = np.inf, -1
        for i in range(m):
            if col[i] > PIVOT_TOL:
                ratio = T[i, -1] / col[i]
                if ratio < best - 1e-15 or (abs(ratio - best) <= 1e-15 and basis[i] < basis[leave]):
                    best, leave = ratio, i
        if leave < 0:
            # cannot happen for a phase-1 objective bounded below by zero
            return -obj[-1]
        T[leave] /= T[leave, enter]
        for i in range(m + 1):
            if i != leave and T[i, enter] != 0.0:
                T[i] -= T[i, enter] * T[leave]
        basis[leave] = enter


def lp_feasible(A, d, tol=FEAS_TOL):
    """Return True iff some ``x`` satisfies ``A x <= d``.

    Rows are scaled to unit norm so ``tol`` is a distance.  An empty system
    is feasible; an unbounded feasible set is feasible.
    """
    A = np.asarray(A, dtype=float)
    d = np.asarray(d, dtype=float).ravel()
    if d.size == 0:
        return True
    A = A.reshape(d.size, -1)
    norms = np.linalg.norm(A, axis=1)
    zero = norms <= PIVOT_TOL
    if np.any(d[zero] < -tol):
        return False
    A, d, norms = A[~zero], d[~zero], norms[~zero]
    if d.size == 0:
        return True
    A = A / norms[:, None]
    d = d / norms
    m, n = A.shape

    # variables: x+ (n), x- (n), slacks (m), artificials (one per negative rhs)
    neg = np.flatnonzero(d < 0)
    n_art = neg.size
    n_cols = 2 * n + m + n_art
    T = np.zeros((m + 1, n_cols + 1))
    T[:m, :n] = A
    T[:m, n : 2 * n] = -A
    T[:m, 2 * n : 2 * n + m] = np.eye(m)
    T[:m, -1] = d
    basis = list(range(2 * n, 2 * n + m))
    for k, i in enumerate(neg):
        T[i, :-1] *= -1.0
        T[i, -1] *= -1.0
        T[i, 2 * n + m + k] = 1.0
        basis[i] = 2 * n + m + k
    if n_art == 0:
        return True
    T[-1, : 2 * n + m] = -T[neg, : 2 * n + m].sum(axis=0)
    T[-1, -1] = -T[neg, -1].sum()
    return _phase1_min(T, basis, n_cols) <= tol

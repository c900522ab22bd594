"""Revised phase-1 simplex kernel for Kronecker-structured constraint matrices.

Solves min sum(a) s.t. A x + a = b, x >= 0, a >= 0 for b >= 0, starting from
the all-artificial basis, where A = kron(F_1, ..., F_N). The basis inverse is
kept explicitly with rank-one updates and rebuilt from scratch every
``REFACTOR_EVERY`` pivots. Pricing computes y^T A one Kronecker factor at a
time, so a full pricing pass never touches the dense matrix.

Entering variable: Dantzig's most negative reduced cost, lowest index on
ties. After ``stall_limit`` consecutive degenerate pivots the rule switches
to Bland's (lowest index entering, lowest basic index leaving) until a pivot
makes strict progress, which rules out cycling. Artificial columns never
re-enter once they leave.

With ``ones_row`` set, the last row of A is all ones and is not part of the
Kronecker product. ``row_signs`` (+1/-1) multiplies the rows of A and b so
that the right-hand side handed to phase 1 is nonnegative; the returned dual
vector is for the unsigned system.
"""

import numpy as np
from numba import njit

OPTIMAL = 0
ITERATION_LIMIT = 1
NO_PIVOT = 2

REFACTOR_EVERY = 100


@njit(cache=True)
def _kron_price(y, factors, rows, cols):
    """Return y^T kron(F_1, ..., F_N) without forming the product."""
    t = y.copy()
    rest = t.size
    for f in range(len(factors)):
        r = rows[f]
        rest = rest // r
        # t viewed as (r, rest); contract r and rotate the new axis to the end
        mat = np.ascontiguousarray(t.reshape(r, rest).T)
        t = (mat @ factors[f]).ravel()
        rest = rest * cols[f]
    return t


@njit(cache=True)
def _rebuild(At, row_signs, basis, b, m, n):
    B = np.zeros((m, m))
    for i in range(m):
        col = basis[i]
        if col >= n:
            B[col - n, i] = 1.0
        else:
            for k in range(m):
                B[k, i] = At[col, k] * row_signs[k]
    Binv = np.ascontiguousarray(np.linalg.inv(B))
    xb = Binv @ b
    for i in range(m):
        if xb[i] < 0.0:
            xb[i] = 0.0
    return Binv, xb


@njit(cache=True)
def phase_one(At, b, row_signs, factors, rows, cols, ones_row, piv_tol, cost_tol, max_iter, stall_limit):
    """``At`` is the unsigned A transposed; ``b`` is already sign-adjusted."""
    n, m = At.shape
    Binv = np.eye(m)
    xb = b.copy()
    col = np.empty(m)
    basis = np.empty(m, dtype=np.int64)
    cb = np.ones(m)
    for i in range(m):
        basis[i] = n + i

    status = OPTIMAL
    iterations = 0
    since_refactor = 0
    bland = False
    stalled = 0
    alpha = np.empty(m)
    y = np.empty(m)
    while True:
        y[:] = 0.0
        for i in range(m):
            if cb[i] != 0.0:
                for k in range(m):
                    y[k] += Binv[i, k]
        ys = y * row_signs
        if ones_row:
            d = _kron_price(ys[: m - 1], factors, rows, cols) + ys[m - 1]
        else:
            d = _kron_price(ys, factors, rows, cols)
        q = -1
        if bland:
            for j in range(n):
                if d[j] > cost_tol:
                    q = j
                    break
        else:
            best = cost_tol
            for j in range(n):
                if d[j] > best:
                    best = d[j]
                    q = j
        # reduced cost of column j is -d[j]
        if q < 0:
            break
        if iterations >= max_iter:
            status = ITERATION_LIMIT
            break

        for k in range(m):
            col[k] = At[q, k] * row_signs[k]
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += Binv[i, k] * col[k]
            alpha[i] = s

        p = -1
        best_ratio = np.inf
        best_piv = 0.0
        for i in range(m):
            a = alpha[i]
            if a > piv_tol:
                ratio = xb[i] / a
                if ratio < best_ratio - 1e-13:
                    p, best_ratio, best_piv = i, ratio, a
                elif ratio <= best_ratio + 1e-13:
                    if bland:
                        if basis[i] < basis[p]:
                            p, best_ratio, best_piv = i, ratio, a
                    elif a > best_piv:
                        p, best_ratio, best_piv = i, ratio, a
        if p < 0:
            status = NO_PIVOT
            break

        if best_ratio <= 1e-13:
            stalled += 1
            if stalled > stall_limit:
                bland = True
        else:
            stalled = 0
            bland = False

        theta = xb[p] / alpha[p]
        inv = 1.0 / alpha[p]
        for k in range(m):
            Binv[p, k] *= inv
        for i in range(m):
            if i == p:
                continue
            f = alpha[i]
            if f != 0.0:
                for k in range(m):
                    Binv[i, k] -= f * Binv[p, k]
                xb[i] -= f * theta
                if xb[i] < 0.0:
                    xb[i] = 0.0
        xb[p] = theta
        basis[p] = q
        cb[p] = 0.0
        iterations += 1
        since_refactor += 1
        if since_refactor >= REFACTOR_EVERY:
            Binv, xb = _rebuild(At, row_signs, basis, b, m, n)
            since_refactor = 0

    if since_refactor > 0:
        Binv, xb = _rebuild(At, row_signs, basis, b, m, n)
    infeasibility = 0.0
    x = np.zeros(n)
    for i in range(m):
        if basis[i] >= n:
            infeasibility += xb[i]
        else:
            x[basis[i]] = xb[i]
    y = np.zeros(m)
    for i in range(m):
        if cb[i] != 0.0:
            y += Binv[i]
    return status, infeasibility, x, y * row_signs, iterations

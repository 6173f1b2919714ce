"""Compiled inner loops: zero-fill incomplete Cholesky and triangular solves.

All kernels operate on a sorted lower-triangular CSR with the diagonal entry
last in every row.  They are sequential by design (the factorization and the
substitutions carry loop dependencies); callers keep them single-threaded.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def ic0_lower(n, indptr, indices, data):
    """In-place IC(0) on the lower triangle; returns -1 or the breakdown row.

    Row i, entry (i, j): subtract the sparse dot product of rows i and j over
    columns < j, then divide by L_jj (or take the square root on the
    diagonal).  Only positions already present in the pattern are updated.
    """
    for i in range(n):
        row_start = indptr[i]
        row_end = indptr[i + 1]
        for q in range(row_start, row_end):
            j = indices[q]
            jrow_start = indptr[j]
            jrow_end = indptr[j + 1]
            acc = data[q]
            a = row_start
            b = jrow_start
            while a < q and b < jrow_end - 1:
                ca = indices[a]
                cb = indices[b]
                if ca == cb:
                    acc -= data[a] * data[b]
                    a += 1
                    b += 1
                elif ca < cb:
                    a += 1
                else:
                    b += 1
            if j == i:
                if acc <= 0.0:
                    return i
                data[q] = np.sqrt(acc)
            else:
                data[q] = acc / data[jrow_end - 1]
    return -1


@njit(cache=True)
def solve_lower(n, indptr, indices, data, rhs):
    """Solve L x = rhs with L in lower CSR (diagonal last per row)."""
    x = rhs.copy()
    for i in range(n):
        acc = x[i]
        for q in range(indptr[i], indptr[i + 1] - 1):
            acc -= data[q] * x[indices[q]]
        x[i] = acc / data[indptr[i + 1] - 1]
    return x


@njit(cache=True)
def solve_lower_transpose(n, indptr, indices, data, rhs):
    """Solve L^T x = rhs with L in lower CSR (diagonal last per row)."""
    x = rhs.copy()
    for i in range(n - 1, -1, -1):
        x[i] /= data[indptr[i + 1] - 1]
        xi = x[i]
        for q in range(indptr[i], indptr[i + 1] - 1):
            x[indices[q]] -= data[q] * xi
    return x

"""Reduced-system machinery: Schur assembly, IC(0) preconditioning, PCG.

One inexact step solves ``D Ainv D^T dlam = glam - D Ainv gw`` for the
multiplier update and back-substitutes ``dw = -Ainv (D^T dlam + gw)``.  The
Schur matrix is assembled explicitly (the incomplete factorization needs the
sparsity and values), stored lower-triangular, and preconditioned with
zero-fill incomplete Cholesky; breakdown restarts with escalating diagonal
shifts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from ._kernels import ic0_lower, solve_lower, solve_lower_transpose
from .errors import BreakdownDetected, FactorizationFailed, NotPositiveDefinite

log = logging.getLogger(__name__)

IC_SHIFTS = (0.0, 1e-3, 1e-2, 1e-1, 1.0)


class SparseSym:
    """Symmetric sparse matrix stored as its lower triangle (CSR)."""

    def __init__(self, lower: sp.csr_matrix):
        lower = lower.tocsr()
        lower.sum_duplicates()
        lower.sort_indices()
        if lower.shape[0] != lower.shape[1]:
            raise ValueError("matrix must be square")
        if (sp.triu(lower, k=1)).nnz:
            raise ValueError("lower-triangle storage must not contain upper entries")
        self.lower = lower
        self.dim = lower.shape[0]
        diag = lower.diagonal()
        if diag.size != self.dim or np.any(diag <= 0):
            raise NotPositiveDefinite("assembled matrix has a non-positive diagonal")
        # with sorted indices the diagonal is the last entry of each lower row
        self._diag_pos = lower.indptr[1:] - 1

    @classmethod
    def from_csr(cls, mat: sp.spmatrix) -> "SparseSym":
        return cls(sp.tril(mat, format="csr"))

    @cached_property
    def full(self) -> sp.csr_matrix:
        strict = sp.tril(self.lower, k=-1)
        return (self.lower + strict.T).tocsr()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.full @ x

    def diagonal(self) -> np.ndarray:
        return self.lower.diagonal()

    def toarray(self) -> np.ndarray:
        return self.full.toarray()


def assemble_schur(d_ops: Sequence[sp.spmatrix], ainv: sp.spmatrix) -> SparseSym:
    """Explicit D Ainv D^T on the multiplier coordinates."""
    d = d_ops[0] if len(d_ops) == 1 else sp.hstack(d_ops, format="csr")
    d = d.tocsr()
    product = (d @ ainv) @ d.T
    return SparseSym.from_csr(product)


@dataclass
class IcFactor:
    """Zero-fill incomplete Cholesky factor with its applied diagonal shift."""

    lower: sp.csr_matrix
    shift: float

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        n = self.lower.shape[0]
        y = solve_lower(n, self.lower.indptr, self.lower.indices, self.lower.data, rhs)
        return solve_lower_transpose(n, self.lower.indptr, self.lower.indices,
                                     self.lower.data, y)


def ic_factorize(s: SparseSym, shifts: Sequence[float] = IC_SHIFTS) -> IcFactor:
    """IC(0) of the lower triangle; on breakdown retry with the diagonal
    scaled up by each shift in turn and return the first success."""
    lower = s.lower
    diag_pos = s._diag_pos
    for alpha in shifts:
        data = lower.data.copy()
        if alpha:
            data[diag_pos] *= 1.0 + alpha
        status = ic0_lower(s.dim, lower.indptr, lower.indices, data)
        if status < 0:
            if alpha:
                log.warning("IC(0) needed diagonal shift %.0e", alpha)
            factor = sp.csr_matrix((data, lower.indices.copy(), lower.indptr.copy()),
                                   shape=lower.shape)
            return IcFactor(factor, float(alpha))
    raise FactorizationFailed(f"IC(0) broke down at every shift in {tuple(shifts)}")


@dataclass
class PcgResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def pcg(s: SparseSym, precond: IcFactor | None, rhs: np.ndarray,
        tol_rel: float = 1e-3, max_iter: int = 500,
        callback: Callable[[int, np.ndarray], None] | None = None) -> PcgResult:
    """Preconditioned conjugate gradients on the (semi)definite Schur system.

    Convergence is declared at ``||S x - rhs|| <= tol_rel * ||rhs||``; hitting
    ``max_iter`` is flagged, not fatal.  Non-positive preconditioned residual
    products signal indefiniteness and raise; curvature products within the
    rounding floor of zero mean the Krylov space of the semidefinite system
    is exhausted, and the current (flagged) iterate is returned.
    """
    norm_rhs = float(np.linalg.norm(rhs))
    if norm_rhs == 0.0:
        return PcgResult(np.zeros_like(rhs), 0, 0.0, True)
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = precond.solve(r) if precond is not None else r.copy()
    rz = float(r @ z)
    if rz <= 0.0:
        raise BreakdownDetected("preconditioned residual product is not positive")
    p = z.copy()
    iterations = 0
    rel = 1.0
    diag_scale = float(s.diagonal().max())
    while iterations < max_iter:
        q = s.matvec(p)
        pq = float(p @ q)
        floor = 64.0 * np.finfo(float).eps * diag_scale * float(p @ p)
        if pq < -floor:
            raise BreakdownDetected("negative curvature direction in PCG")
        if pq <= floor:
            # Krylov space exhausted at the rounding level of the
            # (semi)definite system; stop with the current iterate
            log.debug("PCG stagnated at relative residual %.3e", rel)
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        iterations += 1
        rel = float(np.linalg.norm(r)) / norm_rhs
        if callback is not None:
            callback(iterations, x)
        if rel <= tol_rel:
            break
        z = precond.solve(r) if precond is not None else r.copy()
        rz_next = float(r @ z)
        if rz_next <= 0.0:
            raise BreakdownDetected("preconditioned residual product is not positive")
        p = z + (rz_next / rz) * p
        rz = rz_next
    true_rel = float(np.linalg.norm(s.matvec(x) - rhs)) / norm_rhs
    return PcgResult(x, iterations, true_rel, true_rel <= tol_rel)


def back_substitute(ainv: sp.spmatrix, d_ops: Sequence[sp.spmatrix],
                    dlam: np.ndarray, gw: np.ndarray) -> np.ndarray:
    """Primal step ``dw = -Ainv (D^T dlam + gw)`` from the multiplier step."""
    d = d_ops[0] if len(d_ops) == 1 else sp.hstack(d_ops, format="csr")
    return -(ainv @ (d.T @ dlam + gw))

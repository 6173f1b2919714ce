"""Matrix-valued transport: operator basis, discrete operators, cost, KKT.

The continuity constraint couples a symmetrized spatial difference of the
momentum blocks, a time difference of the density blocks, and the
commutator-divergence of the flux block-columns; the kinetic cost averages
squared blocks against averaged inverse densities (square/invert first,
average second).  Everything here is pure and broadcasts over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import blocks as bk
from .errors import InvalidProblem, ShapeMismatch
from .grid import (
    Grid,
    Layout,
    block_diag_coo,
    cell_avg_to_faces,
    cell_diff_to_faces,
    diff_csr,
    face_avg_to_cells,
    face_diff_to_cells,
    grid_kron,
)

KERNEL_TOL = 1e-10
EIG_FLOOR = 1e-10  # reject marginal blocks with lambda_min below EIG_FLOOR*tr/n
MASS_TOL = 1e-12


@dataclass(frozen=True)
class OperatorBasis:
    """Symmetric matrices L_k generating the commutator gradient."""

    n: int
    L: np.ndarray  # (N, n, n)

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float)
        if L.ndim != 3 or L.shape[1:] != (self.n, self.n):
            raise ShapeMismatch(f"basis must be (N, {self.n}, {self.n}), got {L.shape}")
        if not np.array_equal(L, np.swapaxes(L, -1, -2)):
            raise InvalidProblem("basis elements must be symmetric")
        object.__setattr__(self, "L", L)

    @classmethod
    def default(cls, n: int) -> "OperatorBasis":
        """The two-element basis: ones on the first row/column, and
        diag(1, ..., n-1, 0)."""
        l1 = np.zeros((n, n))
        l1[0, :] = 1.0
        l1[:, 0] = 1.0
        l2 = np.diag(np.r_[np.arange(1.0, n), 0.0])
        return cls(n, np.stack([l1, l2]))

    @property
    def N(self) -> int:
        return self.L.shape[0]


def grad_L(basis: OperatorBasis, X: np.ndarray) -> np.ndarray:
    """Stacked commutators (L_k X - X L_k)_k; skew for symmetric X."""
    if X.shape[-2:] != (basis.n, basis.n):
        raise ShapeMismatch(f"expected trailing block ({basis.n},{basis.n}), got {X.shape}")
    L = basis.L
    return np.einsum("kab,...bc->...kac", L, X) - np.einsum("...ab,kbc->...kac", X, L)


def div_L(basis: OperatorBasis, Y: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`grad_L`: sum_k (L_k Y_k - Y_k L_k); symmetric for skew Y."""
    if Y.shape[-3:] != (basis.N, basis.n, basis.n):
        raise ShapeMismatch(
            f"expected trailing ({basis.N},{basis.n},{basis.n}), got {Y.shape}"
        )
    L = basis.L
    return np.einsum("kab,...kbc->...ac", L, Y) - np.einsum("...kab,kbc->...ac", Y, L)


def verify_kernel(basis: OperatorBasis, tol: float = KERNEL_TOL) -> int:
    """Nullity of the gradient restricted to symmetric matrices.

    Builds the dense matrix of X -> grad_L(X) over the orthonormal symmetric
    basis and counts vanishing singular values; the standing assumption is a
    nullity of exactly 1 (multiples of the identity only).
    """
    B = bk.sym_basis(basis.n)
    cols = grad_L(basis, B).reshape(B.shape[0], -1)
    sv = np.linalg.svd(cols, compute_uv=False)
    cutoff = tol * max(float(sv[0]) if sv.size else 0.0, 1.0)
    return int(np.sum(sv <= cutoff))


def _blockwise_gram(p: np.ndarray) -> np.ndarray:
    """P^T P per block."""
    return np.einsum("...ab,...ac->...bc", p, p)


def _column_gram(u: np.ndarray) -> np.ndarray:
    """sum_k u_k^T u_k over the block-column axis."""
    return np.einsum("...kab,...kac->...bc", u, u)


@dataclass
class HessianBlocks:
    """Per-cell maps of the approximate Hessian (objective part only).

    On momentum blocks the map is X -> 2 X m_face; on flux blocks
    X -> 2 gamma X m_cell; on density blocks it is the dense s x s
    representation ``g_rep`` (orthonormal symmetric coordinates) plus
    ``shift`` times the identity.
    """

    m_faces: list[np.ndarray]
    m_cell: np.ndarray
    g_rep: np.ndarray
    shift: float


class MatrixHessianInverse:
    """Inverse of the block-diagonal Hessian approximation."""

    def __init__(self, problem: "MatrixProblem", p_inv, u_inv, g_inv):
        self.problem = problem
        self.p_inv = p_inv    # per direction: X -> X p_inv[d]
        self.u_inv = u_inv    # per cell: u_k -> u_k u_inv
        self.g_inv = g_inv    # per time face: s x s

    def apply_fields(self, ps, rho_packed, u):
        out_ps = tuple(p @ self.p_inv[d] for d, p in enumerate(ps))
        coords = bk.packed_to_coords(rho_packed)
        out_rho = bk.coords_to_packed(np.einsum("...cd,...d->...c", self.g_inv, coords))
        out_u = u @ self.u_inv[..., None, :, :]
        return out_ps, out_rho, out_u

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        n, N = self.problem.n, self.problem.N
        parts = [(pi.reshape(-1, n, n), n) for pi in self.p_inv]
        parts.append((self.g_inv.reshape(-1, self.problem.s, self.problem.s), 1))
        parts.append((self.u_inv.reshape(-1, n, n), N * n))
        return block_diag_coo(parts)


class MatrixProblem:
    """Discretized matrix-valued transport instance on a staggered grid."""

    kind = "matrix"

    def __init__(self, basis: OperatorBasis, grid: Grid, gamma: float,
                 rho0: np.ndarray, rho1: np.ndarray, *, validate: bool = True):
        self.basis = basis
        self.grid = grid
        self.gamma = float(gamma)
        self.rho0 = np.asarray(rho0, dtype=float)
        self.rho1 = np.asarray(rho1, dtype=float)
        if validate:
            self._validate()
        self._setup()

    # -- construction -------------------------------------------------------

    def _validate(self):
        n, s = self.basis.n, bk.sym_len(self.basis.n)
        want = (*self.grid.space, s)
        if self.rho0.shape != want or self.rho1.shape != want:
            raise ShapeMismatch(f"marginals must have shape {want}")
        if self.gamma <= 0:
            raise InvalidProblem("gamma must be positive")
        if verify_kernel(self.basis) != 1:
            raise InvalidProblem("gradient kernel is not one-dimensional for this basis")
        for name, rho in (("rho0", self.rho0), ("rho1", self.rho1)):
            full = bk.unpack(rho)
            eig = np.linalg.eigvalsh(full)
            floor = EIG_FLOOR * np.trace(full, axis1=-2, axis2=-1) / n
            if np.any(eig[..., 0] < floor):
                raise InvalidProblem(f"{name} has a degenerate (non-SPD) block")
            mass = float(np.sum(np.trace(full, axis1=-2, axis2=-1))) * self.grid.h_vol
            if abs(mass - 1.0) > MASS_TOL:
                raise InvalidProblem(f"{name} trace mass is {mass!r}, expected 1")

    def _setup(self):
        grid, n = self.grid, self.basis.n
        s = bk.sym_len(n)
        self._rho0_inv = bk.spd_inverse(bk.unpack(self.rho0))
        self._rho1_inv = bk.spd_inverse(bk.unpack(self.rho1))
        a = np.zeros((*grid.cell_lead(), n, n))
        a[0] += 0.5 * self._rho0_inv
        a[grid.nt - 1] += 0.5 * self._rho1_inv
        self._a_full = a
        b = np.zeros((*grid.cell_lead(), s))
        b[0] += self.rho0 / grid.ht
        b[grid.nt - 1] -= self.rho1 / grid.ht
        self.b = b

    def with_gamma(self, gamma: float) -> "MatrixProblem":
        return MatrixProblem(self.basis, self.grid, gamma, self.rho0, self.rho1,
                             validate=False)

    # -- shapes and vector layout ------------------------------------------

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def N(self) -> int:
        return self.basis.N

    @property
    def s(self) -> int:
        return bk.sym_len(self.basis.n)

    @property
    def a(self) -> np.ndarray:
        """Boundary-inverse field at cell centers (full blocks)."""
        return self._a_full

    @cached_property
    def layout(self) -> Layout:
        n, N = self.n, self.N
        entries = [(f"p{d}", (*self.grid.p_lead(d), n, n)) for d in range(self.grid.dim)]
        entries.append(("rho", (*self.grid.rho_lead(), self.s)))
        entries.append(("u", (*self.grid.cell_lead(), N, n, n)))
        return Layout(entries)

    @property
    def lam_dim(self) -> int:
        return self.grid.n_cells * self.s

    def w_to_vec(self, ps, rho, u) -> np.ndarray:
        fields = {f"p{d}": p for d, p in enumerate(ps)}
        fields["rho"] = bk.packed_to_coords(rho)
        fields["u"] = u
        return self.layout.pack(fields)

    def vec_to_w(self, vec: np.ndarray):
        f = self.layout.unpack(vec)
        ps = tuple(f[f"p{d}"] for d in range(self.grid.dim))
        return ps, bk.coords_to_packed(f["rho"]), f["u"]

    def lam_to_vec(self, lam: np.ndarray) -> np.ndarray:
        return bk.packed_to_coords(lam).ravel()

    def vec_to_lam(self, vec: np.ndarray) -> np.ndarray:
        return bk.coords_to_packed(vec.reshape(*self.grid.cell_lead(), self.s))

    @cached_property
    def b_vec(self) -> np.ndarray:
        return self.lam_to_vec(self.b)

    @cached_property
    def b_norm(self) -> float:
        return float(np.linalg.norm(self.b_vec))

    @cached_property
    def schur_null_vec(self) -> np.ndarray:
        """Unit vector spanning ker(D^*): the identity-blocks multiplier field.

        Discrete mass conservation makes the constraint rows sum (tracewise)
        to zero, so the reduced system is consistent-singular along this
        direction; the driver projects it out of the reduced right-hand side.
        """
        field = np.broadcast_to(bk.pack(np.eye(self.n)),
                                (*self.grid.cell_lead(), self.s)).copy()
        vec = self.lam_to_vec(field)
        return vec / np.linalg.norm(vec)

    # -- constraint operators ------------------------------------------------

    def apply_constraint(self, ps, rho, u) -> np.ndarray:
        """D1 p + D2 rho + D3 u at cell centers (packed), without b."""
        grid = self.grid
        acc = np.zeros((*grid.cell_lead(), self.n, self.n))
        for d, p in enumerate(ps):
            acc += face_diff_to_cells(bk.sym_part(p), 1 + d, grid.hs[d], grid.space[d])
        acc += face_diff_to_cells(bk.unpack(rho), 0, grid.ht, grid.nt)
        acc -= div_L(self.basis, bk.skew_part(u))
        return bk.pack(acc)

    def constraint_residual(self, ps, rho, u) -> np.ndarray:
        return self.apply_constraint(ps, rho, u) - self.b

    @cached_property
    def _d3_block(self) -> np.ndarray:
        """s x (N n^2) coordinate matrix of u -> -nabla_L^*((u - u^T)/2)."""
        n, N = self.n, self.N
        units = np.eye(N * n * n).reshape(-1, N, n, n)
        out = -div_L(self.basis, 0.5 * (units - np.swapaxes(units, -1, -2)))
        return bk.pack_coords(out).T.copy()

    @cached_property
    def constraint_ops(self) -> list[sp.csr_matrix]:
        """[D1x(, D1y, D1z), D2, D3] as sparse maps on unknown coordinates."""
        grid = self.grid
        q = sp.csr_matrix(bk.sym_projection_matrix(self.n))
        ops = [
            grid_kron(grid, {1 + d: diff_csr(grid.space[d], grid.hs[d])}, q)
            for d in range(grid.dim)
        ]
        ops.append(grid_kron(grid, {0: diff_csr(grid.nt, grid.ht)},
                             sp.identity(self.s, format="csr")))
        ops.append(grid_kron(grid, {}, sp.csr_matrix(self._d3_block)))
        return ops

    @cached_property
    def constraint_matrix(self) -> sp.csr_matrix:
        return sp.hstack(self.constraint_ops, format="csr")

    # -- cost and derivatives -------------------------------------------------

    def _cell_weight(self, rho: np.ndarray, rinv: np.ndarray | None = None) -> np.ndarray:
        if rinv is None:
            rinv = bk.spd_inverse(bk.unpack(rho))
        return face_avg_to_cells(rinv, 0, self.grid.nt) + self._a_full

    def _p_gram_cells(self, ps) -> np.ndarray:
        grid = self.grid
        acc = np.zeros((*grid.cell_lead(), self.n, self.n))
        for d, p in enumerate(ps):
            acc += face_avg_to_cells(_blockwise_gram(p), 1 + d, grid.space[d])
        return acc

    def cost(self, ps, rho, u) -> float:
        """Discretized action; nonnegative, includes the cell-volume scaling."""
        m = self._cell_weight(rho)
        val = bk.trace_inner(self._p_gram_cells(ps), m)
        val += self.gamma * bk.trace_inner(_column_gram(u), m)
        return val * self.grid.h_vol * self.grid.ht

    def kkt_residual(self, state):
        """Gradient fields of the Lagrangian: (per-direction p, rho, u, lambda)."""
        grid = self.grid
        rinv = bk.spd_inverse(bk.unpack(state.rho))
        m = self._cell_weight(state.rho, rinv)
        lamf = bk.unpack(state.lam)
        gps = tuple(
            cell_diff_to_faces(lamf, 1 + d, grid.hs[d])
            + 2.0 * p @ cell_avg_to_faces(m, 1 + d)
            for d, p in enumerate(state.ps)
        )
        e_face = cell_avg_to_faces(
            self._p_gram_cells(state.ps) + self.gamma * _column_gram(state.u), 0
        )
        grho = bk.pack(cell_diff_to_faces(lamf, 0, grid.ht) - rinv @ e_face @ rinv)
        gu = -grad_L(self.basis, lamf) + 2.0 * self.gamma * state.u @ m[..., None, :, :]
        glam = self.constraint_residual(state.ps, state.rho, state.u)
        return gps, grho, gu, glam

    def residual_vecs(self, state):
        gps, grho, gu, glam = self.kkt_residual(state)
        gw = self.layout.pack(
            {**{f"p{d}": g for d, g in enumerate(gps)},
             "rho": bk.packed_to_coords(grho), "u": gu}
        )
        return gw, self.lam_to_vec(glam)

    def hessian_blocks(self, state, shift: float | None = None, *,
                       shift_floor: float = 1e-8, shift_scale: float = 1e-8) -> HessianBlocks:
        """Block-diagonal Hessian approximation; ``shift=None`` applies the
        default regularization policy to the density block."""
        grid = self.grid
        rinv = bk.spd_inverse(bk.unpack(state.rho))
        m = self._cell_weight(state.rho, rinv)
        m_faces = [cell_avg_to_faces(m, 1 + d) for d in range(grid.dim)]
        e_face = cell_avg_to_faces(
            self._p_gram_cells(state.ps) + self.gamma * _column_gram(state.u), 0
        )
        t = rinv @ e_face @ rinv
        B = bk.sym_basis(self.n)
        half = np.einsum("cab,...bg,dgh,...ha->...cd", B, t, B, rinv, optimize=True)
        g_rep = half + np.swapaxes(half, -1, -2)
        if shift is None:
            diag = np.einsum("...cc->...c", g_rep)
            mean_diag = float(diag.mean()) if diag.size else 0.0
            shift = max(shift_floor, shift_scale * mean_diag)
        return HessianBlocks(m_faces, m, g_rep, float(shift))

    def hessian_inverse(self, hb: HessianBlocks) -> MatrixHessianInverse:
        p_inv = [0.5 * bk.spd_inverse(mf) for mf in hb.m_faces]
        u_inv = bk.spd_inverse(hb.m_cell) / (2.0 * self.gamma)
        g_shifted = hb.g_rep + hb.shift * np.eye(self.s)
        g_inv = bk.spd_inverse(g_shifted)
        return MatrixHessianInverse(self, p_inv, u_inv, g_inv)

    # -- state helpers ---------------------------------------------------------

    def zero_fields(self):
        grid, n, N = self.grid, self.n, self.N
        ps = tuple(np.zeros((*grid.p_lead(d), n, n)) for d in range(grid.dim))
        u = np.zeros((*grid.cell_lead(), N, n, n))
        lam = np.zeros((*grid.cell_lead(), self.s))
        return ps, u, lam

    def interpolated_rho(self) -> np.ndarray:
        grid = self.grid
        w = (np.arange(1, grid.nt) / grid.nt).reshape(-1, *([1] * (grid.dim + 1)))
        return (1.0 - w) * self.rho0 + w * self.rho1

    def max_step(self, rho: np.ndarray, drho: np.ndarray, bisections: int = 12) -> float:
        """Largest step in (0, 1] keeping all density blocks SPD (Cholesky probes)."""
        full, den = bk.unpack(rho), bk.unpack(drho)
        if bk.cholesky_ok(full + den):
            return 1.0
        lo, hi = 0.0, 1.0
        for _ in range(bisections):
            mid = 0.5 * (lo + hi)
            if bk.cholesky_ok(full + mid * den):
                lo = mid
            else:
                hi = mid
        return lo

    def positivity_ok(self, rho: np.ndarray) -> bool:
        return bk.cholesky_ok(bk.unpack(rho))

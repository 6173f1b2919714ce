"""Staggered space-time grids and the difference/averaging stencils on them.

Space-time fields are stored with the time axis first, then the spatial axes
in x, y, z order, then any per-cell block axes.  Flattening a field in C
order therefore yields the canonical unknown ordering: time-major, space
lexicographic, block coordinate last.

Staggering conventions (unit cube/interval, uniform cells):

* momentum ``p_d`` lives on interior faces normal to spatial axis ``d``:
  leading shape ``(nt, ..., n_d - 1, ...)``,
* density ``rho`` lives on interior time faces: ``(nt - 1, *space)``,
* flux ``u`` and the multiplier live at cell centers: ``(nt, *space)``.

Boundary faces carry the zero-flux / marginal data and are not unknowns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ShapeMismatch


@dataclass(frozen=True)
class Grid:
    """Uniform staggered grid over the unit space-time box."""

    space: tuple[int, ...]
    nt: int
    hs: tuple[float, ...]
    ht: float

    def __post_init__(self):
        if not 1 <= len(self.space) <= 3:
            raise ShapeMismatch(f"spatial dimension must be 1..3, got {len(self.space)}")
        if any(n < 1 for n in self.space) or self.nt < 1:
            raise ShapeMismatch(f"grid extents must be positive: {self.space} x {self.nt}")
        if len(self.hs) != len(self.space):
            raise ShapeMismatch("one cell size per spatial axis required")

    @classmethod
    def unit(cls, space, nt):
        """Grid on [0,1]^m x [0,1] with h_d = 1/n_d and h_t = 1/n_t."""
        space = tuple(int(n) for n in space)
        return cls(space, int(nt), tuple(1.0 / n for n in space), 1.0 / int(nt))

    @property
    def dim(self) -> int:
        return len(self.space)

    @property
    def h_vol(self) -> float:
        return math.prod(self.hs)

    @property
    def n_space(self) -> int:
        return math.prod(self.space)

    @property
    def n_cells(self) -> int:
        return self.n_space * self.nt

    def cell_lead(self) -> tuple[int, ...]:
        return (self.nt, *self.space)

    def rho_lead(self) -> tuple[int, ...]:
        return (self.nt - 1, *self.space)

    def p_lead(self, d: int) -> tuple[int, ...]:
        space = list(self.space)
        space[d] -= 1
        return (self.nt, *space)


# ---------------------------------------------------------------------------
# slicing stencils (act on full field arrays, any trailing block axes)

def _at(ndim: int, axis: int, s) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def face_diff_to_cells(faces: np.ndarray, axis: int, h: float, n: int) -> np.ndarray:
    """Difference of interior face values into the n cells along ``axis``.

    Cell i receives (F_{i+1/2} - F_{i-1/2})/h with out-of-range faces zero.
    """
    shape = list(faces.shape)
    shape[axis] = n
    out = np.zeros(shape, dtype=faces.dtype)
    out[_at(out.ndim, axis, slice(0, n - 1))] += faces
    out[_at(out.ndim, axis, slice(1, n))] -= faces
    out /= h
    return out


def cell_diff_to_faces(cells: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Adjoint of :func:`face_diff_to_cells`: face f gets (C_f - C_{f+1})/h."""
    n = cells.shape[axis]
    a = cells[_at(cells.ndim, axis, slice(0, n - 1))]
    b = cells[_at(cells.ndim, axis, slice(1, n))]
    return (a - b) / h


def face_avg_to_cells(faces: np.ndarray, axis: int, n: int) -> np.ndarray:
    """Average interior face values into cells; missing boundary faces count 0."""
    shape = list(faces.shape)
    shape[axis] = n
    out = np.zeros(shape, dtype=faces.dtype)
    out[_at(out.ndim, axis, slice(0, n - 1))] += faces
    out[_at(out.ndim, axis, slice(1, n))] += faces
    out *= 0.5
    return out


def cell_avg_to_faces(cells: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of :func:`face_avg_to_cells`: face f gets (C_f + C_{f+1})/2."""
    n = cells.shape[axis]
    a = cells[_at(cells.ndim, axis, slice(0, n - 1))]
    b = cells[_at(cells.ndim, axis, slice(1, n))]
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# sparse operator construction (Kronecker route, independent of the slicing one)

def diff_csr(n: int, h: float) -> sp.csr_matrix:
    """n x (n-1) interior-face difference matrix with zero-flux boundaries."""
    return sp.diags([1.0 / h, -1.0 / h], [0, -1], shape=(n, n - 1), format="csr")


def grid_kron(grid: Grid, axis_core: dict[int, sp.spmatrix], block: sp.spmatrix) -> sp.csr_matrix:
    """Kronecker chain over (t, x[, y[, z]]) axes with a trailing block factor.

    ``axis_core`` maps axis index (0 = time) to its 1D matrix; the remaining
    axes contribute identities sized by the grid.
    """
    sizes = [grid.nt, *grid.space]
    mats = []
    for ax, size in enumerate(sizes):
        mats.append(axis_core.get(ax, sp.identity(size, format="csr")))
    mats.append(block)
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out.tocsr()


def block_diag_coo(parts: list[tuple[np.ndarray, int]]) -> sp.csr_matrix:
    """Block-diagonal sparse matrix from batches of dense blocks.

    Each part is ``(B, reps)`` with ``B`` of shape (num, k, k); every block
    B[i] is repeated ``reps`` times consecutively on the diagonal (the
    Kronecker factor ``I_reps (x) B[i]``), preserving part order.
    """
    rows_all, cols_all, data_all = [], [], []
    offset = 0
    for blocks, reps in parts:
        num, k = blocks.shape[0], blocks.shape[-1]
        if num == 0 or k == 0:
            continue
        base = offset + (np.arange(num)[:, None] * reps + np.arange(reps)[None, :]) * k
        base = base[:, :, None, None]
        full = (num, reps, k, k)
        rows = np.broadcast_to(base + np.arange(k)[None, None, :, None], full)
        cols = np.broadcast_to(base + np.arange(k)[None, None, None, :], full)
        data = np.broadcast_to(blocks[:, None, :, :], full)
        rows_all.append(rows.ravel())
        cols_all.append(cols.ravel())
        data_all.append(data.ravel())
        offset += num * reps * k
    if not rows_all:
        return sp.csr_matrix((offset, offset))
    mat = sp.coo_matrix(
        (np.concatenate(data_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(offset, offset),
    )
    return mat.tocsr()


# ---------------------------------------------------------------------------

class Layout:
    """Offsets of named fields inside one flat unknown vector."""

    def __init__(self, entries: list[tuple[str, tuple[int, ...]]]):
        self.names = [name for name, _ in entries]
        self.shapes = {name: shape for name, shape in entries}
        self.slices: dict[str, slice] = {}
        off = 0
        for name, shape in entries:
            size = int(np.prod(shape)) if shape else 1
            self.slices[name] = slice(off, off + size)
            off += size
        self.size = off

    def pack(self, fields: dict[str, np.ndarray]) -> np.ndarray:
        vec = np.empty(self.size)
        for name in self.names:
            vec[self.slices[name]] = np.ravel(fields[name])
        return vec

    def unpack(self, vec: np.ndarray) -> dict[str, np.ndarray]:
        if vec.shape != (self.size,):
            raise ShapeMismatch(f"expected vector of length {self.size}, got {vec.shape}")
        return {
            name: vec[self.slices[name]].reshape(self.shapes[name])
            for name in self.names
        }

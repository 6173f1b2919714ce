"""Dense algebra on small n x n blocks and block fields.

Symmetric blocks (densities, multipliers) are stored packed: the upper
triangle in row-major order, length n(n+1)/2.  For the linear-system side a
second representation is used, coordinates in the orthonormal basis
{E_ii, (E_ij + E_ji)/sqrt(2)}, so trace inner products become plain dot
products; packed <-> coordinates is an off-diagonal scaling.

All operations are pure and broadcast over arbitrary leading field axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NotPositiveDefinite, ShapeMismatch
from .grid import Grid

SQRT2 = float(np.sqrt(2.0))


def sym_len(n: int) -> int:
    return n * (n + 1) // 2


@lru_cache(maxsize=None)
def _triu(n: int):
    return np.triu_indices(n)


@lru_cache(maxsize=None)
def block_dim(s: int) -> int:
    """Recover n from a packed length s = n(n+1)/2."""
    n = int((np.sqrt(8 * s + 1) - 1) / 2 + 0.5)
    if sym_len(n) != s:
        raise ShapeMismatch(f"{s} is not a packed symmetric length")
    return n


@lru_cache(maxsize=None)
def coord_scale(n: int) -> np.ndarray:
    """Packed -> orthonormal-coordinate scaling (sqrt(2) off the diagonal)."""
    iu, ju = _triu(n)
    out = np.where(iu == ju, 1.0, SQRT2)
    out.setflags(write=False)
    return out


def pack(full: np.ndarray) -> np.ndarray:
    """Upper triangle of symmetric blocks, row-major; exact round trip."""
    n = full.shape[-1]
    iu, ju = _triu(n)
    return np.ascontiguousarray(full[..., iu, ju])


def unpack(packed: np.ndarray) -> np.ndarray:
    n = block_dim(packed.shape[-1])
    iu, ju = _triu(n)
    out = np.empty(packed.shape[:-1] + (n, n), dtype=packed.dtype)
    out[..., iu, ju] = packed
    out[..., ju, iu] = packed
    return out


def pack_coords(full: np.ndarray) -> np.ndarray:
    """Coordinates of symmetric blocks in the orthonormal basis."""
    return pack(full) * coord_scale(full.shape[-1])


def unpack_coords(coords: np.ndarray) -> np.ndarray:
    return unpack(coords / coord_scale(block_dim(coords.shape[-1])))


def packed_to_coords(packed: np.ndarray) -> np.ndarray:
    return packed * coord_scale(block_dim(packed.shape[-1]))


def coords_to_packed(coords: np.ndarray) -> np.ndarray:
    return coords / coord_scale(block_dim(coords.shape[-1]))


@lru_cache(maxsize=None)
def sym_basis(n: int) -> np.ndarray:
    """Orthonormal basis of symmetric n x n matrices, shape (s, n, n)."""
    out = unpack_coords(np.eye(sym_len(n)))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def sym_projection_matrix(n: int) -> np.ndarray:
    """s x n^2 matrix taking vec(P) to the coordinates of (P + P^T)/2."""
    out = sym_basis(n).reshape(sym_len(n), n * n).copy()
    out.setflags(write=False)
    return out


def sym_part(full: np.ndarray) -> np.ndarray:
    return 0.5 * (full + np.swapaxes(full, -1, -2))


def skew_part(full: np.ndarray) -> np.ndarray:
    return 0.5 * (full - np.swapaxes(full, -1, -2))


def sym_from_full(full: np.ndarray) -> np.ndarray:
    """Packed symmetrization (A + A^T)/2 of general blocks."""
    return pack(sym_part(full))


def cholesky_ok(full: np.ndarray) -> bool:
    """True when every block in the batch is SPD (Cholesky probe)."""
    try:
        np.linalg.cholesky(full)
        return True
    except np.linalg.LinAlgError:
        return False


def spd_inverse(full: np.ndarray) -> np.ndarray:
    """Blockwise SPD inverse via Cholesky; exactly symmetric output."""
    try:
        low = np.linalg.cholesky(full)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("block is not positive definite") from exc
    low_inv = np.linalg.inv(low)
    return np.einsum("...ki,...kj->...ij", low_inv, low_inv)


def block_inverse(packed: np.ndarray) -> np.ndarray:
    """Packed SPD inverse of packed symmetric blocks."""
    return pack(spd_inverse(unpack(packed)))


def trace_inner(x: np.ndarray, y: np.ndarray) -> float:
    """Sum over cells and block-column slots of tr(X^T Y)."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ShapeMismatch(f"shapes {x.shape} and {y.shape} do not conform")
    return float(np.sum(x * y))


# ---------------------------------------------------------------------------

_FIELD_KINDS = ("space-face-x", "space-face-y", "space-face-z", "time-face", "cell-center")


def staggered_lead(kind: str, grid: Grid) -> tuple[int, ...]:
    """Leading (grid) shape implied by a staggering kind."""
    if kind == "time-face":
        return grid.rho_lead()
    if kind == "cell-center":
        return grid.cell_lead()
    if kind.startswith("space-face-"):
        d = "xyz".index(kind[-1])
        if d >= grid.dim:
            raise ShapeMismatch(f"{kind} undefined on a {grid.dim}D grid")
        return grid.p_lead(d)
    raise ShapeMismatch(f"unknown staggering kind {kind!r}; expected one of {_FIELD_KINDS}")


@dataclass(frozen=True)
class StaggeredField:
    """Grid-indexed array of blocks tagged with its staggering.

    ``data`` holds the grid axes first (time, then space) and any block axes
    last; the leading shape must match the staggered count implied by
    ``kind`` and ``grid``, with boundary faces excluded.
    """

    kind: str
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        lead = staggered_lead(self.kind, self.grid)
        if self.data.shape[: len(lead)] != lead:
            raise ShapeMismatch(
                f"{self.kind} field on {self.grid.space} x {self.grid.nt} needs "
                f"leading shape {lead}, got {self.data.shape}"
            )

    @property
    def block_shape(self) -> tuple[int, ...]:
        return self.data.shape[len(staggered_lead(self.kind, self.grid)):]

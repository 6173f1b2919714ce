"""Synthetic marginal generators: centered disk/ball to corner quarters.

All generators are deterministic.  Shapes are smoothed with a separable
Gaussian (sigma in cells) and lifted off zero by an additive floor; the floor
is chosen by bisection so the measured density contrast of the produced pair
matches the request.  Both marginals are normalized to unit (trace) mass.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from . import blocks as bk
from .errors import InvalidContrast

SIGMA_CELLS = 2.0
_BISECTIONS = 80

# dominant in-plane directions for the four quarter disks (degrees)
QUARTER_ANGLES = (0.0, 45.0, 90.0, 135.0)

# dominant directions for the eight corner octants in 3D
OCTANT_DIRECTIONS = np.array([
    [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0],
    [1.0, 1.0, 1.0], [1.0, -1.0, 0.0],
])

RGB_COLORS = np.array([
    [1.0, 0.0, 0.0],  # red
    [0.0, 1.0, 0.0],  # green
    [0.0, 0.0, 1.0],  # blue
    [1.0, 1.0, 0.0],  # yellow
])


def _check(extents, contrast):
    if contrast <= 1.0:
        raise InvalidContrast(f"density contrast must exceed 1, got {contrast}")
    if any(e < 8 for e in extents):
        raise ValueError(f"grid extents must be at least 8, got {extents}")


def _coords(extents):
    axes = [(np.arange(m) + 0.5) / m for m in extents]
    return np.meshgrid(*axes, indexing="ij")


def _smooth(field: np.ndarray) -> np.ndarray:
    return gaussian_filter(field, sigma=SIGMA_CELLS, mode="reflect")


def _ball(extents, center, radius) -> np.ndarray:
    grids = _coords(extents)
    dist2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    return _smooth((dist2 <= radius * radius).astype(float))


def _aniso(direction: np.ndarray, ratio: float) -> np.ndarray:
    """Unit-peak SPD block with eigenvalue ratio ``ratio`` along ``direction``."""
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    return (1.0 - 1.0 / ratio) * np.outer(v, v) + np.eye(len(v)) / ratio


def _corners(dim):
    from itertools import product
    return list(product((0.0, 1.0), repeat=dim))


def _normalize_matrix(blocks: np.ndarray, h_vol: float) -> np.ndarray:
    mass = float(np.trace(blocks, axis1=-2, axis2=-1).sum()) * h_vol
    return blocks / mass


def _normalize_vector(rho: np.ndarray, h_vol: float) -> np.ndarray:
    return rho / (float(rho.sum()) * h_vol)


def matrix_contrast(rho0_packed: np.ndarray, rho1_packed: np.ndarray) -> float:
    """Max eigenvalue anywhere over min eigenvalue anywhere, both marginals."""
    eigs = [np.linalg.eigvalsh(bk.unpack(r)) for r in (rho0_packed, rho1_packed)]
    top = max(float(e.max()) for e in eigs)
    bottom = min(float(e.min()) for e in eigs)
    return top / bottom


def vector_contrast(rho0: np.ndarray, rho1: np.ndarray) -> float:
    """Per-marginal, per-channel max/min ratio, maximized over both."""
    out = 0.0
    for rho in (rho0, rho1):
        flat = rho.reshape(-1, rho.shape[-1])
        out = max(out, float((flat.max(axis=0) / flat.min(axis=0)).max()))
    return out


def _floor_by_bisection(measure, target: float) -> float:
    """Find the additive floor whose measured contrast equals ``target``.

    ``measure(beta)`` decreases from above ``target`` (beta -> 0) towards 1
    (beta -> inf); bisection after bracketing.
    """
    lo = 1e-12
    hi = 1.0
    while measure(hi) > target:
        hi *= 4.0
        if hi > 1e12:
            raise InvalidContrast("cannot bracket the requested contrast")
    for _ in range(_BISECTIONS):
        mid = np.sqrt(lo * hi)
        if measure(mid) > target:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


def _matrix_pair_from_shapes(shape0: np.ndarray, shape1: np.ndarray,
                             h_vol: float, contrast: float):
    """Shared floor + per-marginal normalization hitting the joint contrast."""
    n = shape0.shape[-1]
    eye = np.eye(n)

    def build(beta):
        r0 = _normalize_matrix(shape0 + beta * eye, h_vol)
        r1 = _normalize_matrix(shape1 + beta * eye, h_vol)
        return r0, r1

    def measure(beta):
        r0, r1 = build(beta)
        return matrix_contrast(bk.pack(r0), bk.pack(r1))

    beta = _floor_by_bisection(measure, contrast)
    r0, r1 = build(beta)
    return bk.pack(r0), bk.pack(r1)


def gen_matrix_disk_to_quarters(nx: int, ny: int, n: int = 3, contrast: float = 10.0,
                                *, disk_radius: float = 0.2,
                                quarter_radius: float = 0.25):
    """Isotropic centered disk to four anisotropic corner quarter-disks.

    The initial blocks are multiples of the identity; each terminal quarter
    has its dominant eigen-direction at 0/45/90/135 degrees in the plane with
    eigenvalue ratio equal to the requested contrast.
    """
    _check((nx, ny), contrast)
    if n != 3:
        raise ValueError("the disk-to-quarters generator produces 3x3 blocks")
    extents = (nx, ny)
    amp0 = _ball(extents, (0.5, 0.5), disk_radius)
    shape0 = amp0[..., None, None] * np.eye(n)
    shape1 = np.zeros((*extents, n, n))
    for corner, angle in zip(_corners(2), QUARTER_ANGLES):
        amp = _ball(extents, corner, quarter_radius)
        theta = np.deg2rad(angle)
        direction = np.array([np.cos(theta), np.sin(theta), 0.0])
        shape1 += amp[..., None, None] * _aniso(direction, contrast)
    h_vol = 1.0 / (nx * ny)
    return _matrix_pair_from_shapes(shape0, shape1, h_vol, contrast)


def gen_matrix_3d(nx: int, ny: int, nz: int, contrast: float = 30.0,
                  *, ball_radius: float = 0.2, octant_radius: float = 0.25):
    """Isotropic centered ball to eight anisotropic corner octants (3x3 blocks)."""
    _check((nx, ny, nz), contrast)
    extents = (nx, ny, nz)
    shape0 = _ball(extents, (0.5, 0.5, 0.5), ball_radius)[..., None, None] * np.eye(3)
    shape1 = np.zeros((*extents, 3, 3))
    for corner, direction in zip(_corners(3), OCTANT_DIRECTIONS):
        amp = _ball(extents, corner, octant_radius)
        shape1 += amp[..., None, None] * _aniso(direction, contrast)
    h_vol = 1.0 / (nx * ny * nz)
    return _matrix_pair_from_shapes(shape0, shape1, h_vol, contrast)


def gen_vector_disk_to_quarters(nx: int, ny: int, contrast: float = 10.0,
                                *, disk_radius: float = 0.2,
                                quarter_radius: float = 0.25):
    """White centered disk to four differently colored corner quarters (RGB)."""
    _check((nx, ny), contrast)
    extents = (nx, ny)
    shape0 = np.repeat(_ball(extents, (0.5, 0.5), disk_radius)[..., None], 3, axis=-1)
    shape1 = np.zeros((*extents, 3))
    for corner, color in zip(_corners(2), RGB_COLORS):
        amp = _ball(extents, corner, quarter_radius)
        shape1 += amp[..., None] * color
    h_vol = 1.0 / (nx * ny)

    def build(beta):
        return (_normalize_vector(shape0 + beta, h_vol),
                _normalize_vector(shape1 + beta, h_vol))

    def measure(beta):
        return vector_contrast(*build(beta))

    beta = _floor_by_bisection(measure, contrast)
    return build(beta)

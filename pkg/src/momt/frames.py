"""Interpolation frames: density snapshots along the transport path.

One frame per density time sample: the initial marginal, every interior time
face, and the terminal marginal.  Matrix solutions export eigen-decomposed
glyph rows (CSV); vector solutions export binary P6 PPM images, one file per
time sample, channels scaled by the global maximum across frames.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import blocks as bk
from .grid import Grid


@dataclass
class FrameSet:
    """Cell-centered density fields at times j/nt, j = 0..nt."""

    kind: str
    grid: Grid
    times: np.ndarray            # (nt + 1,)
    fields: np.ndarray           # (nt + 1, *space, blocklen)

    @property
    def n_frames(self) -> int:
        return len(self.times)


def build_frames(problem, state) -> FrameSet:
    stack = np.concatenate([
        problem.rho0[None], np.asarray(state.rho), problem.rho1[None]
    ], axis=0)
    nt = problem.grid.nt
    return FrameSet(problem.kind, problem.grid, np.arange(nt + 1) / nt, stack)


def frame_masses(frames: FrameSet) -> np.ndarray:
    """Total (trace) mass of each frame, cell volumes included."""
    if frames.kind == "matrix":
        full = bk.unpack(frames.fields)
        per = np.trace(full, axis1=-2, axis2=-1)
    else:
        per = frames.fields
    axes = tuple(range(1, per.ndim))
    return per.sum(axis=axes) * frames.grid.h_vol


def _principal_angles(vecs: np.ndarray, n: int) -> list[np.ndarray]:
    """Orientation angles of the leading eigenvector, sign-canonicalized."""
    lead = np.argmax(np.abs(vecs), axis=-1)
    sign = np.sign(np.take_along_axis(vecs, lead[..., None], axis=-1))
    sign[sign == 0] = 1.0
    v = vecs * sign
    if n == 1:
        return []
    if n == 2:
        return [np.arctan2(v[..., 1], v[..., 0]) % np.pi]
    azimuth = np.arctan2(v[..., 1], v[..., 0])
    elevation = np.arctan2(v[..., 2], np.hypot(v[..., 0], v[..., 1]))
    return [azimuth, elevation]


def glyph_rows(frames: FrameSet):
    """(header, row iterator) for the glyph CSV of a matrix frame set."""
    if frames.kind != "matrix":
        raise ValueError("glyph export applies to matrix solutions")
    n = bk.block_dim(frames.fields.shape[-1])
    dim = frames.grid.dim
    index_cols = ["i", "j", "k"][:dim]
    angle_cols = [] if n == 1 else (["theta"] if n == 2 else ["azimuth", "elevation"])
    header = index_cols + ["t"] + [f"ev{i + 1}" for i in range(n)] + angle_cols

    full = bk.unpack(frames.fields)
    evals, evecs = np.linalg.eigh(full)
    evals = evals[..., ::-1]                      # descending
    principal = evecs[..., :, -1]                 # eigenvector of the largest
    angles = _principal_angles(principal, n)

    def rows():
        for frame in range(frames.n_frames):
            t = frames.times[frame]
            for idx in np.ndindex(*frames.grid.space):
                row = [*idx, repr(float(t))]
                row += [repr(float(e)) for e in evals[(frame, *idx)]]
                row += [repr(float(a[(frame, *idx)])) for a in angles]
                yield row

    return header, rows()


def write_glyph_csv(frames: FrameSet, path) -> Path:
    header, rows = glyph_rows(frames)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def frame_rgb(frames: FrameSet) -> np.ndarray:
    """(frames, nx, ny, 3) channel stack; missing channels are zero."""
    if frames.kind != "vector":
        raise ValueError("PPM export applies to vector solutions")
    if frames.grid.dim != 2:
        raise ValueError("PPM export needs a 2D grid")
    n = frames.fields.shape[-1]
    if n > 3:
        raise ValueError("PPM export supports at most 3 channels")
    out = np.zeros((*frames.fields.shape[:-1], 3))
    out[..., :n] = frames.fields
    if n == 1:
        out[..., 1] = out[..., 2] = out[..., 0]
    return out


def write_ppm_frames(frames: FrameSet, outdir, prefix: str = "frame") -> list[Path]:
    """Binary P6 images, one per time sample, global [0, 255] scaling."""
    rgb = frame_rgb(frames)
    peak = float(rgb.max())
    scaled = np.rint(rgb / peak * 255.0).astype(np.uint8) if peak > 0 else \
        np.zeros(rgb.shape, dtype=np.uint8)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    nx, ny = frames.grid.space
    for frame in range(frames.n_frames):
        # image rows run top to bottom = decreasing y; columns = x
        img = scaled[frame].transpose(1, 0, 2)[::-1]
        path = outdir / f"{prefix}_{frame:03d}.ppm"
        with open(path, "wb") as fh:
            fh.write(f"P6\n{nx} {ny}\n255\n".encode())
            fh.write(img.tobytes())
        paths.append(path)
    return paths


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file back as (nx, ny, 3) uint8 in grid orientation."""
    raw = Path(path).read_bytes()
    match = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not match:
        raise ValueError(f"{path} is not a binary P6 PPM")
    width, height, maxval = (int(g) for g in match.groups())
    if maxval != 255:
        raise ValueError("only 8-bit PPM supported")
    pixels = np.frombuffer(raw[match.end():], dtype=np.uint8)
    img = pixels.reshape(height, width, 3)
    return img[::-1].transpose(1, 0, 2)

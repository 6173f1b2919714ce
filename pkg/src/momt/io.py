"""Problem files, solution archives, and trace CSVs.

Problem file layout (all little-endian):

    magic   4 bytes  b"MOMT"
    version u8       1
    kind    u8       0 = matrix, 1 = vector
    n       u8       block / channel dimension
    N       u8       basis size (matrix) or edge count (vector)
    m       u8       spatial dimension
    grid    m+1 u32  spatial extents then nt
    gamma   f64
    matrix kind: basis payload, N*n*n f64 (row-major per element)
    vector kind: incidence n*N i8 (row-major), weights N f64
    rho0    cells * blocklen f64   (packed upper-triangular / channels)
    rho1    cells * blocklen f64
    meta    u32 length + UTF-8 JSON (sorted keys)

The loader re-verifies payload sizes, positivity, and unit mass.
"""

from __future__ import annotations

import csv
import io as _io
import json
import struct

import numpy as np

from . import blocks as bk
from .errors import InvalidProblem
from .grid import Grid
from .matrix_omt import MatrixProblem, OperatorBasis
from .sqp import SolveResult, SqpState, StepReport
from .vector_omt import Graph, VectorProblem

MAGIC = b"MOMT"
VERSION = 1
_KINDS = {"matrix": 0, "vector": 1}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}

TRACE_COLUMNS = ("iter", "merit", "cost", "alpha", "pcg_iters", "shift")


def problem_to_bytes(problem, metadata: dict | None = None) -> bytes:
    grid = problem.grid
    buf = _io.BytesIO()
    if problem.kind == "matrix":
        n, N = problem.n, problem.N
    else:
        n, N = problem.graph.n, problem.graph.N
    buf.write(MAGIC)
    buf.write(struct.pack("<BBBBB", VERSION, _KINDS[problem.kind], n, N, grid.dim))
    buf.write(struct.pack(f"<{grid.dim + 1}I", *grid.space, grid.nt))
    buf.write(struct.pack("<d", problem.gamma))
    if problem.kind == "matrix":
        buf.write(np.asarray(problem.basis.L, dtype="<f8").tobytes())
    else:
        buf.write(np.asarray(problem.graph.incidence, dtype="<i1").tobytes())
        buf.write(np.asarray(problem.graph.weights, dtype="<f8").tobytes())
    buf.write(np.asarray(problem.rho0, dtype="<f8").tobytes())
    buf.write(np.asarray(problem.rho1, dtype="<f8").tobytes())
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    return buf.getvalue()


def problem_from_bytes(data: bytes):
    """Parse and validate a problem file; returns (problem, metadata)."""
    buf = _io.BytesIO(data)

    def take(size, what):
        chunk = buf.read(size)
        if len(chunk) != size:
            raise InvalidProblem(f"truncated problem file while reading {what}")
        return chunk

    if take(4, "magic") != MAGIC:
        raise InvalidProblem("bad magic bytes (not a MOMT problem file)")
    version, kind_code, n, N, dim = struct.unpack("<BBBBB", take(5, "header"))
    if version != VERSION:
        raise InvalidProblem(f"unsupported problem file version {version}")
    if kind_code not in _KIND_NAMES:
        raise InvalidProblem(f"unknown problem kind byte {kind_code}")
    kind = _KIND_NAMES[kind_code]
    extents = struct.unpack(f"<{dim + 1}I", take(4 * (dim + 1), "grid"))
    grid = Grid.unit(extents[:-1], extents[-1])
    (gamma,) = struct.unpack("<d", take(8, "gamma"))

    if kind == "matrix":
        basis_raw = np.frombuffer(take(8 * N * n * n, "basis"), dtype="<f8")
        basis = OperatorBasis(n, basis_raw.reshape(N, n, n).copy())
        blocklen = bk.sym_len(n)
    else:
        inc = np.frombuffer(take(n * N, "incidence"), dtype="<i1").reshape(n, N)
        weights = np.frombuffer(take(8 * N, "weights"), dtype="<f8")
        graph = Graph(inc.astype(float), weights.copy())
        blocklen = n

    cells = grid.n_space
    payload = 8 * cells * blocklen
    shape = (*grid.space, blocklen)
    rho0 = np.frombuffer(take(payload, "rho0"), dtype="<f8").reshape(shape).copy()
    rho1 = np.frombuffer(take(payload, "rho1"), dtype="<f8").reshape(shape).copy()

    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    metadata = json.loads(take(meta_len, "metadata").decode()) if meta_len else {}
    if buf.read(1):
        raise InvalidProblem("trailing bytes after problem payload")

    if kind == "matrix":
        problem = MatrixProblem(basis, grid, gamma, rho0, rho1)
    else:
        problem = VectorProblem(graph, grid, gamma, rho0, rho1)
    return problem, metadata


def write_problem(path, problem, metadata: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(problem_to_bytes(problem, metadata))


def read_problem(path):
    with open(path, "rb") as fh:
        return problem_from_bytes(fh.read())


# ---------------------------------------------------------------------------

def write_trace_csv(path, trace: list[StepReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for r in trace:
            writer.writerow([r.iteration, repr(r.merit), repr(r.cost), repr(r.alpha),
                             r.pcg_iters, repr(r.shift)])


def trace_to_array(trace: list[StepReport]) -> np.ndarray:
    return np.array([
        [r.iteration, r.merit, r.cost, r.alpha, r.pcg_iters, r.pcg_residual,
         float(r.pcg_converged), r.shift, r.backtracks]
        for r in trace
    ])


def save_solution(path, problem, result: SolveResult, metadata: dict | None = None) -> None:
    """Self-contained archive: embedded problem file plus the final state."""
    arrays = {
        "problem": np.frombuffer(problem_to_bytes(problem, metadata), dtype=np.uint8),
        "rho": result.state.rho,
        "u": result.state.u,
        "lam": result.state.lam,
        "trace": trace_to_array(result.trace),
        "distance2": np.float64(result.distance2),
        "converged": np.bool_(result.converged),
        "iterations": np.int64(result.iterations),
        "final_residual": np.float64(result.final_residual),
    }
    for d, p in enumerate(result.state.ps):
        arrays[f"p{d}"] = p
    np.savez_compressed(path, **arrays)


def load_solution(path):
    """Returns (problem, metadata, SolveResult with an empty trace list)."""
    with np.load(path) as data:
        problem, metadata = problem_from_bytes(data["problem"].tobytes())
        ps = tuple(data[f"p{d}"] for d in range(problem.grid.dim))
        for d, p in enumerate(ps):
            bk.StaggeredField(f"space-face-{'xyz'[d]}", problem.grid, p)
        bk.StaggeredField("time-face", problem.grid, data["rho"])
        bk.StaggeredField("cell-center", problem.grid, data["u"])
        state = SqpState(ps=ps, rho=data["rho"], u=data["u"], lam=data["lam"],
                         iteration=int(data["iterations"]))
        result = SolveResult(
            state=state,
            distance2=float(data["distance2"]),
            trace=[],
            converged=bool(data["converged"]),
            iterations=int(data["iterations"]),
            final_residual=float(data["final_residual"]),
        )
        trace_array = data["trace"]
    return problem, metadata, result, trace_array

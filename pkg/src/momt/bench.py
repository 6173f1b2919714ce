"""Benchmark sweeps reproducing the reported iteration-count tables.

Each suite runs a configured sweep (grid hierarchy, contrast, or gamma) and
reports SQP iterations, total inner PCG iterations, and wall time per row.
Solver errors flag the row and the sweep continues.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import MomtError
from .generators import (
    gen_matrix_3d,
    gen_matrix_disk_to_quarters,
    gen_vector_disk_to_quarters,
)
from .grid import Grid
from .matrix_omt import MatrixProblem, OperatorBasis
from .sqp import SolverConfig, solve
from .vector_omt import Graph, VectorProblem

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchRow:
    kind: str                  # "matrix" | "vector" | "matrix3d"
    space: tuple[int, ...]
    nt: int
    contrast: float
    gamma: float
    tol_outer: float

    @property
    def label(self) -> str:
        dims = "x".join(str(e) for e in (*self.space, self.nt))
        return f"{self.kind} {dims} c{self.contrast:g} g{self.gamma:g}"


def _grid_rows(kind, grids, contrast, gamma, tol=1e-3):
    return [BenchRow(kind, g[:-1], g[-1], contrast, gamma, tol) for g in grids]


def suite_rows(name: str) -> list[BenchRow]:
    if name == "table1":
        return _grid_rows("matrix", [(16, 16, 10), (32, 32, 20), (64, 64, 40)],
                          10.0, 0.01, 1e-3)
    if name == "table2":
        return _grid_rows("matrix", [(16, 16, 10), (32, 32, 20), (64, 64, 40)],
                          50.0, 0.01, 1e-2)
    if name == "table3":
        return [BenchRow("matrix", (32, 32), 20, 10.0, g, 1e-3) for g in (1.0, 0.1, 0.01)]
    if name == "table4":
        return _grid_rows("vector", [(32, 32, 10), (64, 64, 20), (128, 128, 40)],
                          10.0, 0.01, 1e-3)
    if name == "table5":
        return _grid_rows("vector", [(32, 32, 10), (64, 64, 20), (128, 128, 40)],
                          100.0, 0.01, 1e-3)
    if name == "table6":
        return [BenchRow("vector", (64, 64), 20, 100.0, g, 1e-3) for g in (1.0, 0.1, 0.01)]
    if name == "table7-3d":
        return _grid_rows("matrix3d", [(16, 16, 16, 10), (32, 32, 32, 10),
                                       (64, 64, 64, 10)], 30.0, 0.1)
    raise ValueError(f"unknown suite {name!r}; expected table1..table6 or table7-3d")


SUITE_NAMES = ("table1", "table2", "table3", "table4", "table5", "table6", "table7-3d")


def build_problem(row: BenchRow):
    grid = Grid.unit(row.space, row.nt)
    if row.kind == "matrix":
        rho0, rho1 = gen_matrix_disk_to_quarters(*row.space, contrast=row.contrast)
        return MatrixProblem(OperatorBasis.default(3), grid, row.gamma, rho0, rho1)
    if row.kind == "matrix3d":
        rho0, rho1 = gen_matrix_3d(*row.space, contrast=row.contrast)
        return MatrixProblem(OperatorBasis.default(3), grid, row.gamma, rho0, rho1)
    rho0, rho1 = gen_vector_disk_to_quarters(*row.space, contrast=row.contrast)
    return VectorProblem(Graph.complete_k3(), grid, row.gamma, rho0, rho1)


def run_rows(rows: list[BenchRow], config: SolverConfig | None = None,
             seed: int = 0) -> list[dict]:
    results = []
    for row in rows:
        record = {"label": row.label, "kind": row.kind,
                  "grid": "x".join(str(e) for e in (*row.space, row.nt)),
                  "contrast": row.contrast, "gamma": row.gamma,
                  "tol_outer": row.tol_outer, "seed": seed}
        t0 = time.time()
        try:
            problem = build_problem(row)
            cfg = replace(config or SolverConfig(), tol_outer=row.tol_outer,
                          gamma=row.gamma)
            res = solve(problem, cfg)
            record.update(
                status="ok" if res.converged else "not-converged",
                sqp_iters=res.iterations,
                pcg_total=res.total_pcg_iters,
                distance2=res.distance2,
            )
        except MomtError as exc:
            log.warning("bench row %s failed: %s", row.label, exc)
            record.update(status=f"error: {exc}", sqp_iters=-1, pcg_total=-1,
                          distance2=float("nan"))
        record["wall_time"] = time.time() - t0
        results.append(record)
    return results


REPORT_COLUMNS = ("label", "grid", "contrast", "gamma", "tol_outer", "status",
                  "sqp_iters", "pcg_total", "distance2", "wall_time", "seed")


def write_report(rows: list[dict], outdir, name: str) -> dict[str, Path]:
    from .plots import save_bench_figure

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"{name}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r.get(k, "") for k in REPORT_COLUMNS})
    txt_path = outdir / f"{name}.txt"
    widths = {k: max(len(k), *(len(str(r.get(k, ""))) for r in rows)) for k in REPORT_COLUMNS}
    with open(txt_path, "w") as fh:
        fh.write("  ".join(k.ljust(widths[k]) for k in REPORT_COLUMNS) + "\n")
        for r in rows:
            fh.write("  ".join(str(r.get(k, "")).ljust(widths[k])
                               for k in REPORT_COLUMNS) + "\n")
    fig_path = save_bench_figure(rows, outdir / f"{name}.png", name)
    return {"csv": csv_path, "txt": txt_path, "figure": fig_path}

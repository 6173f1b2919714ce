"""Command-line interface: gen, solve, export, bench.

Exit codes: 0 success, 1 solver did not converge, 2 input/usage error.
`MOMT_THREADS` caps worker parallelism (0 or unset = automatic).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import bench as bench_mod
from . import io as mio
from .errors import InvalidContrast, InvalidProblem, MomtError
from .frames import build_frames, write_glyph_csv, write_ppm_frames
from .generators import (
    gen_matrix_3d,
    gen_matrix_disk_to_quarters,
    gen_vector_disk_to_quarters,
)
from .grid import Grid
from .matrix_omt import MatrixProblem, OperatorBasis
from .sqp import SolverConfig, solve
from .vector_omt import Graph, VectorProblem


def _apply_thread_cap() -> None:
    cap = os.environ.get("MOMT_THREADS", "")
    try:
        cap_n = int(cap) if cap else 0
    except ValueError:
        raise SystemExit(f"MOMT_THREADS must be an integer, got {cap!r}")
    if cap_n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(cap_n))
        try:
            import numba
            numba.set_num_threads(min(cap_n, numba.get_num_threads()))
        except ImportError:
            pass


def _parse_extents(token: str) -> tuple[int, ...]:
    try:
        extents = tuple(int(part) for part in token.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid spec {token!r}")
    if not extents or any(e < 1 for e in extents):
        raise argparse.ArgumentTypeError(f"bad grid spec {token!r}")
    return extents


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="momt",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true",
                        help="log per-iteration solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic problem file")
    p_gen.add_argument("--kind", choices=("matrix", "vector"), required=True)
    p_gen.add_argument("--grid", type=_parse_extents, required=True,
                       help="spatial extents, e.g. 32x32 or 16x16x16")
    p_gen.add_argument("--nt", type=int, required=True, help="time cells")
    p_gen.add_argument("--contrast", type=float, default=10.0)
    p_gen.add_argument("--gamma", type=float, default=0.01,
                       help="default gamma stored in the problem file")
    p_gen.add_argument("--seed", type=int, default=0,
                       help="recorded in the metadata (generation is deterministic)")
    p_gen.add_argument("--out", type=Path, required=True)

    p_solve = sub.add_parser("solve", help="solve a problem file")
    p_solve.add_argument("problem", type=Path)
    p_solve.add_argument("--gamma", type=float, default=None,
                         help="override the gamma stored in the problem file")
    p_solve.add_argument("--tol-outer", type=float, default=1e-3)
    p_solve.add_argument("--tol-inner", type=float, default=None)
    p_solve.add_argument("--max-outer", type=int, default=200)
    p_solve.add_argument("--absolute-norms", action="store_true",
                         help="use absolute instead of ||b||-normalized tolerances")
    p_solve.add_argument("--out", type=Path, default=None,
                         help="solution archive (default: <problem>.solution.npz)")
    p_solve.add_argument("--no-figure", action="store_true")

    p_export = sub.add_parser("export", help="export interpolation frames")
    p_export.add_argument("solution", type=Path)
    p_export.add_argument("--format", choices=("glyph-csv", "ppm"), default=None,
                          help="default: glyph-csv for matrix, ppm for vector")
    p_export.add_argument("--outdir", type=Path, required=True)
    p_export.add_argument("--no-figure", action="store_true")

    p_bench = sub.add_parser("bench", help="run a benchmark table sweep")
    p_bench.add_argument("suite", choices=bench_mod.SUITE_NAMES)
    p_bench.add_argument("--outdir", type=Path, default=Path("bench-report"))
    p_bench.add_argument("--grid", type=str, default=None,
                         help="comma-separated space-time grid overrides, e.g. 16x16x10,32x32x20")
    p_bench.add_argument("--gamma", type=str, default=None,
                         help="comma-separated gamma overrides")
    p_bench.add_argument("--contrast", type=float, default=None)
    p_bench.add_argument("--tol-outer", type=float, default=None)
    p_bench.add_argument("--tol-inner", type=float, default=None)
    p_bench.add_argument("--max-outer", type=int, default=200)
    p_bench.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_gen(args) -> int:
    dim = len(args.grid)
    if args.kind == "matrix":
        if dim == 2:
            rho0, rho1 = gen_matrix_disk_to_quarters(*args.grid, contrast=args.contrast)
        elif dim == 3:
            rho0, rho1 = gen_matrix_3d(*args.grid, contrast=args.contrast)
        else:
            raise InvalidProblem("matrix generation supports 2D or 3D grids")
        problem = MatrixProblem(OperatorBasis.default(3),
                                Grid.unit(args.grid, args.nt), args.gamma, rho0, rho1)
        generator = "disk-to-quarters" if dim == 2 else "ball-to-octants"
    else:
        if dim != 2:
            raise InvalidProblem("vector generation supports 2D grids")
        rho0, rho1 = gen_vector_disk_to_quarters(*args.grid, contrast=args.contrast)
        problem = VectorProblem(Graph.complete_k3(),
                                Grid.unit(args.grid, args.nt), args.gamma, rho0, rho1)
        generator = "disk-to-color-quarters"
    metadata = {"contrast": args.contrast, "generator": generator, "seed": args.seed}
    mio.write_problem(args.out, problem, metadata)
    print(f"wrote {args.out} ({args.kind}, grid {'x'.join(map(str, args.grid))}x{args.nt}, "
          f"contrast {args.contrast:g})")
    return 0


def _cmd_solve(args) -> int:
    problem, metadata = mio.read_problem(args.problem)
    config = SolverConfig(
        tol_outer=args.tol_outer,
        tol_inner=args.tol_inner,
        max_outer=args.max_outer,
        gamma=args.gamma,
        normalized=not args.absolute_norms,
    )
    if config.gamma is not None:
        problem = problem.with_gamma(config.gamma)
    result = solve(problem, config)
    out = args.out or args.problem.with_suffix(".solution.npz")
    mio.save_solution(out, problem, result, metadata)
    trace_path = out.parent / (out.stem + ".trace.csv")
    mio.write_trace_csv(trace_path, result.trace)
    if not args.no_figure:
        from .plots import save_convergence_figure
        save_convergence_figure(result.trace, out.parent / (out.stem + ".convergence.png"))
    print(f"distance^2 = {result.distance2!r}")
    print(f"iterations = {result.iterations}, converged = {result.converged}, "
          f"final residual = {result.final_residual:.3e}")
    print(f"wrote {out} and {trace_path}")
    return 0 if result.converged else 1


def _cmd_export(args) -> int:
    problem, _meta, result, _trace = mio.load_solution(args.solution)
    frames = build_frames(problem, result.state)
    fmt = args.format or ("glyph-csv" if problem.kind == "matrix" else "ppm")
    outdir = args.outdir
    outdir.mkdir(parents=True, exist_ok=True)
    if fmt == "glyph-csv":
        if problem.kind != "matrix":
            raise InvalidProblem("glyph-csv export applies to matrix solutions")
        written = [write_glyph_csv(frames, outdir / "glyphs.csv")]
    else:
        if problem.kind != "vector":
            raise InvalidProblem("ppm export applies to vector solutions")
        written = write_ppm_frames(frames, outdir)
    if not args.no_figure:
        from .plots import save_frame_montage
        written.append(save_frame_montage(frames, outdir / "frames_overview.png"))
    print(f"wrote {len(written)} file(s) under {outdir}")
    return 0


def _cmd_bench(args) -> int:
    rows = bench_mod.suite_rows(args.suite)
    if args.grid:
        grids = [_parse_extents(tok) for tok in args.grid.split(",")]
        kind = rows[0].kind
        rows = [replace(rows[0], space=g[:-1], nt=g[-1]) for g in grids]
    if args.gamma:
        gammas = [float(tok) for tok in args.gamma.split(",")]
        if len(gammas) == len(rows):
            rows = [replace(r, gamma=g) for r, g in zip(rows, gammas)]
        else:
            rows = [replace(rows[0], gamma=g) for g in gammas]
    if args.contrast is not None:
        rows = [replace(r, contrast=args.contrast) for r in rows]
    if args.tol_outer is not None:
        rows = [replace(r, tol_outer=args.tol_outer) for r in rows]
    config = SolverConfig(tol_inner=args.tol_inner, max_outer=args.max_outer)
    records = bench_mod.run_rows(rows, config, seed=args.seed)
    paths = bench_mod.write_report(records, args.outdir, args.suite)
    print(Path(paths["txt"]).read_text(), end="")
    print(f"wrote {paths['csv']}, {paths['txt']}, {paths['figure']}")
    return 0 if all(r["status"] == "ok" for r in records) else 1


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {"gen": _cmd_gen, "solve": _cmd_solve, "export": _cmd_export,
                "bench": _cmd_bench}
    try:
        return handlers[args.command](args)
    except (InvalidProblem, InvalidContrast, FileNotFoundError, OSError, ValueError,
            argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MomtError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

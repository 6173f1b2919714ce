import csv

import pytest

from conftest import make_matrix_problem
from momt import io as mio
from momt.cli import main


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_gen_solve_export_matrix(workdir):
    assert main(["gen", "--kind", "matrix", "--grid", "10x10", "--nt", "5",
                 "--contrast", "10", "--gamma", "0.05", "--seed", "3",
                 "--out", "prob.momt"]) == 0
    problem, meta = mio.read_problem("prob.momt")
    assert meta == {"contrast": 10.0, "generator": "disk-to-quarters", "seed": 3}
    assert problem.kind == "matrix" and problem.grid.space == (10, 10)

    assert main(["solve", "prob.momt", "--gamma", "0.05", "--tol-outer", "1e-3",
                 "--out", "sol.npz"]) == 0
    assert (workdir / "sol.npz").exists()
    assert (workdir / "sol.convergence.png").exists()
    with open(workdir / "sol.trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    merits = [float(r["merit"]) for r in rows]
    assert all(b < a for a, b in zip(merits, merits[1:]))

    assert main(["export", "sol.npz", "--outdir", "frames"]) == 0
    assert (workdir / "frames" / "glyphs.csv").exists()
    assert (workdir / "frames" / "frames_overview.png").exists()


def test_solve_zero_transport_exit_zero(workdir):
    problem = make_matrix_problem(seed=2, space=(4,), nt=3, n=2)
    same = type(problem)(problem.basis, problem.grid, problem.gamma,
                         problem.rho0, problem.rho0, validate=False)
    mio.write_problem("same.momt", same)
    assert main(["solve", "same.momt", "--out", "same.npz", "--no-figure"]) == 0
    _, _, res, _ = mio.load_solution("same.npz")
    assert res.distance2 <= 1e-10


def test_solve_not_converged_exit_one(workdir):
    problem = make_matrix_problem(seed=3, space=(4,), nt=3, n=2)
    mio.write_problem("p.momt", problem)
    assert main(["solve", "p.momt", "--tol-outer", "1e-6", "--max-outer", "1",
                 "--out", "p.npz", "--no-figure"]) == 1


def test_vector_pipeline_with_ppm(workdir):
    assert main(["gen", "--kind", "vector", "--grid", "8x8", "--nt", "4",
                 "--contrast", "10", "--out", "v.momt"]) == 0
    assert main(["solve", "v.momt", "--no-figure", "--out", "v.npz"]) == 0
    assert main(["export", "v.npz", "--format", "ppm", "--outdir", "vf",
                 "--no-figure"]) == 0
    ppms = sorted((workdir / "vf").glob("*.ppm"))
    assert len(ppms) == 5

    # format mismatched to the solution kind is a usage error
    assert main(["export", "v.npz", "--format", "glyph-csv", "--outdir", "bad"]) == 2


def test_gen_matrix_3d(workdir):
    assert main(["gen", "--kind", "matrix", "--grid", "8x8x8", "--nt", "3",
                 "--contrast", "30", "--out", "m3.momt"]) == 0
    problem, meta = mio.read_problem("m3.momt")
    assert problem.grid.space == (8, 8, 8)
    assert meta["generator"] == "ball-to-octants"


def test_input_errors_exit_two(workdir):
    assert main(["solve", "missing.momt"]) == 2
    (workdir / "junk.momt").write_bytes(b"JUNKJUNKJUNK")
    assert main(["solve", "junk.momt"]) == 2
    assert main(["gen", "--kind", "matrix", "--grid", "10", "--nt", "4",
                 "--out", "x.momt"]) == 2  # 1D generation unsupported
    assert main(["gen", "--kind", "matrix", "--grid", "10x10", "--nt", "4",
                 "--contrast", "0.5", "--out", "x.momt"]) == 2
    assert main(["bench", "table3", "--outdir", "rep", "--grid", "8xbad"]) == 2


def test_bench_with_overrides(workdir):
    code = main(["bench", "table3", "--outdir", "rep", "--grid", "8x8x4",
                 "--gamma", "0.1,0.01", "--contrast", "10", "--tol-outer", "1e-3"])
    assert code == 0
    with open(workdir / "rep" / "table3.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert all(r["status"] == "ok" for r in rows)
    assert all(int(r["sqp_iters"]) > 0 for r in rows)
    assert (workdir / "rep" / "table3.txt").exists()
    assert (workdir / "rep" / "table3.png").exists()


def test_bench_suites_define_reported_rows():
    from momt.bench import suite_rows

    table1 = suite_rows("table1")
    assert [(r.space, r.nt) for r in table1] == [((16, 16), 10), ((32, 32), 20),
                                                 ((64, 64), 40)]
    assert all(r.contrast == 10.0 and r.gamma == 0.01 for r in table1)
    table2 = suite_rows("table2")
    assert all(r.contrast == 50.0 and r.tol_outer == 1e-2 for r in table2)
    table3 = suite_rows("table3")
    assert [(r.space, r.nt) for r in table3] == [((32, 32), 20)] * 3
    assert [r.gamma for r in table3] == [1.0, 0.1, 0.01]
    table4 = suite_rows("table4")
    assert [(r.space, r.nt) for r in table4] == [((32, 32), 10), ((64, 64), 20),
                                                 ((128, 128), 40)]
    table6 = suite_rows("table6")
    assert [(r.space, r.nt) for r in table6] == [((64, 64), 20)] * 3
    table7 = suite_rows("table7-3d")
    assert [(r.space, r.nt) for r in table7] == [((16, 16, 16), 10),
                                                 ((32, 32, 32), 10),
                                                 ((64, 64, 64), 10)]
    assert all(r.contrast == 30.0 and r.gamma == 0.1 for r in table7)


def test_bench_deterministic_given_seed(workdir):
    import momt.bench as bench_mod
    from momt.bench import BenchRow

    rows = [BenchRow("matrix", (8, 8), 3, 10.0, 0.1, 1e-3)]
    a = bench_mod.run_rows(rows, seed=7)
    b = bench_mod.run_rows(rows, seed=7)
    for ra, rb in zip(a, b):
        ra.pop("wall_time")
        rb.pop("wall_time")
        assert ra == rb


def test_bench_flags_failed_rows(workdir, monkeypatch):
    import momt.bench as bench_mod
    from momt.errors import LineSearchFailed

    def boom(row):
        raise LineSearchFailed("synthetic failure")

    monkeypatch.setattr(bench_mod, "build_problem", boom)
    records = bench_mod.run_rows(bench_mod.suite_rows("table3")[:2])
    assert all(r["status"].startswith("error") for r in records)
    paths = bench_mod.write_report(records, workdir / "rep2", "table3")
    assert paths["csv"].exists()


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv("MOMT_THREADS", "notanumber")
    with pytest.raises(SystemExit):
        from momt.cli import _apply_thread_cap
        _apply_thread_cap()
    monkeypatch.setenv("MOMT_THREADS", "1")
    from momt.cli import _apply_thread_cap
    _apply_thread_cap()

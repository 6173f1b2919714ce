import numpy as np
import pytest

from conftest import make_matrix_problem
from momt import Graph, Grid, SolverConfig, VectorProblem, solve
from momt import blocks as bk
from momt.frames import (
    build_frames,
    frame_masses,
    glyph_rows,
    read_ppm,
    write_glyph_csv,
    write_ppm_frames,
)
from momt.generators import gen_vector_disk_to_quarters


@pytest.fixture(scope="module")
def matrix_solution():
    problem = make_matrix_problem(seed=1, space=(4, 3), nt=4, n=3)
    return problem, solve(problem, SolverConfig(tol_outer=1e-4))


@pytest.fixture(scope="module")
def vector_solution():
    rho0, rho1 = gen_vector_disk_to_quarters(8, 8, contrast=10.0)
    problem = VectorProblem(Graph.complete_k3(), Grid.unit((8, 8), 4), 0.05,
                            rho0, rho1)
    return problem, solve(problem, SolverConfig(tol_outer=1e-4))


class TestFrameSet:
    def test_time_samples_cover_unit_interval(self, matrix_solution):
        problem, res = matrix_solution
        frames = build_frames(problem, res.state)
        nt = problem.grid.nt
        assert frames.n_frames == nt + 1
        assert np.allclose(frames.times, np.arange(nt + 1) / nt)
        assert np.array_equal(frames.fields[0], problem.rho0)
        assert np.array_equal(frames.fields[-1], problem.rho1)

    def test_masses_within_solver_tolerance(self, matrix_solution):
        problem, res = matrix_solution
        frames = build_frames(problem, res.state)
        assert np.abs(frame_masses(frames) - 1.0).max() <= 1e-4

    def test_vector_masses(self, vector_solution):
        problem, res = vector_solution
        frames = build_frames(problem, res.state)
        assert np.abs(frame_masses(frames) - 1.0).max() <= 1e-4


class TestGlyphCsv:
    def test_isotropic_blocks_equal_eigenvalues(self, tmp_path):
        problem = make_matrix_problem(seed=2, space=(3,), nt=3, n=3)
        iso = np.broadcast_to(bk.pack(np.eye(3) / 9.0), problem.rho0.shape).copy()
        prob = type(problem)(problem.basis, problem.grid, problem.gamma, iso, iso,
                             validate=False)
        from momt import initialize
        frames = build_frames(prob, initialize(prob))
        header, rows = glyph_rows(frames)
        assert header[:2] == ["i", "t"]
        for row in rows:
            evs = [float(x) for x in row[2:5]]
            assert max(evs) - min(evs) <= 1e-12

    def test_csv_written_with_sorted_eigenvalues(self, matrix_solution, tmp_path):
        problem, res = matrix_solution
        frames = build_frames(problem, res.state)
        path = write_glyph_csv(frames, tmp_path / "glyphs.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "i,j,t,ev1,ev2,ev3,azimuth,elevation"
        cells = problem.grid.n_space
        assert len(lines) == 1 + frames.n_frames * cells
        sample = lines[1].split(",")
        evs = [float(x) for x in sample[3:6]]
        assert evs == sorted(evs, reverse=True)


class TestGlyph3d:
    def test_three_index_rows(self, tmp_path):
        problem = make_matrix_problem(seed=3, space=(2, 3, 2), nt=2, n=2)
        from momt import initialize
        frames = build_frames(problem, initialize(problem))
        path = write_glyph_csv(frames, tmp_path / "g3.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "i,j,k,t,ev1,ev2,theta"
        assert len(lines) == 1 + frames.n_frames * problem.grid.n_space


class TestPpm:
    def test_round_trip_within_quantization(self, vector_solution, tmp_path):
        problem, res = vector_solution
        frames = build_frames(problem, res.state)
        paths = write_ppm_frames(frames, tmp_path)
        assert len(paths) == frames.n_frames
        peak = frames.fields.max()
        for frame, path in enumerate(paths):
            img = read_ppm(path).astype(float) * peak / 255.0
            assert np.abs(img - frames.fields[frame]).max() <= peak / 255.0

    def test_white_disk_renders_gray(self, vector_solution, tmp_path):
        problem, res = vector_solution
        frames = build_frames(problem, res.state)
        path = write_ppm_frames(frames, tmp_path, prefix="white")[0]
        img = read_ppm(path).astype(int)
        spread = img.max(axis=-1) - img.min(axis=-1)
        assert spread.max() <= 1  # equal channels up to quantization

    def test_matrix_frames_rejected(self, matrix_solution, tmp_path):
        problem, res = matrix_solution
        frames = build_frames(problem, res.state)
        with pytest.raises(ValueError):
            write_ppm_frames(frames, tmp_path)


class TestFigures:
    def test_montages_and_convergence_render(self, matrix_solution, vector_solution,
                                             tmp_path):
        from momt.plots import save_convergence_figure, save_frame_montage

        problem, res = matrix_solution
        out = save_frame_montage(build_frames(problem, res.state),
                                 tmp_path / "matrix.png")
        assert out.stat().st_size > 0
        problem, res = vector_solution
        out = save_frame_montage(build_frames(problem, res.state),
                                 tmp_path / "vector.png")
        assert out.stat().st_size > 0
        out = save_convergence_figure(res.trace, tmp_path / "conv.png")
        assert out.stat().st_size > 0

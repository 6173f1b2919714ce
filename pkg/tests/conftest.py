import numpy as np
import pytest

from momt import Graph, Grid, MatrixProblem, OperatorBasis, VectorProblem
from momt import blocks as bk


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_spd_field(rng, lead, n, scale=0.25, base=1.0):
    """Smoothly varying SPD blocks, well conditioned."""
    a = rng.normal(size=(*lead, n, n)) * scale
    gram = np.einsum("...ab,...cb->...ac", a, a)
    bump = base * (1.0 + 0.4 * np.sin(np.arange(np.prod(lead)).reshape(lead)))
    return gram + bump[..., None, None] * np.eye(n)


def matrix_marginals(rng, grid, n):
    out = []
    for _ in range(2):
        full = random_spd_field(rng, grid.space, n)
        mass = np.trace(full, axis1=-2, axis2=-1).sum() * grid.h_vol
        out.append(bk.pack(full / mass))
    return out


def vector_marginals(rng, grid, n):
    out = []
    for _ in range(2):
        rho = 0.5 + rng.random((*grid.space, n))
        out.append(rho / (rho.sum() * grid.h_vol))
    return out


def make_matrix_problem(seed=0, space=(4,), nt=3, n=2, gamma=0.05):
    rng = np.random.default_rng(seed)
    grid = Grid.unit(space, nt)
    rho0, rho1 = matrix_marginals(rng, grid, n)
    return MatrixProblem(OperatorBasis.default(n), grid, gamma, rho0, rho1)


def make_vector_problem(seed=0, space=(4,), nt=3, graph=None, gamma=0.05):
    rng = np.random.default_rng(seed)
    grid = Grid.unit(space, nt)
    graph = graph or Graph.complete_k3()
    rho0, rho1 = vector_marginals(rng, grid, graph.n)
    return VectorProblem(graph, grid, gamma, rho0, rho1)


def random_state(problem, rng, scale=0.3):
    """Interpolated density plus random momentum/flux/multiplier."""
    from momt import initialize

    state = initialize(problem)
    state.ps = tuple(rng.normal(size=p.shape) * scale for p in state.ps)
    state.u = rng.normal(size=state.u.shape) * scale
    state.lam = rng.normal(size=state.lam.shape) * scale
    return state

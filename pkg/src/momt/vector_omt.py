"""Vector-valued transport on a graph: incidence structure, operators, KKT.

Densities are componentwise-positive n-vectors per cell; mass moves in space
through per-channel momenta and between channels through edge fluxes whose
divergence is taken with the graph incidence matrix.  Reciprocals are always
taken before averaging.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .blocks import spd_inverse
from .errors import InvalidProblem, NonPositiveDensity, ShapeMismatch
from .grid import (
    Grid,
    Layout,
    block_diag_coo,
    cell_avg_to_faces,
    cell_diff_to_faces,
    diff_csr,
    face_avg_to_cells,
    face_diff_to_cells,
    grid_kron,
)

MASS_TOL = 1e-12
_POS_FLOOR = 1e-300


def _recip(x: np.ndarray) -> np.ndarray:
    if x.size and float(x.min()) <= _POS_FLOOR:
        raise NonPositiveDensity("componentwise reciprocal of a non-positive value")
    return 1.0 / x


@dataclass(frozen=True)
class Graph:
    """Connected weighted graph via its signed node-edge incidence matrix."""

    incidence: np.ndarray  # (n, N), one +1 and one -1 per column
    weights: np.ndarray    # (N,) positive

    def __post_init__(self):
        inc = np.asarray(self.incidence, dtype=float)
        if inc.ndim != 2:
            raise ShapeMismatch("incidence must be a 2D node-by-edge matrix")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (inc.shape[1],):
            raise ShapeMismatch("one weight per edge required")
        if np.any(w <= 0):
            raise InvalidProblem("edge weights must be positive")
        plus = inc == 1.0
        minus = inc == -1.0
        if not (np.all(plus.sum(axis=0) == 1) and np.all(minus.sum(axis=0) == 1)
                and np.all(plus | minus | (inc == 0.0))):
            raise InvalidProblem("each incidence column needs exactly one +1 and one -1")
        if not self._connected(plus, minus):
            raise InvalidProblem("graph must be connected")
        object.__setattr__(self, "incidence", inc)
        object.__setattr__(self, "weights", w)

    @staticmethod
    def _connected(plus, minus) -> bool:
        n = plus.shape[0]
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = [0]
        src = plus.argmax(axis=0)
        dst = minus.argmax(axis=0)
        adj = [[] for _ in range(n)]
        for a, b in zip(src, dst):
            adj[a].append(b)
            adj[b].append(a)
        while frontier:
            i = frontier.pop()
            for j in adj[i]:
                if not seen[j]:
                    seen[j] = True
                    frontier.append(j)
        return bool(seen.all())

    @classmethod
    def complete_k3(cls) -> "Graph":
        inc = np.array([[1.0, 1.0, 0.0], [-1.0, 0.0, 1.0], [0.0, -1.0, -1.0]])
        return cls(inc, np.ones(3))

    @classmethod
    def edgeless(cls, n: int = 1) -> "Graph":
        if n != 1:
            raise InvalidProblem("an edgeless graph is connected only for n = 1")
        return cls(np.zeros((1, 0)), np.zeros(0))

    @property
    def n(self) -> int:
        return self.incidence.shape[0]

    @property
    def N(self) -> int:
        return self.incidence.shape[1]

    @cached_property
    def sqrt_weights(self) -> np.ndarray:
        return np.sqrt(self.weights)

    @cached_property
    def sources(self) -> np.ndarray:
        """The 0/1 source part of the incidence matrix."""
        return (self.incidence == 1.0).astype(float)

    @cached_property
    def sinks(self) -> np.ndarray:
        """The 0/1 sink part (sources minus incidence)."""
        return (self.incidence == -1.0).astype(float)

    def grad(self, x: np.ndarray) -> np.ndarray:
        """Graph gradient W^{1/2} D^T x; zero on constant vectors."""
        if x.shape[-1] != self.n:
            raise ShapeMismatch(f"expected trailing node axis {self.n}, got {x.shape}")
        return np.einsum("...i,ie->...e", x, self.incidence) * self.sqrt_weights

    def div(self, y: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`grad`: D W^{1/2} y."""
        if y.shape[-1] != self.N:
            raise ShapeMismatch(f"expected trailing edge axis {self.N}, got {y.shape}")
        return np.einsum("...e,ie->...i", y * self.sqrt_weights, self.incidence)

    def laplacian(self) -> np.ndarray:
        return self.incidence @ np.diag(self.weights) @ self.incidence.T


def graph_grad(graph: Graph, x: np.ndarray) -> np.ndarray:
    return graph.grad(x)


def graph_div(graph: Graph, y: np.ndarray) -> np.ndarray:
    return graph.div(y)


@dataclass
class VectorHessianBlocks:
    """Diagonal momentum/flux scalings plus dense per-face density blocks."""

    p_diag: list[np.ndarray]   # per direction, positive entries (map 2*x*m)
    u_diag: np.ndarray         # per cell-edge, positive (map 2*gamma*x*m)
    g_rep: np.ndarray          # (nt-1, *space, n, n)
    shift: float


class VectorHessianInverse:
    def __init__(self, problem: "VectorProblem", p_inv, u_inv, g_inv):
        self.problem = problem
        self.p_inv = p_inv
        self.u_inv = u_inv
        self.g_inv = g_inv

    def apply_fields(self, ps, rho, u):
        out_ps = tuple(p * self.p_inv[d] for d, p in enumerate(ps))
        out_rho = np.einsum("...ij,...j->...i", self.g_inv, rho)
        return out_ps, out_rho, u * self.u_inv

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        parts = [(pi.reshape(-1, 1, 1), 1) for pi in self.p_inv]
        n = self.problem.graph.n
        parts.append((self.g_inv.reshape(-1, n, n), 1))
        parts.append((self.u_inv.reshape(-1, 1, 1), 1))
        return block_diag_coo(parts)


class VectorProblem:
    """Discretized vector-valued transport instance on a staggered grid."""

    kind = "vector"

    def __init__(self, graph: Graph, grid: Grid, gamma: float,
                 rho0: np.ndarray, rho1: np.ndarray, *, validate: bool = True):
        self.graph = graph
        self.grid = grid
        self.gamma = float(gamma)
        self.rho0 = np.asarray(rho0, dtype=float)
        self.rho1 = np.asarray(rho1, dtype=float)
        if validate:
            self._validate()
        self._setup()

    def _validate(self):
        want = (*self.grid.space, self.graph.n)
        if self.rho0.shape != want or self.rho1.shape != want:
            raise ShapeMismatch(f"marginals must have shape {want}")
        if self.gamma <= 0:
            raise InvalidProblem("gamma must be positive")
        if self.grid.dim > 2:
            raise InvalidProblem("vector problems support 1D and 2D grids")
        for name, rho in (("rho0", self.rho0), ("rho1", self.rho1)):
            if np.any(rho <= 0):
                raise InvalidProblem(f"{name} must be strictly positive componentwise")
            mass = float(rho.sum()) * self.grid.h_vol
            if abs(mass - 1.0) > MASS_TOL:
                raise InvalidProblem(f"{name} mass is {mass!r}, expected 1")

    def _setup(self):
        grid, g = self.grid, self.graph
        a = np.zeros((*grid.cell_lead(), g.n))
        a[0] += 0.5 * _recip(self.rho0)
        a[grid.nt - 1] += 0.5 * _recip(self.rho1)
        self.a = a
        b = np.zeros((*grid.cell_lead(), g.n))
        b[0] += self.rho0 / grid.ht
        b[grid.nt - 1] -= self.rho1 / grid.ht
        self.b = b
        c = np.zeros((*grid.cell_lead(), g.N))
        for slot, rho in ((0, self.rho0), (grid.nt - 1, self.rho1)):
            c[slot] += 0.5 * (_recip(self._edge_rho(rho, g.sinks))
                              + _recip(self._edge_rho(rho, g.sources)))
        self.c = c

    @staticmethod
    def _edge_rho(rho: np.ndarray, part: np.ndarray) -> np.ndarray:
        return np.einsum("...i,ie->...e", rho, part)

    def with_gamma(self, gamma: float) -> "VectorProblem":
        return VectorProblem(self.graph, self.grid, gamma, self.rho0, self.rho1,
                             validate=False)

    # -- vector layout ---------------------------------------------------------

    @cached_property
    def layout(self) -> Layout:
        n, N = self.graph.n, self.graph.N
        entries = [(f"p{d}", (*self.grid.p_lead(d), n)) for d in range(self.grid.dim)]
        entries.append(("rho", (*self.grid.rho_lead(), n)))
        entries.append(("u", (*self.grid.cell_lead(), N)))
        return Layout(entries)

    @property
    def lam_dim(self) -> int:
        return self.grid.n_cells * self.graph.n

    def w_to_vec(self, ps, rho, u) -> np.ndarray:
        fields = {f"p{d}": p for d, p in enumerate(ps)}
        fields["rho"] = rho
        fields["u"] = u
        return self.layout.pack(fields)

    def vec_to_w(self, vec: np.ndarray):
        f = self.layout.unpack(vec)
        return tuple(f[f"p{d}"] for d in range(self.grid.dim)), f["rho"], f["u"]

    def lam_to_vec(self, lam: np.ndarray) -> np.ndarray:
        return lam.ravel()

    def vec_to_lam(self, vec: np.ndarray) -> np.ndarray:
        return vec.reshape(*self.grid.cell_lead(), self.graph.n)

    @cached_property
    def b_vec(self) -> np.ndarray:
        return self.b.ravel()

    @cached_property
    def b_norm(self) -> float:
        return float(np.linalg.norm(self.b_vec))

    @cached_property
    def schur_null_vec(self) -> np.ndarray:
        """Unit vector spanning ker(D^*): the all-ones multiplier field
        (incidence columns sum to zero, differences kill constants)."""
        vec = np.ones(self.lam_dim)
        return vec / np.linalg.norm(vec)

    # -- constraint -------------------------------------------------------------

    def apply_constraint(self, ps, rho, u) -> np.ndarray:
        """D1 p + D2 rho + D3 u at cell centers, without b."""
        grid = self.grid
        acc = np.zeros((*grid.cell_lead(), self.graph.n))
        for d, p in enumerate(ps):
            acc += face_diff_to_cells(p, 1 + d, grid.hs[d], grid.space[d])
        acc += face_diff_to_cells(rho, 0, grid.ht, grid.nt)
        acc -= self.graph.div(u)
        return acc

    def constraint_residual(self, ps, rho, u) -> np.ndarray:
        return self.apply_constraint(ps, rho, u) - self.b

    @cached_property
    def constraint_ops(self) -> list[sp.csr_matrix]:
        grid, g = self.grid, self.graph
        eye_n = sp.identity(g.n, format="csr")
        ops = [
            grid_kron(grid, {1 + d: diff_csr(grid.space[d], grid.hs[d])}, eye_n)
            for d in range(grid.dim)
        ]
        ops.append(grid_kron(grid, {0: diff_csr(grid.nt, grid.ht)}, eye_n))
        d3 = sp.csr_matrix(-g.incidence * g.sqrt_weights[None, :])
        ops.append(grid_kron(grid, {}, d3))
        return ops

    @cached_property
    def constraint_matrix(self) -> sp.csr_matrix:
        return sp.hstack(self.constraint_ops, format="csr")

    # -- cost and derivatives -----------------------------------------------------

    def _node_weight(self, rho: np.ndarray) -> np.ndarray:
        """A2(1/rho) + a at cell centers."""
        return face_avg_to_cells(_recip(rho), 0, self.grid.nt) + self.a

    def _edge_weight(self, rho: np.ndarray) -> np.ndarray:
        """A2(1/(D2^T rho) + 1/(D1^T rho)) + c at cell centers."""
        g = self.graph
        face_val = (_recip(self._edge_rho(rho, g.sinks))
                    + _recip(self._edge_rho(rho, g.sources)))
        return face_avg_to_cells(face_val, 0, self.grid.nt) + self.c

    def _p_sq_cells(self, ps) -> np.ndarray:
        grid = self.grid
        acc = np.zeros((*grid.cell_lead(), self.graph.n))
        for d, p in enumerate(ps):
            acc += face_avg_to_cells(p * p, 1 + d, grid.space[d])
        return acc

    def cost(self, ps, rho, u) -> float:
        val = float(np.sum(self._p_sq_cells(ps) * self._node_weight(rho)))
        val += self.gamma * float(np.sum(u * u * self._edge_weight(rho)))
        return val * self.grid.h_vol * self.grid.ht

    def kkt_residual(self, state):
        grid, g = self.grid, self.graph
        m_node = self._node_weight(state.rho)
        m_edge = self._edge_weight(state.rho)
        gps = tuple(
            cell_diff_to_faces(state.lam, 1 + d, grid.hs[d])
            + 2.0 * p * cell_avg_to_faces(m_node, 1 + d)
            for d, p in enumerate(state.ps)
        )
        cp = cell_avg_to_faces(self._p_sq_cells(state.ps), 0)
        cu = cell_avg_to_faces(state.u * state.u, 0)
        grho = cell_diff_to_faces(state.lam, 0, grid.ht) - cp * _recip(state.rho) ** 2
        for part in (g.sinks, g.sources):
            edge = self._edge_rho(state.rho, part)
            grho -= self.gamma * np.einsum("...e,ie->...i", cu * _recip(edge) ** 2, part)
        gu = -g.grad(state.lam) + 2.0 * self.gamma * state.u * m_edge
        glam = self.constraint_residual(state.ps, state.rho, state.u)
        return gps, grho, gu, glam

    def residual_vecs(self, state):
        gps, grho, gu, glam = self.kkt_residual(state)
        gw = self.layout.pack(
            {**{f"p{d}": gg for d, gg in enumerate(gps)}, "rho": grho, "u": gu}
        )
        return gw, glam.ravel()

    def hessian_blocks(self, state, shift: float | None = None, *,
                       shift_floor: float = 1e-8, shift_scale: float = 1e-8) -> VectorHessianBlocks:
        grid, g = self.grid, self.graph
        m_node = self._node_weight(state.rho)
        p_diag = [cell_avg_to_faces(m_node, 1 + d) for d in range(grid.dim)]
        u_diag = self._edge_weight(state.rho)
        cp = cell_avg_to_faces(self._p_sq_cells(state.ps), 0)
        cu = cell_avg_to_faces(state.u * state.u, 0)
        g_rep = np.zeros((*grid.rho_lead(), g.n, g.n))
        diag_idx = np.arange(g.n)
        g_rep[..., diag_idx, diag_idx] = 2.0 * cp * _recip(state.rho) ** 3
        for part in (g.sinks, g.sources):
            edge = self._edge_rho(state.rho, part)
            vals = 2.0 * self.gamma * cu * _recip(edge) ** 3
            g_rep += np.einsum("ie,...e,je->...ij", part, vals, part)
        if shift is None:
            diag = np.einsum("...cc->...c", g_rep)
            mean_diag = float(diag.mean()) if diag.size else 0.0
            shift = max(shift_floor, shift_scale * mean_diag)
        return VectorHessianBlocks(p_diag, u_diag, g_rep, float(shift))

    def hessian_inverse(self, hb: VectorHessianBlocks) -> VectorHessianInverse:
        p_inv = [1.0 / (2.0 * d) for d in hb.p_diag]
        u_inv = 1.0 / (2.0 * self.gamma * hb.u_diag) if hb.u_diag.size else hb.u_diag
        g_inv = spd_inverse(hb.g_rep + hb.shift * np.eye(self.graph.n))
        return VectorHessianInverse(self, p_inv, u_inv, g_inv)

    # -- state helpers -------------------------------------------------------------

    def zero_fields(self):
        grid, g = self.grid, self.graph
        ps = tuple(np.zeros((*grid.p_lead(d), g.n)) for d in range(grid.dim))
        u = np.zeros((*grid.cell_lead(), g.N))
        lam = np.zeros((*grid.cell_lead(), g.n))
        return ps, u, lam

    def interpolated_rho(self) -> np.ndarray:
        grid = self.grid
        w = (np.arange(1, grid.nt) / grid.nt).reshape(-1, *([1] * (grid.dim + 1)))
        return (1.0 - w) * self.rho0 + w * self.rho1

    def max_step(self, rho: np.ndarray, drho: np.ndarray, bisections: int = 12) -> float:
        """Exact largest step in (0, 1] keeping the density positive."""
        danger = drho < 0
        if not danger.any():
            return 1.0
        ratio = float(np.min(rho[danger] / -drho[danger]))
        return min(1.0, ratio)

    def positivity_ok(self, rho: np.ndarray) -> bool:
        return bool(np.all(rho > 0))

"""Outer inexact-SQP loop with positivity-safeguarded line search.

Each step builds the block-diagonal Hessian approximation, reduces the saddle
system by its Schur complement, solves the reduced system with IC(0)-PCG,
back-substitutes the primal step, and line-searches both the primal and the
multiplier update with a fraction-to-boundary rule keeping every density
block inside the positive cone.  The merit function is the 2-norm of the full
KKT residual; accepted steps decrease it strictly.

The driver is problem-agnostic: a problem object supplies the grid, gamma,
``zero_fields``/``interpolated_rho`` for the start, ``residual_vecs`` and
``cost``, ``hessian_blocks``/``hessian_inverse``, the sparse
``constraint_ops``/``constraint_matrix``, flat-vector conversions
(``vec_to_w``, ``vec_to_lam``, ``w_to_vec``), the cone safeguards
(``max_step``, ``positivity_ok``), ``b_norm``, and ``schur_null_vec``.
Both problem kinds implement exactly this surface.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import LineSearchFailed, PositivityLost
from .kkt import assemble_schur, back_substitute, ic_factorize, pcg

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    """Outer/inner tolerances and globalization parameters.

    ``tol_inner=None`` resolves to 1e-3 for matrix problems and 1e-2 for
    vector problems; ``gamma=None`` keeps the problem's own value.  With
    ``normalized`` the convergence test divides the KKT residual norm by
    ``||b||``; disable it to reproduce absolute-tolerance tables.
    """

    tol_outer: float = 1e-3
    tol_inner: float | None = None
    max_outer: int = 200
    max_inner: int = 500
    gamma: float | None = None
    normalized: bool = True
    ls_backtrack: float = 0.5
    ls_c1: float = 1e-4
    tau_boundary: float = 0.995
    ls_max_backtracks: int = 30
    boundary_bisections: int = 12
    shift_floor: float = 1e-8
    shift_scale: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.tol_outer < 1.0:
            raise ValueError("tol_outer must lie in (0, 1)")
        if self.tol_inner is not None and not 0.0 < self.tol_inner < 1.0:
            raise ValueError("tol_inner must lie in (0, 1)")
        if not 0.0 < self.tau_boundary < 1.0:
            raise ValueError("fraction-to-boundary factor must lie in (0, 1)")

    def resolved_tol_inner(self, kind: str) -> float:
        if self.tol_inner is not None:
            return self.tol_inner
        return 1e-3 if kind == "matrix" else 1e-2


@dataclass
class SqpState:
    """Primal fields (p per direction, rho, u) plus the multiplier field."""

    ps: tuple[np.ndarray, ...]
    rho: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    iteration: int = 0
    merit_history: list[float] = field(default_factory=list)


@dataclass
class StepReport:
    iteration: int
    merit: float
    cost: float
    alpha: float
    pcg_iters: int
    pcg_residual: float
    pcg_converged: bool
    shift: float
    backtracks: int


@dataclass
class SolveResult:
    state: SqpState
    distance2: float
    trace: list[StepReport]
    converged: bool
    iterations: int
    final_residual: float

    @property
    def total_pcg_iters(self) -> int:
        return sum(r.pcg_iters for r in self.trace)


def initialize(problem) -> SqpState:
    """Zero momentum/flux/multiplier; density linear in time between the
    marginals (a convex combination, hence positive)."""
    if problem.grid.nt < 2:
        raise ValueError("solving requires nt >= 2 (no interior density unknowns)")
    ps, u, lam = problem.zero_fields()
    return SqpState(ps=ps, rho=problem.interpolated_rho(), u=u, lam=lam)


def _merit_of(gw: np.ndarray, glam: np.ndarray) -> float:
    return float(np.sqrt(gw @ gw + glam @ glam))


def sqp_step(problem, state: SqpState, config: SolverConfig,
             residuals: tuple[np.ndarray, np.ndarray] | None = None,
             tol_inner: float | None = None):
    """One inexact SQP step; returns (new state, report, new residual vecs)."""
    gw, glam = problem.residual_vecs(state) if residuals is None else residuals
    merit = _merit_of(gw, glam)
    blocks = problem.hessian_blocks(state, shift_floor=config.shift_floor,
                                    shift_scale=config.shift_scale)
    hinv = problem.hessian_inverse(blocks)
    ainv = hinv.matrix
    d_ops = problem.constraint_ops
    d_mat = problem.constraint_matrix
    schur = assemble_schur(d_ops, ainv)
    rhs = glam - d_mat @ (ainv @ gw)
    # the reduced system is consistent-singular along ker(D^*); remove the
    # rounding-level component so PCG is not asked to resolve the gauge
    null = problem.schur_null_vec
    rhs = rhs - null * (null @ rhs)
    factor = ic_factorize(schur)
    inner_tol = config.resolved_tol_inner(problem.kind) if tol_inner is None else tol_inner
    sol = pcg(schur, factor, rhs, tol_rel=inner_tol, max_iter=config.max_inner)
    dlam_vec = sol.x
    dw_vec = back_substitute(ainv, d_ops, dlam_vec, gw)

    dps, drho, du = problem.vec_to_w(dw_vec)
    dlam = problem.vec_to_lam(dlam_vec)
    alpha_max = problem.max_step(state.rho, drho, config.boundary_bisections)
    alpha = min(1.0, config.tau_boundary * alpha_max)

    accepted = None
    backtracks = 0
    while backtracks <= config.ls_max_backtracks:
        trial = SqpState(
            ps=tuple(p + alpha * dp for p, dp in zip(state.ps, dps)),
            rho=state.rho + alpha * drho,
            u=state.u + alpha * du,
            lam=state.lam + alpha * dlam,
            iteration=state.iteration + 1,
            merit_history=state.merit_history,
        )
        trial_res = problem.residual_vecs(trial)
        trial_merit = _merit_of(*trial_res)
        if trial_merit <= (1.0 - config.ls_c1 * alpha) * merit:
            accepted = (trial, trial_res, trial_merit)
            break
        alpha *= config.ls_backtrack
        backtracks += 1
    if accepted is None:
        raise LineSearchFailed(
            f"no sufficient decrease after {config.ls_max_backtracks} backtracks "
            f"(iteration {state.iteration}, merit {merit:.3e}, "
            f"alpha_max {alpha_max:.3e}, pcg residual {sol.residual:.3e})"
        )
    new_state, new_res, new_merit = accepted
    if not problem.positivity_ok(new_state.rho):
        raise PositivityLost(f"density left the cone at iteration {new_state.iteration}")
    new_state.merit_history = state.merit_history + [new_merit]
    report = StepReport(
        iteration=new_state.iteration,
        merit=new_merit,
        cost=problem.cost(new_state.ps, new_state.rho, new_state.u),
        alpha=alpha,
        pcg_iters=sol.iterations,
        pcg_residual=sol.residual,
        pcg_converged=sol.converged,
        shift=blocks.shift,
        backtracks=backtracks,
    )
    return new_state, report, new_res


def solve(problem, config: SolverConfig | None = None) -> SolveResult:
    """Run the SQP iteration to the outer tolerance.

    Convergence: ``||KKT residual|| / ||b|| <= tol_outer`` (or the absolute
    norm with ``normalized=False``).  A cap-out is reported via
    ``converged=False`` with the full trace, not an exception.
    """
    config = config or SolverConfig()
    if config.gamma is not None and config.gamma != problem.gamma:
        problem = problem.with_gamma(config.gamma)
    state = initialize(problem)
    scale = problem.b_norm if config.normalized else 1.0
    tol_inner = config.resolved_tol_inner(problem.kind)
    trace: list[StepReport] = []
    residuals = problem.residual_vecs(state)
    merit = _merit_of(*residuals)
    unconverged_streak = 0
    converged = False
    while True:
        if merit <= config.tol_outer * scale:
            converged = True
            break
        if state.iteration >= config.max_outer:
            log.warning("SQP hit max_outer=%d with residual %.3e", config.max_outer,
                        merit / scale)
            break
        state, report, residuals = sqp_step(problem, state, config,
                                            residuals=residuals, tol_inner=tol_inner)
        merit = report.merit
        trace.append(report)
        log.info("sqp iter %3d merit %.6e cost %.6e alpha %.3f pcg %d",
                 report.iteration, report.merit, report.cost, report.alpha,
                 report.pcg_iters)
        if report.pcg_converged:
            unconverged_streak = 0
        else:
            unconverged_streak += 1
            log.warning("inner solve unconverged (residual %.2e) at iteration %d",
                        report.pcg_residual, report.iteration)
            if unconverged_streak >= 2 and tol_inner < 0.1:
                tol_inner = min(10.0 * tol_inner, 0.1)
                unconverged_streak = 0
                log.warning("relaxing inner tolerance to %.1e", tol_inner)
    return SolveResult(
        state=state,
        distance2=problem.cost(state.ps, state.rho, state.u),
        trace=trace,
        converged=converged,
        iterations=state.iteration,
        final_residual=merit / scale,
    )

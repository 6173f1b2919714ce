"""Exception types shared across the solver."""


class MomtError(Exception):
    """Base class for all solver errors."""


class ShapeMismatch(MomtError):
    """Operands do not conform (grid, block, or staggering shapes disagree)."""


class NotPositiveDefinite(MomtError):
    """A block or operator expected to be SPD failed its Cholesky probe."""


class NonPositiveDensity(MomtError):
    """A componentwise-positive density has a non-positive entry."""


class InvalidProblem(MomtError):
    """Problem data rejected at construction/load time."""


class FactorizationFailed(MomtError):
    """Incomplete Cholesky broke down at every diagonal shift."""


class BreakdownDetected(MomtError):
    """PCG met non-positive curvature or an indefinite preconditioner."""


class LineSearchFailed(MomtError):
    """Backtracking exhausted without sufficient merit decrease."""


class PositivityLost(MomtError):
    """Internal guard: an accepted iterate left the positive cone."""


class InvalidContrast(MomtError):
    """Requested density contrast is not attainable (must exceed 1)."""

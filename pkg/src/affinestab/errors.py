"""Exception hierarchy shared by all modules."""


class AffineStabError(Exception):
    """Base class for every error raised by the package."""


class GridMismatchError(AffineStabError, ValueError):
    """Two fields (or a field and an operator) live on different grids."""


class CoercivityError(AffineStabError, ValueError):
    """Diffusion coefficient is not uniformly positive."""


class SingularOperatorError(AffineStabError, ValueError):
    """Robin coefficient vanishes identically, the operator has a kernel."""


class PreconditionError(AffineStabError, ValueError):
    """An input violates a documented precondition."""


class InsufficientDataError(AffineStabError, ValueError):
    """Too few usable samples to fit a rate."""


class ConsistencyError(AffineStabError, RuntimeError):
    """An internal invariant was violated (e.g. negative primal gap)."""


class NonconvergenceError(AffineStabError, RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    ``history`` holds the residual (or gap) sequence that was observed.
    """

    def __init__(self, message, history=None, residual=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []
        self.residual = residual

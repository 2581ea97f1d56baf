"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid construction parameters (grids, dimensions, sample counts)."""


class GridMismatchError(ValueError):
    """Operands live on different time or space grids."""


class PredictabilityError(RuntimeError):
    """An integrand reads randomness revealed after its evaluation node."""


class CFLError(RuntimeError):
    """Explicit scheme stability condition violated."""


class RangeEscapeError(RuntimeError):
    """A conservation-law solution left the configured kinetic window."""


class SolverBlowupError(RuntimeError):
    """NaN or infinity detected during time stepping."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite values at step {step}")

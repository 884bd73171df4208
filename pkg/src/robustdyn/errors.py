"""Exception hierarchy shared across the package."""


class RobustDynError(Exception):
    """Base class for all package errors."""


class DimensionError(RobustDynError, ValueError):
    """Shapes or grids of two objects do not agree."""


class DomainError(RobustDynError, ValueError):
    """An argument lies outside its admissible range."""


class SupportError(RobustDynError, ValueError):
    """A reference measure vanishes where mass is required."""


class NumericalError(RobustDynError, ArithmeticError):
    """A computation produced NaN or an unusable infinity."""


class ConvergenceError(RobustDynError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    Parameters
    ----------
    message : str
        Human readable description.
    residual : float
        Last value of the stopping statistic.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = float(residual)
        self.iterations = int(iterations)


class InfeasibleError(RobustDynError, RuntimeError):
    """No point satisfying the constraints was found."""

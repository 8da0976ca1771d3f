"""Exception hierarchy shared by all modules."""


class SkibaPathError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SkibaPathError, ValueError):
    """An array has the wrong length or shape."""


class AdmissibilityError(SkibaPathError, ValueError):
    """A canonical point has non-positive states or non-negative costates."""


class SingularControlError(AdmissibilityError):
    """A costate component is zero, so the maximizing control is undefined.

    Attributes
    ----------
    node : int
        Index of the first offending node.
    """

    def __init__(self, node, message=None):
        self.node = int(node)
        super().__init__(message or f"costate vanishes at node {self.node}")


class NumericalError(SkibaPathError, ArithmeticError):
    """An eigen decomposition or linear solve failed."""


class NonConvergenceError(SkibaPathError, RuntimeError):
    """Newton iteration did not reach the requested tolerance.

    Attributes
    ----------
    residual : float
        Last residual norm reached.
    """

    def __init__(self, message, residual=float("nan")):
        self.residual = float(residual)
        super().__init__(f"{message} (last residual {self.residual:.3e})")


class StallError(NonConvergenceError):
    """Continuation step width fell below its minimum.

    ``partial`` carries whatever was computed before the stall.
    """

    def __init__(self, message, residual=float("nan"), partial=None):
        self.partial = partial
        super().__init__(message, residual)


class SpecificationError(SkibaPathError, ValueError):
    """A homotopy or run configuration is inconsistent before any solve."""


class BranchSwitchError(SkibaPathError, RuntimeError):
    """Branch switching fell back onto the original branch."""

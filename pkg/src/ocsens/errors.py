"""Exception types raised by ocsens."""


class OcsensError(Exception):
    """Base class for all library errors."""


class ProblemFormatError(OcsensError):
    """Structurally malformed problem data (ragged arrays, missing fields)."""


class InvalidProblemError(OcsensError):
    """A problem failed validation and cannot be assembled or solved."""

    def __init__(self, report):
        self.report = report
        failed = ", ".join(c.name for c in report.checks if not c.passed)
        super().__init__(f"problem failed validation: {failed}")


class NotDifferentiable(OcsensError):
    """A convex expression has an atom at its kink; use ``subdiff_expr``."""


class NotSmooth(OcsensError):
    """Some stage cost is not differentiable at the solution."""


class PointNotInSet(OcsensError):
    """The base point of a normal cone is outside the set."""


class UnsupportedCombination(OcsensError):
    """Set operation not available for the given representations."""


class DimCapExceeded(OcsensError):
    """Exact polyhedral computation exceeds the dimension or vertex caps."""


class ConeCheckFailed(OcsensError):
    """A multiplier from the adjoint recursion is not in its normal cone."""

    def __init__(self, message, checks=None):
        super().__init__(message)
        self.checks = checks or []


class RegularityError(OcsensError):
    """The kernel inclusion ker T* c ker M* fails."""

    def __init__(self, message, kernel_vector=None):
        super().__init__(message)
        self.kernel_vector = kernel_vector

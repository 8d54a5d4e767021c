"""Exception types shared across the package."""


class LpplsError(Exception):
    """Base class for all package-specific errors."""


class DomainError(LpplsError):
    """Evaluation outside the model's domain, e.g. t >= t_c or log of a non-positive value."""


class SingularSystem(LpplsError):
    """Linear subproblem is numerically degenerate (condition number above the guard)."""


class DegenerateRange(LpplsError):
    """A vector with zero spread cannot be min-max scaled."""


class AllStartsFailed(LpplsError):
    """Every multi-start point of the nonlinear fit failed on its first evaluation."""


class ShapeMismatch(LpplsError):
    """Tensor or vector shapes are inconsistent for the requested operation."""


class NonFinite(LpplsError):
    """A loss or parameter became NaN/Inf during optimization."""


class ParseError(LpplsError):
    """Malformed input file; carries a line number where possible."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonMonotoneDates(LpplsError):
    """Input dates are not strictly increasing."""


class VersionError(LpplsError):
    """Serialized artifact carries an unsupported format version."""


class FormatError(LpplsError):
    """Serialized artifact is corrupt or truncated."""

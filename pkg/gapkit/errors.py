"""
errors.py
Exception and warning types raised by gapkit.
"""


class GapkitError(Exception):
    """Root of every error raised on purpose by gapkit."""


class ValidationError(GapkitError, ValueError):
    """An input violates a documented precondition or file format."""


class ShapeMismatchError(ValidationError):
    """Two inputs that must agree in shape do not."""


class GraphError(ValidationError):
    """A similarity graph cannot support a Laplacian (isolated nodes)."""


class NumericsError(GapkitError, ArithmeticError):
    """A numerical kernel met a degenerate or out-of-contract input."""


class SpectrumError(NumericsError):
    """Fewer non-null eigenpairs exist than were requested."""


class ReportError(GapkitError):
    """Metric reports cannot be merged or decoded."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped on its iteration cap."""

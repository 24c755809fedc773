"""Exception types raised across the package."""


class AffineHarmonicError(Exception):
    """Base class for all errors raised by this package."""


class NotPositiveDefinite(AffineHarmonicError, ValueError):
    """A matrix expected to be symmetric positive definite is not."""


class NewtonDiverged(AffineHarmonicError, RuntimeError):
    """Damped Newton iteration failed to reach its tolerance."""


class DomainViolation(AffineHarmonicError, ValueError):
    """A point lies outside the valid region of a chart."""


class DegeneratePlane(AffineHarmonicError, ValueError):
    """Two tangent vectors do not span a 2-plane."""


class ShapeMismatch(AffineHarmonicError, ValueError):
    """Array shapes are inconsistent with the grid or chart."""


class MonodromyMismatch(AffineHarmonicError, ValueError):
    """Two maps do not share the same equivariance data."""


class CFLViolation(AffineHarmonicError, ValueError):
    """Time step exceeds the explicit stability bound."""


class ChartExit(AffineHarmonicError, RuntimeError):
    """A node left the valid region of the target chart during a flow.

    Attributes
    ----------
    node : int
        Flat index of the first offending node.
    value : numpy.ndarray
        Its value in the cover chart.
    trace : FlowTrace or None
        Monitor samples recorded before the failure, when raised by ``run_flow``.
    """

    def __init__(self, message, node=None, value=None, trace=None):
        super().__init__(message)
        self.node = node
        self.value = value
        self.trace = trace


class ConfigError(AffineHarmonicError, ValueError):
    """A scenario configuration could not be parsed or is inconsistent."""

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field

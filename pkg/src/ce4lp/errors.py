"""Exception types shared across the package."""


class Ce4lpError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(Ce4lpError):
    """Array shapes of a problem or query do not line up."""


class NumericalFailure(Ce4lpError):
    """The solver lost feasibility or stalled beyond its iteration budget."""


class ParseError(Ce4lpError):
    """An input file or query document is malformed."""


class UnsupportedFeature(Ce4lpError):
    """The input uses a feature outside the supported fragment."""


class AssumptionViolated(Ce4lpError):
    """A query violates a structural assumption of the requested method."""


class MissingPoint(Ce4lpError):
    """A required reference point (for example the present optimum) is absent."""


class NoMutableParameters(Ce4lpError):
    """Query generation selected columns that contain no mutable entries."""


class UnboundedOperand(Ce4lpError):
    """A bilinear product operand has no finite box, so no relaxation exists."""

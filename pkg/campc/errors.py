"""Exception hierarchy shared by the library and the command-line harness."""


class CampcError(Exception):
    """Base class for every error raised by campc."""


class DimensionError(CampcError, ValueError):
    """Operands have incompatible shapes."""


class GeometryError(CampcError):
    """A set is empty, unbounded or lower-dimensional where that is not allowed."""


class WeightError(CampcError):
    """Cost weights violate Q, P >= 0 or R > 0."""


class ConvergenceError(CampcError):
    """An iterative construction hit its iteration cap without a certificate."""


class InfeasibleError(CampcError):
    """A QP (or the initial state of a run) is infeasible."""


class ExactnessViolation(CampcError):
    """The reduced problem disagrees with the full problem."""


class ArtifactMismatchError(CampcError):
    """An offline artifact does not belong to the problem it is used with."""


class ConfigError(CampcError):
    """Invalid or unknown configuration values."""

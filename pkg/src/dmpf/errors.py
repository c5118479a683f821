"""Exception types shared across the library."""


class DmpfError(Exception):
    """Base class for all library errors."""


class NotPositiveDefinite(DmpfError):
    """Covariance could not be factorized, even after jitter."""


class EmptyEnsemble(DmpfError):
    """Moment estimation was asked for zero points."""


class SingleParticle(DmpfError):
    """Sample covariance needs at least two points."""


class AllWeightsZero(DmpfError):
    """Every importance weight underflowed to zero (all log-weights -inf)."""


class NumericalDomain(DmpfError):
    """A model map was evaluated outside its numerical domain."""


class FilterDiverged(DmpfError):
    """A filter run failed part-way; carries the completed steps so callers
    can flush partial output before reporting the failure."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class ShapeMismatch(DmpfError):
    """Array arguments have incompatible shapes."""


class ConfigError(DmpfError):
    """Invalid experiment configuration (unknown key, bad value, bad model)."""

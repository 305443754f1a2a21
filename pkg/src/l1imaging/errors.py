"""Exception hierarchy shared by all modules."""


class ImagingError(Exception):
    """Base class for all package errors."""


class ConfigError(ImagingError, ValueError):
    """Invalid geometry, scene, or experiment configuration."""


class SingularityError(ImagingError, ValueError):
    """A Green's function was evaluated at coincident points."""


class NearSingularError(ImagingError):
    """A linear system is too ill-conditioned to solve reliably."""


class DimensionError(ImagingError, ValueError):
    """Operand shapes do not match."""


class InfeasibleError(ImagingError):
    """An optimization constraint cannot be met within tolerance."""


class NonConvergenceError(ImagingError):
    """An iterative method hit its iteration cap."""


class HypothesisError(ImagingError):
    """A theorem's hypothesis does not hold for the given input."""


class CoverInfeasibleError(HypothesisError):
    """No disjoint ball cover of the sources exists at the requested radius."""

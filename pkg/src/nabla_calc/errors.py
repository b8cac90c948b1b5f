"""Exception types raised across the package.

Everything derives from NablaCalcError so callers can catch broadly; the
subclasses name the contract that was violated.
"""


class NablaCalcError(Exception):
    """Base class for all package errors."""


class SingularMetric(NablaCalcError):
    """Metric eigenvalue fell below the positivity floor at some grid point."""


class NonpositiveWeight(NablaCalcError):
    """A weight or normalizer field is not strictly positive on the grid."""


class ChartMismatch(NablaCalcError):
    """Objects built over different chart grids were combined."""


class SupportViolation(NablaCalcError):
    """A section does not vanish on the margin band a stencil needs."""


class ShapeMismatch(NablaCalcError):
    """Array shape or fiber/slot rank is inconsistent with the operation."""


class EmptyCovering(NablaCalcError):
    """A covering has no members or fails to cover the section support."""


class ExponentMismatch(NablaCalcError):
    """Integrability exponents do not satisfy the required relation."""


class DegenerateEmbedding(NablaCalcError):
    """An embedding differential loses rank at some grid point."""


class NonadmissibleWeight(NablaCalcError):
    """Operation requires an admissible weight pair and the flag is absent."""


class ConfigError(NablaCalcError):
    """Scenario configuration is malformed or inconsistent."""


class ResolutionError(NablaCalcError):
    """Requested grid spacing or size cannot be realized on the chart box."""


class IoError(NablaCalcError):
    """Report emission or scenario file access failed."""

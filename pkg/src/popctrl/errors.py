"""Exception taxonomy shared across the package.

CLI exit codes: ConfigError subclasses map to exit 2 (bad or inconsistent
configuration), NumericalError subclasses to exit 3 (a computation failed),
anything else to 1.
"""


class PopctrlError(Exception):
    """Base class for all package errors."""


class ConfigError(PopctrlError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class InvalidConfig(ConfigError):
    pass


class NonFiniteSample(ConfigError):
    """A rate function returned NaN or inf at an interior sample."""


class GridMismatch(ConfigError):
    """Two fields or a field and an operator live on different grids."""


class EmptyRegion(ConfigError):
    """A control region contains no grid node."""


class KernelMismatch(ConfigError):
    """Fertility kernel variant does not match the requested operation."""


class GeometryMismatch(ConfigError):
    """Paired specs for a kernel comparison differ in geometry."""


class NumericalError(PopctrlError):
    """A numerical procedure failed (CLI exit code 3)."""


class QuadratureFailure(NumericalError):
    """A quadrature did not converge to the requested tolerance."""


class InversionFailure(NumericalError):
    """Monotone inversion failed to bracket despite a sign change."""


class OutOfRange(NumericalError):
    """Query outside the tabulated or admissible range."""


class SingularSystem(NumericalError):
    """A tridiagonal/banded solve broke down."""


class OracleTooLarge(NumericalError):
    """The monolithic oracle would exceed its unknown budget."""


class MissingCriticalSize(NumericalError):
    """A vanishing check needs a critical size that does not exist."""

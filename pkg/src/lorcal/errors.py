"""Exception taxonomy shared across modules."""


class LorcalError(Exception):
    """Base class for package errors."""


class ConstructionError(LorcalError):
    """Metric descriptor produced an inadmissible model (e.g. non-SPD spatial part)."""


class ValidationError(LorcalError):
    """Descriptor or argument fails a precondition that is checkable up front."""


class DomainError(LorcalError):
    """Point outside the chart domain, or function evaluated off its domain."""


class CapabilityError(LorcalError):
    """Model lacks the derivative order or structure an operation requires."""


class IntegrationError(LorcalError):
    """Geodesic integration failed (step collapse, NaN)."""


class LogMapError(LorcalError):
    """Newton shooting for the logarithm map did not converge; point treated as unreachable."""


class ConfigurationError(LorcalError):
    """Run configuration inconsistent (empty Carleman shell, bad grid, ...)."""


class ResolutionError(LorcalError):
    """Quadrature or mesh too coarse for the requested frequency."""


class InstabilityError(LorcalError):
    """Time stepping produced NaN/overflow."""


class SupportError(ConfigurationError):
    """Boundary data support leaks outside the window required by the construction."""

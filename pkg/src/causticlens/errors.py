"""Exception types raised across the package."""


class CausticError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CausticError, ValueError):
    pass


class DegenerateFaceError(CausticError):
    pass


class TotalInternalReflection(CausticError):
    def __init__(self, message="total internal reflection", face=None):
        super().__init__(message if face is None else f"{message} at face {face}")
        self.face = face


class AssumptionViolation(CausticError):
    """Refracted direction behind the front surface (non-positive z)."""


class ProjectionFailure(CausticError):
    def __init__(self, face=None):
        super().__init__(f"ray parallel to the receptive plane (face {face})")
        self.face = face


class InvalidHeightField(CausticError):
    """A projected triangle has non-positive signed area."""


class ZeroTotalFlux(CausticError):
    pass


class DegenerateEdge(CausticError):
    pass


class ZeroFluxCell(CausticError):
    pass


class InfeasibleStart(CausticError):
    pass

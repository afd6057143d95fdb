"""Exception types raised across the package."""


class RHDError(Exception):
    """Base class for all package errors."""


class ParamError(RHDError, ValueError):
    def __init__(self, field, msg=None):
        self.field = field
        super().__init__(msg or field)


class DomainError(RHDError, ValueError):
    pass


class PositivityError(RHDError):
    pass


class RootFailure(RHDError):
    pass


class DegenerateSpectrum(RHDError):
    """Eigenvalue branches coalesce; the projector formulas are unusable."""

    def __init__(self, point):
        self.point = point
        super().__init__(f"coalescing branches at |xi|={point.xi_norm:.6g}")


class FitError(RHDError):
    pass


class QuadratureError(RHDError):
    pass


class StabilityError(RHDError):
    pass


class EquivalenceError(RHDError):
    pass


class ConfigError(RHDError):
    def __init__(self, key, line=None, msg=None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{msg or 'invalid key'}: {key}{where}")

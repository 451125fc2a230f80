"""
Exception hierarchy for polyrelax.
Each error carries the CLI exit code it maps to.
"""


class PolyrelaxError(Exception):
    """Base class for all library errors."""

    exit_code: int = 3


class ConfigError(PolyrelaxError):
    """Invalid configuration, parameters or CLI usage."""

    exit_code = 2


class UnknownModelError(ConfigError):
    pass


class ModelParameterError(ConfigError):
    """Family parameters violate the convexity / sign requirements of the family."""


class NonFiniteInputError(PolyrelaxError, ValueError):
    pass


class GridError(PolyrelaxError):
    """Grid too small, or two fields living on different grids."""


class NoConvergence(PolyrelaxError):
    """Damped Newton did not reach the residual tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), failures: int = 0):
        super().__init__(message)
        self.residual = residual
        self.failures = failures


class CFLViolation(PolyrelaxError):
    pass


class DeterminantFloorError(PolyrelaxError):
    def __init__(self, message: str, cell: int = -1, value: float = float("nan"), t: float = float("nan")):
        super().__init__(message)
        self.cell = cell
        self.value = value
        self.t = t


class VacuumError(PolyrelaxError):
    pass


class GradientBlowUp(PolyrelaxError):
    pass


class FoldOverError(PolyrelaxError):
    pass


class InsufficientSnapshots(PolyrelaxError):
    pass

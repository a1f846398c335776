class AirFLError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(AirFLError, ValueError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class DimensionError(AirFLError, ValueError):
    pass


class DomainError(AirFLError, ValueError):
    pass


class NumericalError(AirFLError, ArithmeticError):
    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message if step is None else f"{message} (step {step})")


class FormatError(AirFLError, ValueError):
    pass


class ConvergenceError(AirFLError, RuntimeError):
    """Iterative solver ran out of budget; carries the best iterate found."""

    def __init__(self, message: str, best=None, residual: float = float("nan")):
        self.best = best
        self.residual = residual
        super().__init__(f"{message} (residual={residual:.3e})")

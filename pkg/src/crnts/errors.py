"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration (simulator, optimizer or sweep)."""


class SimulatorError(RuntimeError):
    """A simulator run failed; ``payload`` carries whatever raw output was seen."""

    def __init__(self, message: str, payload: str = ""):
        super().__init__(message)
        self.payload = payload


class NumericalError(ArithmeticError):
    """Covariance factorization failed even after jitter escalation."""


class SizeError(ValueError):
    """A candidate grid is larger than the configured sampling cap."""


class ExhaustionError(RuntimeError):
    """Every candidate on the grid has already been evaluated."""

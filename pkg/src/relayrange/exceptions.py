"""Exception hierarchy shared by all modules."""


class RelayRangeError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(RelayRangeError, ValueError):
    """Degenerate or colliding atom positions."""


class EliminationError(RelayRangeError):
    """The relay matrix cannot be inverted reliably."""

    def __init__(self, message, condition_number=float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class ResonanceError(EliminationError):
    """Exact Förster resonance where a 1/Δ expression is undefined."""


class InsufficientDataError(RelayRangeError, ValueError):
    """Too few usable points for a power-law fit."""


class IntegrationError(RelayRangeError):
    """The time integrator failed or drifted beyond tolerance."""


class DimensionError(RelayRangeError, ValueError):
    """Hilbert-space dimension above the configured cap, or mismatched operands."""


class ConfigError(RelayRangeError, ValueError):
    """Invalid run configuration."""

"""Exception types shared across the package."""


class ZoomsatError(Exception):
    """Base class for all package errors."""


class NumericDomainError(ZoomsatError, ValueError):
    """Non-finite or otherwise invalid numeric input."""


class ConfigError(ZoomsatError, ValueError):
    """Malformed or inconsistent scenario configuration."""


class HistoryUnderflowError(ZoomsatError):
    """A delayed read reached before the recorded history."""


class QuantizerOverflowError(ZoomsatError):
    """State left its quantization cell; contraction design is inconsistent."""

    def __init__(self, msg, time=None, k=None):
        super().__init__(msg)
        self.time = time
        self.k = k


class DivergenceError(ZoomsatError):
    """Simulation produced a non-finite state."""

    def __init__(self, msg, time=None):
        super().__init__(msg)
        self.time = time


class ProtocolError(ZoomsatError):
    """Packet arrived out of order or with an unexpected index."""


class DecodeError(ZoomsatError, ValueError):
    """Malformed packet bytes."""


class InsufficientDataError(ZoomsatError, ValueError):
    """Not enough data to compute the requested statistic."""


class TraceLookupError(ZoomsatError, KeyError):
    """Requested time is off-grid or outside the recorded span."""

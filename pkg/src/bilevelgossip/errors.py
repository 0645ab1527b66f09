"""Exception types shared across the package.

The CLI maps ConfigError to exit code 1 (bad input) and everything else
derived from SimulationError to exit code 2 (runtime failure).
"""


class SimulationError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(SimulationError, ValueError):
    """Invalid configuration, topology spec, or compressor spec."""


class DataError(SimulationError, ValueError):
    """Malformed dataset file or impossible data split."""


class SchemaError(SimulationError, ValueError):
    """Log file does not match the metrics CSV schema."""


class NumericError(SimulationError, FloatingPointError):
    """NaN or infinity encountered during a run."""


class DivergenceError(SimulationError, RuntimeError):
    """Inner solver gap grows instead of shrinking; step sizes likely too large."""

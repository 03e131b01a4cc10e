"""Exception hierarchy shared across the engine.

The CLI maps these onto process exit codes: usage/config problems exit 1,
data problems exit 2, numeric failures exit 3.
"""


class GsvitError(Exception):
    pass


class ShapeError(GsvitError):
    """Operand shapes are incompatible for an operation."""


class ConfigError(GsvitError):
    """Invalid configuration value, unknown key, or inconsistent model spec."""


class DataError(GsvitError):
    """Corpus, checkpoint, or label data violates the documented layout."""


class CheckpointError(DataError):
    """Checkpoint file is structurally invalid or corrupted."""


class NumericsError(GsvitError):
    """Non-finite value where a finite one is required (e.g. NaN loss)."""

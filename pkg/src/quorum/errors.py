"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ParameterError means the caller asked
for something invalid (exit 1), DataError means the inputs themselves are
bad (exit 2), NumericalError means a computation failed to converge or
produced non-finite values (exit 3).
"""


class ParameterError(ValueError):
    """A configuration value or function argument is out of range."""


class DimensionError(ValueError):
    """An array has the wrong shape, or is empty where data is required."""


class DataError(ValueError):
    """Input data is malformed: bad files, unknown labels, non-finite values."""


class CalibrationError(DataError):
    """Threshold calibration received scores it cannot work with."""


class NumericalError(RuntimeError):
    """A numerical procedure failed: singular system, non-convergence, overflow."""

"""Exception types raised at the package's contract boundaries."""


class GcldrError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(GcldrError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ConfigError(GcldrError, ValueError):
    """Invalid configuration value or inconsistent config sections."""


class LabelError(GcldrError, ValueError):
    """Class label outside the declared range."""


class DegenerateBatchError(GcldrError, ValueError):
    """Batch too small for an operation (e.g. batchnorm with one row)."""


class DegeneratePosteriorError(GcldrError, ArithmeticError):
    """A posterior row collapsed to all zeros after flooring."""


class DivergenceError(GcldrError, ArithmeticError):
    """NaN/Inf appeared in a loss or gradient during training."""


class DataFormatError(GcldrError, ValueError):
    """Malformed dataset file; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line

"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/contract problems are
validation errors (1), anything about the input data is a data error (2).
"""


class LayoutLMError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(LayoutLMError, ValueError):
    """A caller violated a documented precondition."""


class ShapeError(ContractError):
    """Tensor shapes do not agree."""


class ConfigError(LayoutLMError, ValueError):
    """Invalid or inconsistent configuration.

    ``violations`` lists every problem found, not just the first one.
    """

    def __init__(self, message, violations=None):
        self.violations = list(violations or [])
        if self.violations:
            message = message + "\n" + "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(message)


class CompatibilityError(ConfigError):
    """Two configurations that must agree do not."""


class DataError(LayoutLMError):
    """Input data is missing, inconsistent or out of range."""


class ParseError(DataError):
    """Markup or container could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(DataError):
    """A binary container does not follow its declared layout."""


class CheckpointError(DataError):
    """Base class for checkpoint container problems."""


class CorruptCheckpointError(CheckpointError):
    """Checksum mismatch or bad magic bytes."""


class TruncatedCheckpointError(CheckpointError):
    """The file ends before the declared payload."""


class UnsupportedVersionError(CheckpointError):
    """The container was written by an unknown format version."""

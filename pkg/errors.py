"""Exception hierarchy shared by every metacl module.

The CLI maps ``ConfigError`` to exit code 2 and ``DataError`` to exit code 3;
anything else that escapes is a bug and exits 1.
"""
from __future__ import annotations


class MetaclError(Exception):
    """Base class for all errors raised on purpose by this project."""


# ---------------------------------------------------------------------------
# Configuration / contract errors
# ---------------------------------------------------------------------------

class ConfigError(MetaclError):
    """Invalid configuration value, unknown key or impossible setup."""


class ContractError(MetaclError):
    """A caller broke an operation's precondition."""


class ShapeError(ContractError):
    """Operand shapes do not agree."""


class EmptyBatchError(ContractError):
    """A loss or vote was asked to average over nothing."""


class StateError(ContractError):
    """Out-of-order task, duplicate prior snapshot or empty prior store."""


class NumericError(MetaclError):
    """Non-finite values where finite ones are required."""


# ---------------------------------------------------------------------------
# Data / file-format errors
# ---------------------------------------------------------------------------

class DataError(MetaclError):
    """The data cannot support the requested experiment."""


class DataFormatError(DataError):
    """A container or checkpoint file is malformed."""


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class LengthMismatchError(DataFormatError):
    pass


class LabelRangeError(DataFormatError):
    pass

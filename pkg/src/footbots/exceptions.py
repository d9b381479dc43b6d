"""Exception hierarchy shared across the package."""


class FootBotsError(Exception):
    """Base class for all package errors."""


class DimensionError(FootBotsError, ValueError):
    """Operand or array shapes are incompatible."""


class ContractError(FootBotsError, ValueError):
    """A precondition of an operation is violated."""


class NonFiniteError(FootBotsError, FloatingPointError):
    """NaN or Inf values were produced."""


class DataError(FootBotsError, ValueError):
    """Input data is inconsistent with the requested operation."""


class ConfigMismatchError(FootBotsError, ValueError):
    """A checkpoint or dataset does not match the expected configuration."""


class FileFormatError(FootBotsError, ValueError):
    """Base class for dataset and checkpoint decoding errors."""


class VersionError(FileFormatError):
    """Unknown magic bytes or an unsupported format version."""


class RecordShapeError(FileFormatError):
    """A stored record disagrees with the dimensions declared in its header."""


class TruncatedFileError(FileFormatError):
    """The file ended in the middle of a record."""

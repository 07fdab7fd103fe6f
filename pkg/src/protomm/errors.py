"""Exception hierarchy shared by all protomm modules."""


class ProtommError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ProtommError):
    """Operands disagree on vector dimension or matrix shape."""


class NumericError(ProtommError):
    """A numeric precondition failed (non-finite input, zero vector, bad temperature)."""


class SizeError(ProtommError):
    """A problem instance exceeds a hard size limit."""


class EmptyInputError(ProtommError):
    """An operation received an empty sample where points are required."""


class ConfigError(ProtommError):
    """Invalid or inconsistent configuration."""


class FormatError(ProtommError):
    """A file does not conform to its on-disk format."""


class VersionError(FormatError):
    """A file declares an unsupported format version."""


class IoError(ProtommError):
    """An output path could not be written."""

"""Exception hierarchy shared by the codec modules.

The CLI maps these onto exit codes: usage errors exit 2, format/digest
errors exit 3, numeric failures exit 4.
"""


class CodecError(Exception):
    """Base class for all codec errors."""


class FormatError(CodecError):
    """Unsupported or malformed file content (WAV encoding, bad magic, ...)."""


class DigestError(FormatError):
    """Artifact was produced under a different configuration."""


class FramingError(FormatError):
    """Bitstream payload is truncated or has an inconsistent length."""


class ConfigError(CodecError):
    """Invalid or inconsistent configuration values."""


class NumericError(CodecError):
    """Non-finite values where finite ones are required."""

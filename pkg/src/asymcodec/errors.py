"""Exception hierarchy shared by every part of the codec.

Each class carries the process exit code the CLI maps it to.
"""


class CodecError(Exception):
    exit_code = 1


class UsageError(CodecError):
    exit_code = 2


class ConfigurationError(CodecError):
    exit_code = 2


class AssemblyError(ConfigurationError):
    pass


class EvaluationError(UsageError):
    pass


class InputError(UsageError):
    pass


class FormatError(CodecError):
    exit_code = 3


class UnsupportedFormatError(FormatError):
    pass


class CodingError(FormatError):
    """Symbol outside a table's alphabet, or an inconsistent table."""


class DecodingError(CodingError):
    """Payload is truncated or does not match the supplied tables."""


class NumericError(CodecError):
    exit_code = 4

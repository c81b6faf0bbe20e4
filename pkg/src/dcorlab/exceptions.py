"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 for bad data, 3 for numerical degeneracy.
"""


class DcorError(Exception):
    """Base class for all errors raised by dcorlab."""

    exit_code = 2


class InvalidInputError(DcorError, ValueError):
    """Input contains non-finite entries or violates a precondition."""


class DimensionError(DcorError, ValueError):
    """Sample counts or matrix sizes do not agree."""


class SizeError(DcorError, ValueError):
    """Too few samples for the requested statistic."""


class DegenerateError(DcorError, ArithmeticError):
    """A variance, norm or denominator vanished."""

    exit_code = 3


class DumpFormatError(DcorError):
    """Base class for feature-dump decoding errors."""

    code = "dump-format"


class BadMagicError(DumpFormatError):
    code = "bad-magic"


class VersionMismatchError(DumpFormatError):
    code = "version-mismatch"


class TruncatedPayloadError(DumpFormatError):
    code = "truncated"

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class OffsetOverlapError(DumpFormatError):
    code = "offset-overlap"


class ManifestError(DumpFormatError):
    code = "bad-manifest"

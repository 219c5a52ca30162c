"""Exception hierarchy shared by all subpackages.

The CLI maps these onto exit codes: validation problems exit 1, I/O and
file-format problems exit 2, numerical failures exit 3.
"""


class SuperradError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SuperradError, ValueError):
    """Input violates a documented precondition."""


class CapacityError(ValidationError):
    """Requested problem size exceeds a hard cap."""


class DegenerateGeometryError(ValidationError):
    """Two emitters coincide and no Dicke-limit override was given."""


class EmptyChannelError(ValidationError):
    """A correlation channel has no tags."""


class InsufficientDataError(ValidationError):
    """Too few counts for a meaningful fit."""


class InsufficientDecayError(InsufficientDataError):
    """Histogram holds counts but no resolvable decay above background."""


class FitError(SuperradError, RuntimeError):
    """Nonlinear fit did not converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TimeTagFormatError(SuperradError):
    """Malformed time-tag bytes. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagicError(TimeTagFormatError):
    pass


class UnsupportedVersionError(TimeTagFormatError):
    pass


class UnsupportedTimeUnitError(TimeTagFormatError):
    pass


class TruncatedStreamError(TimeTagFormatError):
    def __init__(self, message, offset, expected=None, found=None):
        super().__init__(message, offset)
        self.expected = expected
        self.found = found


class UnsortedStreamError(TimeTagFormatError):
    pass


class InvalidChannelError(TimeTagFormatError):
    pass

"""Exception hierarchy shared by every module."""


class EdgeObbError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(EdgeObbError, ValueError):
    """Malformed file header or unsupported file variant."""


class UnsupportedError(EdgeObbError, ValueError):
    """Well-formed input that uses a feature we do not handle."""


class TruncatedDataError(EdgeObbError, OSError):
    """File payload shorter than its header promises."""


class DimensionError(EdgeObbError, ValueError):
    """Raster or tensor dimensions violate an operation's precondition."""


class GeometryError(EdgeObbError, ValueError):
    """Degenerate or inconsistent geometric input."""


class EmptyTemplateError(EdgeObbError, ValueError):
    """A template image produced no edge points."""


class DegenerateInputError(EdgeObbError, ValueError):
    """Input that leaves an objective undefined (e.g. no edge points)."""


class SpecError(EdgeObbError, ValueError):
    """Scene specification violates its invariants."""


class ArgumentError(EdgeObbError, ValueError):
    """Invalid argument combination."""


class ParseError(EdgeObbError, ValueError):
    """Text annotation could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

"""Exception types raised across the toolkit."""


class DiffeoError(Exception):
    """Base class for data errors (CLI exit code 2)."""


class GridMismatchError(DiffeoError, ValueError):
    pass


class InvalidFieldError(DiffeoError, ValueError):
    pass


class NiftiError(DiffeoError):
    """Malformed or unsupported NIfTI input."""


class BadMagicError(NiftiError):
    pass


class HeaderSizeError(NiftiError):
    pass


class UnsupportedDatatypeError(NiftiError):
    pass


class TruncatedDataError(NiftiError):
    pass


class UnsupportedDimensionsError(NiftiError):
    pass

"""Exception types shared across the package."""


class ScarQuantError(Exception):
    """Base class for all package errors."""


class NiftiFormatError(ScarQuantError):
    """Malformed or unsupported NIfTI stream."""


class UnsupportedDatatypeError(NiftiFormatError):
    """NIfTI datatype code outside the supported set {2, 4, 16}."""


class RangeError(ScarQuantError):
    """Values not representable in the requested target type."""


class DegenerateInputError(ScarQuantError):
    """Input has no usable signal (constant slice, empty mask, ...)."""


class ConfigError(ScarQuantError):
    """Invalid pipeline configuration."""


class InputError(ScarQuantError):
    """Missing or unreadable input file/directory."""

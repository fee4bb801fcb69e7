"""Exception types shared across the package.

File-format problems map to distinct classes so callers (and tests) can
tell corruption modes apart without parsing messages.
"""


class HosvdKitError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(HosvdKitError, ValueError):
    """Operand shapes are inconsistent with the requested operation."""


class BadMagicError(HosvdKitError, ValueError):
    """A file does not start with the expected magic bytes."""


class UnsupportedVersionError(HosvdKitError, ValueError):
    """A file carries a format version this build does not understand."""


class UnsupportedMaxvalError(HosvdKitError, ValueError):
    """A netpbm header declares a maxval other than 255."""


class TruncatedFileError(HosvdKitError, ValueError):
    """A file ends before its declared payload does."""


class ChecksumMismatchError(HosvdKitError, ValueError):
    """Stored CRC32 does not match the file contents."""


class SvdConvergenceError(HosvdKitError, ArithmeticError):
    """The SVD iteration failed to converge."""


class TrainingDivergedError(HosvdKitError, ArithmeticError):
    """Network training produced a non-finite loss."""


class DatasetError(HosvdKitError, ValueError):
    """A dataset directory or file is unusable."""

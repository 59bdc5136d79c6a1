"""Exception types shared across the package."""


class NapmonError(Exception):
    """Base class for all napmon errors."""


class BitLengthMismatchError(NapmonError, ValueError):
    """Two patterns (or a pattern and a store) have different bit lengths.

    Almost always means the operands come from different layers.
    """


class ShapeMismatchError(NapmonError, ValueError):
    """Activation array does not match the declared layer shape."""


class NonFiniteActivationError(NapmonError, ValueError):
    """NaN or Inf found in exported activations; indicates a corrupt dump."""


class CalibrationMissingError(NapmonError, ValueError):
    """Per-position binarization requested without fitted thresholds."""


class FormatError(NapmonError):
    """Base class for on-disk format problems."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(FormatError):
    """File carries a format version this build cannot read."""


class TruncatedFileError(FormatError):
    """File ends before the declared payload is complete."""


class SizeMismatchError(FormatError):
    """Declared sample count / shape disagrees with the data file size."""


class ManifestError(FormatError):
    """Dump or monitor manifest is missing or malformed."""


class DanglingStoreError(FormatError):
    """Monitor bundle references a pattern-store file that does not exist."""

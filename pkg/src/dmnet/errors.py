"""Exception types raised across the package."""


class DMNetError(Exception):
    """Base class for all package errors."""


class SpecError(DMNetError):
    """Malformed or inconsistent fold specification."""


class DataError(DMNetError):
    """Dataset content violates an expected contract."""


class SamplingError(DataError):
    """An episode cannot be drawn from the index."""


class SizeError(DMNetError):
    """Input image is too small for the backbone."""


class ShapeError(DMNetError):
    """Tensor shapes do not agree."""


class EmptyMaskError(DMNetError):
    """Masked average pooling was asked to pool over an empty mask."""


class NumericalError(DMNetError):
    """Non-finite values appeared in a computation."""


class ConfigError(DMNetError):
    """Unknown or malformed configuration key."""

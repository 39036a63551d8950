"""Exception types shared across the package."""


class LeafscopeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LeafscopeError, ValueError):
    """Tensor shapes are inconsistent with the requested operation."""


class FormatError(LeafscopeError, ValueError):
    """A serialized file (weights, manifest) is malformed or corrupted."""


class DatasetError(LeafscopeError, RuntimeError):
    """Corpus scanning, splitting, or image loading failed."""

"""Exception hierarchy shared across the package."""


class TagError(Exception):
    """Base class for all package errors."""


class ValidationError(TagError):
    """Malformed input data, files, or arguments."""


class TrainingError(TagError):
    """Runtime failure during optimization (non-finite loss, bad state)."""


class EmptyPoolError(TagError):
    """Anchor has no positive candidates; it is excluded from training."""

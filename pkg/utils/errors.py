"""Common exception base for the augmentation engine."""


class AugmentError(Exception):
    """Base class for every error the engine raises on purpose.

    The command layer maps these to exit code 1; anything else is a bug.
    """


class ConfigError(AugmentError):
    """Raised when a run configuration cannot be assembled or validated."""


class NotFoundError(AugmentError):
    """Raised when a named robot, trajectory or path does not exist."""


class UsageError(AugmentError):
    """Raised for malformed command-line input."""

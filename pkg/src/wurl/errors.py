"""Exception types shared across the package.

Invalid arguments raise the builtin ``ValueError``.
"""


class StateError(RuntimeError):
    """Operation called in a state that does not permit it."""


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class CheckpointError(RuntimeError):
    """A checkpoint file could not be read back."""

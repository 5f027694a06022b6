"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid user-supplied configuration. ``path`` names the offending field."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class InvariantViolation(RuntimeError):
    """An internal model invariant was broken; indicates a bug, not bad input."""

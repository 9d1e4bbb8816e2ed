"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown configuration key."""


class StageError(RuntimeError):
    """A pipeline stage cannot run, e.g. a prerequisite artifact is missing."""


class CheckpointError(RuntimeError):
    """Malformed or truncated tensor checkpoint file."""

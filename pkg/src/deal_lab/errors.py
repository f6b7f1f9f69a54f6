"""Exception types shared across the package (mapped to CLI exit codes)."""


class ConfigError(ValueError):
    """Invalid configuration or arguments."""


class MissingArtifactError(FileNotFoundError):
    """A prerequisite run artifact is absent."""


class NumericError(FloatingPointError):
    """NaN or inf detected in parameters or outputs."""

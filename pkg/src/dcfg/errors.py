"""Shared exception types mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid run configuration or world description (exit code 2)."""


class NumericalError(RuntimeError):
    """Non-finite state, divergence, or other numerical failure (exit code 3)."""


class MissingBaselineError(RuntimeError):
    """Evaluation requested without the required baseline batch (exit code 4)."""

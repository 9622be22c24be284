"""Shared exception types mapped to CLI exit codes."""


class BlastcastError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(BlastcastError):
    """Invalid configuration, unknown option, or contract violation."""

    exit_code = 2


class MissingInputError(BlastcastError):
    """A required input file or directory does not exist."""

    exit_code = 3


class CorruptDatasetError(BlastcastError):
    """Stored dataset disagrees with its manifest."""

    exit_code = 4


class SolverError(BlastcastError):
    """Numerical failure inside the Euler solver."""

    exit_code = 5


class LayoutError(BlastcastError):
    """Procedural layout generation could not satisfy its constraints."""

    exit_code = 5


class TrainingError(BlastcastError):
    """Non-finite loss or another failure inside the training loop."""

    exit_code = 5

"""Exception types shared across the package.

The CLI maps these onto distinct exit codes (see cli.py).
"""


class CbfSynthError(Exception):
    """Base class for package errors."""


class ConfigError(CbfSynthError):
    """Malformed or inconsistent configuration / input file."""


class SamplingError(CbfSynthError):
    """Feasible-region sampling failed (region too thin or empty)."""


class TrainingError(CbfSynthError):
    """Non-finite loss/gradient or other training-time failure."""


class DomainError(CbfSynthError):
    """State outside the region where the dynamics are defined."""


class CheckpointError(CbfSynthError):
    """Checkpoint file malformed, corrupted, or version-incompatible."""

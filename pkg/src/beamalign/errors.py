"""Exception types shared across the package."""


class BeamAlignError(Exception):
    """Base class for all package errors."""


class DimensionError(BeamAlignError, ValueError):
    """Array shapes do not agree."""


class DomainError(BeamAlignError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(BeamAlignError, ValueError):
    """Invalid configuration values or inconsistent settings."""


class DatasetParseError(BeamAlignError, ValueError):
    """A channel dataset file could not be parsed."""


class DegenerateInputError(BeamAlignError, ValueError):
    """Input data too degenerate for the requested operation."""


class CheckpointError(BeamAlignError, ValueError):
    """A model checkpoint is corrupt, of the wrong version, or incompatible."""


class UsageError(BeamAlignError, RuntimeError):
    """An API was called out of order (e.g. backward without a forward cache)."""

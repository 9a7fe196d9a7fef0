"""Exception types shared across the package."""


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(PipelineError, ValueError):
    """Array shape or dimension mismatch."""


class IngestError(PipelineError):
    """A dataset directory or manifest could not be ingested."""


class MergeError(PipelineError):
    """Datasets with incompatible class lists cannot be merged."""


class PartitionError(PipelineError):
    """A partition plan could not be constructed from the given data."""


class TrainingError(PipelineError):
    """Training produced non-finite values or diverged."""


class ModelFormatError(PipelineError):
    """A serialized model is malformed, truncated, or unsupported."""


class ConfigError(PipelineError):
    """A run configuration document is invalid."""

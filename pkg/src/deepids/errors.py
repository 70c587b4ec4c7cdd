"""Exception taxonomy for the toolkit.

The CLI maps these onto exit codes: configuration problems exit 2, data and
state problems exit 3, training divergence exits 4.
"""


class DeepIDSError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DeepIDSError):
    """Invalid configuration value, flag, or key-value file."""


class ShapeError(DeepIDSError):
    """Array shapes incompatible with the requested operation."""


class DegenerateBatchError(ShapeError):
    """Batch statistics requested on fewer than two values per channel."""


class StateError(DeepIDSError):
    """Operation requires state that is not present (e.g. backward before forward)."""


class DataError(DeepIDSError):
    """Base class for dataset and pipeline problems."""


class SchemaError(DataError):
    """CSV header or schema declaration mismatch."""


class IngestError(DataError):
    """Unparseable cell or unreadable input file."""


class EncodeError(DataError):
    """Categorical value outside the declared vocabulary."""


class ImputeError(DataError):
    """Imputation impossible (e.g. a column with no observed values)."""


class CorrelationError(DataError):
    """Correlation undefined (constant column)."""


class ConstantFeatureError(DataError):
    """Scaling impossible because a feature has max == min."""


class StratificationError(DataError):
    """Too few rows (or rows per class) for a stratified split."""


class EmptyDomainError(DataError):
    """A domain or segmentation produced no samples."""


class ScenarioError(DataError):
    """Invalid synthetic attack scenario (out of bounds or overlapping)."""


class EvaluationError(DataError):
    """Evaluation impossible (empty test set, single-class AUC, ...)."""


class TransferError(DeepIDSError):
    """Source and destination layer stacks do not line up for weight transfer."""


class DivergedError(DeepIDSError):
    """Training loss became non-finite."""


class CheckpointError(DeepIDSError):
    """Corrupt, truncated, or version-mismatched checkpoint file."""


class EsdInapplicableWarning(UserWarning):
    """Outlier test skipped because the sample is too small."""

"""Exception hierarchy shared across the package."""


class PoseReferError(Exception):
    """Base class for all errors raised by this package."""


class DatasetError(PoseReferError):
    """Malformed dataset file or violated record invariant."""


class LabelError(PoseReferError):
    """Category label that cannot be normalized."""


class EmptyWindowError(PoseReferError):
    """Temporal pooling window is empty after clamping."""


class EmbeddingError(PoseReferError):
    """Embedding store ingestion or lookup failure."""


class GradientError(PoseReferError):
    """Non-finite gradient encountered during optimization."""


class TrainingError(PoseReferError):
    """Training aborted (non-finite loss or inconsistent inputs)."""


class ConfigMismatchError(PoseReferError):
    """Artifact was produced under a different configuration hash."""


class CliError(PoseReferError):
    """Command-line invocation error (missing files, bad arguments)."""

"""Exception types with user-facing meaning."""


class ConfigurationError(ValueError):
    """A configuration value is structurally invalid (e.g. zero dimension)."""


class UnsupportedModeError(ValueError):
    """The requested compatibility mode is not defined for this operation."""


class UnsupportedBundleError(ValueError):
    """The bundle shape does not satisfy the loss's preconditions."""


class SizeLimitError(ValueError):
    """Input exceeds a hard size bound of an exhaustive algorithm."""


class TrainingAbortedError(RuntimeError):
    """Training stopped because of non-finite gradients or empty batches."""

"""Exception hierarchy shared across the package."""


class RadioMapError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(RadioMapError):
    """Array shapes or grid dimensions are incompatible."""


class ConfigurationError(RadioMapError):
    """A parameter or configuration value is outside its valid range."""


class SelectionError(RadioMapError):
    """Fragment selection could not satisfy its constraints."""


class ConditionError(RadioMapError):
    """A condition set does not match what the model expects."""


class StorageError(RadioMapError):
    """Reading or writing a dataset/checkpoint/image file failed."""


class TrainingError(RadioMapError):
    """Training aborted (for example, the loss became non-finite)."""


class StepError(RadioMapError):
    """A diffusion time step is outside [1, T]."""

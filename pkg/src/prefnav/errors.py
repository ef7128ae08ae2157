class PrefnavError(Exception):
    """Base class for all package errors."""


class ConfigError(PrefnavError, ValueError):
    pass


class ValidationError(PrefnavError, ValueError):
    pass


class BoundsError(ValidationError):
    """A state lies outside the world map."""


class TrainingError(PrefnavError):
    """Training diverged or produced a model that breaks its contract.

    ``log`` carries whatever history was collected before the failure.
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


class PlanningError(PrefnavError):
    pass


class NoMatchError(PrefnavError):
    """Raised when adaptation is requested without a successful extrapolation."""


class CheckpointError(PrefnavError, ValueError):
    pass


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass

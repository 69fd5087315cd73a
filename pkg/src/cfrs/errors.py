"""Exception hierarchy shared by every stage of the pipeline."""


class CfrsError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(CfrsError, ValueError):
    """Invalid parameter or argument combination."""


class ShapeError(CfrsError, ValueError):
    """Tensor or image shape does not match what a layer expects."""


class CalibrationError(CfrsError, ValueError):
    """Score calibration cannot be derived from the given data."""


class ProtocolError(CfrsError, ValueError):
    """Evaluation protocol violated (e.g. empty score list)."""


class IngestionError(CfrsError):
    """Dataset or file on disk does not follow the expected layout."""


class TrainingError(CfrsError, FloatingPointError):
    """Training produced non-finite values."""


class CheckpointError(CfrsError):
    """Checkpoint file is malformed or inconsistent with the network."""


class EnrollmentConflict(CfrsError):
    """A template with this user id already exists."""


class IdentityNotFound(CfrsError, KeyError):
    """No template is enrolled under the claimed user id."""

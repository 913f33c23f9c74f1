from typing import Optional


class SBPlanError(Exception):
    """Base class for every error raised by the planning toolkit"""


class NonFiniteError(SBPlanError, ValueError):
    def __init__(self, dim: int, message: Optional[str] = None):
        self.dim = dim
        super().__init__(message or f"non-finite value in dimension {dim}")


class DatasetFormatError(SBPlanError):
    pass


class VersionMismatchError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class ShapeMismatchError(DatasetFormatError, ValueError):
    pass


class EmptyDatasetError(SBPlanError, ValueError):
    pass


class UnknownMazeError(SBPlanError, KeyError):
    pass


class UnreachableGoalError(SBPlanError):
    pass


class ReferenceDegenerateError(SBPlanError, ValueError):
    pass


class StaleReferenceError(SBPlanError):
    pass


class ScheduleError(SBPlanError, ValueError):
    pass


class NFEError(SBPlanError, ValueError):
    pass


class EngineMismatchError(SBPlanError, ValueError):
    pass


class CheckpointError(SBPlanError):
    pass


class EmptyReportError(SBPlanError, ValueError):
    pass

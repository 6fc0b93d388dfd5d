# errors.py

from enum import Enum
from typing import Any, Optional


class ErrorCode(Enum):
    """Classification of lab failures"""
    SHAPE_MISMATCH = "shape_mismatch"
    NOT_SCALAR = "not_scalar"
    CONFIG_INVALID = "config_invalid"
    WORLD_CONSTRUCTION = "world_construction"
    NOT_A_CHECKPOINT = "not_a_checkpoint"
    UNSUPPORTED_VERSION = "unsupported_version"
    CORRUPT_RECORD = "corrupt_record"
    TRUNCATED_HEADER = "truncated_header"
    LATENT_SHAPE = "latent_shape"
    NON_FINITE_GRADIENT = "non_finite_gradient"
    TRAINING_DIVERGED = "training_diverged"
    INVALID_ARGUMENT = "invalid_argument"


class LabError(Exception):
    """Base error carrying an ErrorCode and a user-facing message"""

    default_code = ErrorCode.INVALID_ARGUMENT

    def __init__(self, message: str, code: Optional[ErrorCode] = None, **details: Any):
        super().__init__(message)
        self.message = message
        self.code = code or self.default_code
        self.details = details

    def __str__(self) -> str:
        return f"[{self.code.value}] {self.message}"


class ShapeError(LabError):
    default_code = ErrorCode.SHAPE_MISMATCH

    def __init__(self, op: str, *shapes: tuple, reason: str = "incompatible shapes"):
        shown = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: {reason} {shown}", op=op, shapes=shapes)
        self.op = op
        self.shapes = shapes


class NotScalarError(LabError):
    default_code = ErrorCode.NOT_SCALAR


class ConfigError(LabError):
    default_code = ErrorCode.CONFIG_INVALID


class WorldBuildError(LabError):
    default_code = ErrorCode.WORLD_CONSTRUCTION


class CheckpointError(LabError):
    """Checkpoint / tensor-record failures; code tells which"""
    default_code = ErrorCode.CORRUPT_RECORD


class LatentShapeError(LabError):
    default_code = ErrorCode.LATENT_SHAPE


class NonFiniteGradientError(LabError):
    default_code = ErrorCode.NON_FINITE_GRADIENT


class TrainingDivergedError(LabError):
    default_code = ErrorCode.TRAINING_DIVERGED

    def __init__(self, message: str, last_good: Any = None, iteration: int = 0):
        super().__init__(message, iteration=iteration)
        self.last_good = last_good
        self.iteration = iteration


class EvaluationError(LabError):
    default_code = ErrorCode.INVALID_ARGUMENT


def describe_error(error: Exception) -> str:
    """Create user-friendly error messages for the command line"""
    if isinstance(error, FileNotFoundError):
        return f"File not found: {error.filename or error}"
    if not isinstance(error, LabError):
        return f"An unexpected error occurred: {error}"

    messages = {
        ErrorCode.NOT_A_CHECKPOINT: f"not a checkpoint: {error.message}",
        ErrorCode.UNSUPPORTED_VERSION: f"Unsupported checkpoint version: {error.message}",
        ErrorCode.CORRUPT_RECORD: f"corrupt record: {error.message}",
        ErrorCode.TRAINING_DIVERGED: f"Training diverged: {error.message}",
    }
    return messages.get(error.code, error.message)

"""
Exception hierarchy shared by every EfficientFCN module.
"""
from typing import Optional, Sequence


class EfficientFCNError(Exception):
    """Base class for all errors raised by this package"""


class DimensionError(EfficientFCNError, ValueError):
    """Raised when tensor shapes do not agree"""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        rendered = " vs ".join(str(s) for s in self.shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class ConfigurationError(EfficientFCNError, ValueError):
    """Raised for invalid model/backbone/decoder configuration"""


class DataValidationError(EfficientFCNError, ValueError):
    """Raised when input data or arguments are outside their allowed range"""


class WeightFormatError(EfficientFCNError):
    """Raised when a weight file cannot be decoded"""

    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        location = f"{path} @ byte {offset}" if path else f"byte {offset}"
        super().__init__(f"{message} ({location})")


class TrainingDivergedError(EfficientFCNError):
    """Raised when the training loss becomes non-finite"""

    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"Training diverged at iteration {iteration}: loss={loss}")


class GradientCheckError(EfficientFCNError):
    """Raised when a gradient check hits a non-finite value"""

    def __init__(self, op_name: str, stage: str):
        self.op_name = op_name
        self.stage = stage
        super().__init__(f"Non-finite value in '{op_name}' during {stage}")


class ArtifactIOError(EfficientFCNError, OSError):
    """Raised when a weight, image, log or report file cannot be read or written"""

    def __init__(self, action: str, path: str, reason: str):
        self.path = path
        super().__init__(f"Cannot {action} '{path}': {reason}")

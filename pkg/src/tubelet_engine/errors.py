"""
Exception hierarchy for the tubelet detection engine
"""

from pathlib import Path
from typing import Optional, Union


class TubeletEngineError(Exception):
    """Base class for every error raised by the engine"""


class GeometryContractError(TubeletEngineError):
    """Tubelets or tubes violate the preconditions of an overlap measure"""


class InvalidAnnotationError(TubeletEngineError):
    """Ground-truth box that cannot be used as a regression target"""


class ShapeMismatchError(TubeletEngineError):
    """Feature volumes, parameters or anchors disagree on dimensions"""


class SceneGenerationError(TubeletEngineError):
    """Scene configuration that cannot be rendered"""


class TrainingDivergedError(TubeletEngineError):
    """Loss became NaN or infinite during training"""

    def __init__(self, step: int, last_finite_loss: Optional[float]):
        self.step = step
        self.last_finite_loss = last_finite_loss
        super().__init__(
            f"Training diverged at step {step} "
            f"(last finite loss: {last_finite_loss})"
        )


class FormatError(TubeletEngineError):
    """Malformed file; carries the path and 1-based record position"""

    def __init__(self, path: Union[str, Path], position: int, reason: str):
        self.path = Path(path)
        self.position = position
        self.reason = reason
        super().__init__(f"{self.path}: record {position}: {reason}")

"""
Core types and enums for the tubelet detection engine
"""

from enum import Enum


class Stream(str, Enum):
    """Input modality of a detector"""
    RGB = "rgb"
    FLOW = "flow"


class FusionMode(str, Enum):
    """How the two streams are combined"""
    UNION = "union"
    LATE = "late"


class SignatureMode(str, Enum):
    """Which stream carries the class information in a synthetic scene"""
    APPEARANCE = "appearance"
    MOTION_ONLY = "motion_only"


class SmoothingMode(str, Enum):
    """Per-frame box selection when turning a link into a tube"""
    MEAN = "mean"
    BEST = "best"


class APInterpolation(str, Enum):
    """Precision-recall integration rule"""
    CONTINUOUS = "continuous"
    ELEVEN_POINT = "eleven_point"


class ErrorFactor(str, Enum):
    """Error categories of the frame-level breakdown"""
    LOCALIZATION = "E_L"
    CLASSIFICATION = "E_C"
    TIME = "E_T"
    OTHER = "E_O"
    MISSED = "E_M"


class SpeedStratum(str, Enum):
    """Actor speed tertiles"""
    SLOW = "slow"
    MEDIUM = "medium"
    FAST = "fast"

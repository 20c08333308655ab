"""
Tubelet Detection Engine Core
=============================

Core engine components for multi-frame (tubelet) action detection.

This package contains:
- Box, tubelet and tube geometry
- Anchor cuboid generation and the recall study
- Ground-truth assignment and the training loss
- The linear detection head, its trainer and two-stream fusion
- Online linking into action tubes
- Evaluation metrics
"""

# Types and configuration
from .act_types import APInterpolation, ErrorFactor, FusionMode, SignatureMode, SmoothingMode, SpeedStratum, Stream
from .config import (
    ActorConfig, AnchorConfig, DatasetConfig, EvalConfig, LinkerConfig, SceneConfig, TrainConfig,
)

# Geometry and anchors
from .geometry import ActionTube, Box, Tubelet, iou, link_tubelet_overlap, motion_overlap, tube_overlap, tubelet_overlap
from .anchors import AnchorCuboid, AnchorSet, anchor_recall, generate_anchors, recall_study

# Training objective and head
from .matchloss import Assignment, LossResult, Predictions, assign, decode, encode, total_loss
from .head import (
    FeatureVolume, HeadParams, HeadTrainer, ScoredTubelet, TrainResult, detect, fuse, predict, stack_features, train,
)

# Linking and evaluation
from .linker import (
    FrameDetection, Link, LinkerState, build_tubes, frame_level_detections, link_frame, smooth_to_tube, tubelet_nms,
)
from .metrics import (
    EvalReport, ErrorBreakdown, average_precision, error_breakdown, frame_map, mabo, speed_strata, video_map,
)

# Scene building
from .builders import SceneBuilder

# Core engine
from .core import DatasetHandle, TubeletDetectionEngine

__all__ = [
    # Types
    'APInterpolation',
    'ErrorFactor',
    'FusionMode',
    'SignatureMode',
    'SmoothingMode',
    'SpeedStratum',
    'Stream',

    # Configs
    'ActorConfig',
    'AnchorConfig',
    'DatasetConfig',
    'EvalConfig',
    'LinkerConfig',
    'SceneConfig',
    'TrainConfig',

    # Geometry
    'ActionTube',
    'Box',
    'Tubelet',
    'iou',
    'link_tubelet_overlap',
    'motion_overlap',
    'tube_overlap',
    'tubelet_overlap',

    # Anchors
    'AnchorCuboid',
    'AnchorSet',
    'anchor_recall',
    'generate_anchors',
    'recall_study',

    # Loss
    'Assignment',
    'LossResult',
    'Predictions',
    'assign',
    'decode',
    'encode',
    'total_loss',

    # Head
    'FeatureVolume',
    'HeadParams',
    'HeadTrainer',
    'ScoredTubelet',
    'TrainResult',
    'detect',
    'fuse',
    'predict',
    'stack_features',
    'train',

    # Linking
    'FrameDetection',
    'Link',
    'LinkerState',
    'build_tubes',
    'frame_level_detections',
    'link_frame',
    'smooth_to_tube',
    'tubelet_nms',

    # Metrics
    'EvalReport',
    'ErrorBreakdown',
    'average_precision',
    'error_breakdown',
    'frame_map',
    'mabo',
    'speed_strata',
    'video_map',

    # Builders
    'SceneBuilder',

    # Core engine
    'DatasetHandle',
    'TubeletDetectionEngine',
]

"""
Tubelet Detection Engine
========================

Multi-frame action detection on synthetic videos: anchor cuboids regressed into
tubelets, linked online into action tubes and evaluated at frame and video level.

Architecture:
- engine/: Core engine components (geometry, anchors, loss, head, linker, metrics, orchestrator)
- synthlab.py: Synthetic scene generation and training-sequence selection
- formats.py: Dataset, detection, tube and model files
- scene_config.py: Named dataset presets (scenes.yaml)
- cli.py: The act-tubelets command

Main Components:
- TubeletDetectionEngine: Complete pipeline (from engine.core)
- SceneBuilder: Common synthetic scenes (from engine.builders)
- HeadTrainer: Gradient descent on the tubelet loss (from engine.head)

Example standalone usage:
    from tubelet_engine import TubeletDetectionEngine, SceneBuilder, TrainConfig

    engine = TubeletDetectionEngine()
    engine.generate(SceneBuilder.motion_only_dataset(), "data/")

    data = engine.load("data/")
    result = engine.train(data, K=6, config=TrainConfig(max_steps=400))
    tubelets = engine.detect(data, result.params)
    tubes = engine.link(tubelets)
    report = engine.evaluate(data, tubes, tubelets)
    print(report.to_text())
"""

# Import core engine components from engine subdirectory
from .engine import (
    # Core engine
    TubeletDetectionEngine,
    DatasetHandle,

    # Configs
    AnchorConfig,
    TrainConfig,
    LinkerConfig,
    EvalConfig,
    SceneConfig,
    ActorConfig,
    DatasetConfig,

    # Geometry
    Box,
    Tubelet,
    ActionTube,

    # Head and linking
    HeadParams,
    HeadTrainer,
    ScoredTubelet,
    FeatureVolume,

    # Reports
    EvalReport,
    ErrorBreakdown,

    # Types and enums
    Stream,
    FusionMode,
    SignatureMode,
    SmoothingMode,
    ErrorFactor,
    SpeedStratum,
    APInterpolation,

    # Builders
    SceneBuilder,
)

# Import data services from main package
from .synthlab import Scene, eligible_sequences, generate_dataset, generate_scene
from .formats import DatasetManifest, dataset_digest

# Import configuration utilities
from .scene_config import SceneLibrary, get_scene_library, load_dataset_config
from .errors import (
    FormatError, GeometryContractError, InvalidAnnotationError, SceneGenerationError, ShapeMismatchError,
    TrainingDivergedError, TubeletEngineError,
)

# Version and metadata
__version__ = "1.0.0"
__description__ = "Tubelet action detection engine on synthetic feature videos"

__all__ = [
    # Main engine
    'TubeletDetectionEngine',
    'DatasetHandle',

    # Configs
    'AnchorConfig',
    'TrainConfig',
    'LinkerConfig',
    'EvalConfig',
    'SceneConfig',
    'ActorConfig',
    'DatasetConfig',

    # Geometry
    'Box',
    'Tubelet',
    'ActionTube',

    # Head
    'HeadParams',
    'HeadTrainer',
    'ScoredTubelet',
    'FeatureVolume',

    # Reports
    'EvalReport',
    'ErrorBreakdown',

    # Types and enums
    'Stream',
    'FusionMode',
    'SignatureMode',
    'SmoothingMode',
    'ErrorFactor',
    'SpeedStratum',
    'APInterpolation',

    # Builders
    'SceneBuilder',

    # Data
    'Scene',
    'eligible_sequences',
    'generate_dataset',
    'generate_scene',
    'DatasetManifest',
    'dataset_digest',

    # Configuration utilities
    'SceneLibrary',
    'get_scene_library',
    'load_dataset_config',

    # Errors
    'FormatError',
    'GeometryContractError',
    'InvalidAnnotationError',
    'SceneGenerationError',
    'ShapeMismatchError',
    'TrainingDivergedError',
    'TubeletEngineError',
]

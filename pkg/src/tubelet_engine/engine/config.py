"""
Configuration models for anchors, training, linking, evaluation and scenes
"""

import math
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

try:
    from .act_types import APInterpolation, SignatureMode, SmoothingMode
except ImportError:
    from act_types import APInterpolation, SignatureMode, SmoothingMode


class StrictModel(BaseModel):
    """Base for all config models"""

    model_config = ConfigDict(extra="forbid")  # Strict validation - no extra fields allowed


class AnchorConfig(StrictModel):
    """Dense multi-scale anchor cuboid layout (SSD-style defaults)"""
    image_size: Tuple[int, int] = Field((300, 300), description="(width, height) in pixels")
    grid_sizes: List[int] = Field([19, 10, 5, 3, 1], min_length=1, description="Cells per side, per grid")
    scales: List[float] = Field([0.1, 0.2, 0.375, 0.55, 0.725], description="Anchor scale per grid")
    aspect_ratios: List[float] = Field(
        [1.0, 2.0, 0.5, 3.0, 1.0 / 3.0], min_length=1, description="Anchor w/h ratios"
    )
    K: int = Field(6, ge=1, description="Sequence length")
    extra_square: bool = Field(True, description="Add the sqrt(s_g * s_g+1) square anchor")
    clip: bool = Field(True, description="Clip anchors to the image")

    @field_validator("image_size")
    @classmethod
    def positive_image_size(cls, size):
        if size[0] <= 0 or size[1] <= 0:
            raise ValueError(f"Image size must be positive, got {size}")
        return size

    @field_validator("grid_sizes")
    @classmethod
    def strictly_decreasing_grids(cls, grids):
        if any(g < 1 for g in grids):
            raise ValueError("Grid sizes must be >= 1")
        if any(a <= b for a, b in zip(grids, grids[1:])):
            raise ValueError(f"Grid sizes must be strictly decreasing, got {grids}")
        return grids

    @field_validator("scales")
    @classmethod
    def scales_in_unit_interval(cls, scales):
        if any(not (0.0 < s <= 1.0) for s in scales):
            raise ValueError(f"Scales must lie in (0, 1], got {scales}")
        return scales

    @field_validator("aspect_ratios")
    @classmethod
    def positive_ratios(cls, ratios):
        if any(r <= 0 or not math.isfinite(r) for r in ratios):
            raise ValueError(f"Aspect ratios must be positive, got {ratios}")
        return ratios

    @model_validator(mode="after")
    def one_scale_per_grid(self):
        if len(self.scales) != len(self.grid_sizes):
            raise ValueError(
                f"Need one scale per grid ({len(self.grid_sizes)}), got {len(self.scales)}"
            )
        return self

    def shapes_per_cell(self) -> int:
        """Anchor shapes generated at every cell of every grid"""
        return len(self.aspect_ratios) + (1 if self.extra_square else 0)

    def with_k(self, K: int) -> "AnchorConfig":
        return self.model_copy(update={"K": K})


class TrainConfig(StrictModel):
    """Mini-batch gradient descent on the tubelet loss"""
    learning_rate: float = Field(0.05, ge=0.0, description="Constant step size")
    momentum: float = Field(0.0, ge=0.0, lt=1.0, description="Heavy-ball momentum")
    batch_size: int = Field(8, ge=1)
    max_steps: int = Field(600, ge=0)
    hnm_ratio: float = Field(3.0, gt=0.0, description="Negatives kept per positive")
    positive_threshold: float = Field(0.5, gt=0.0, le=1.0, description="Tubelet overlap for positives")
    seed: int = Field(0)
    log_every: int = Field(50, ge=1)


class LinkerConfig(StrictModel):
    """Online tubelet linking parameters"""
    nms_threshold: float = Field(0.3, ge=0.0, le=1.0)
    top_n: int = Field(10, ge=1)
    tau: float = Field(0.2, ge=0.0, le=1.0, description="Link-to-tubelet overlap threshold")
    K: int = Field(6, ge=1)
    patience: Optional[int] = Field(None, ge=0, description="Frames a link may stay unextended")
    smoothing: SmoothingMode = Field(SmoothingMode.MEAN)

    @model_validator(mode="after")
    def default_patience(self):
        if self.patience is None:
            self.patience = self.K - 1
        return self


class EvalConfig(StrictModel):
    """Evaluation thresholds"""
    frame_iou: float = Field(0.5, ge=0.0, le=1.0)
    video_thresholds: List[float] = Field([0.2, 0.5, 0.75])
    frame_nms: float = Field(0.3, ge=0.0, le=1.0)
    score_floor: float = Field(0.01, ge=0.0, le=1.0)
    accuracy_overlap: float = Field(0.7, ge=0.0, le=1.0)
    speed_gap: int = Field(10, ge=1)
    interpolation: APInterpolation = Field(APInterpolation.CONTINUOUS)


class ActorConfig(StrictModel):
    """One actor: class, linear trajectory and temporal extent"""
    label: int = Field(..., ge=1, description="Class id (0 is background)")
    start_box: Tuple[float, float, float, float] = Field(..., description="(x1, y1, x2, y2) at start_frame")
    velocity: Tuple[float, float] = Field((0.0, 0.0), description="Pixels per frame")
    size_drift: Tuple[float, float] = Field((0.0, 0.0), description="Width/height change per frame")
    start_frame: int = Field(0, ge=0)
    end_frame: Optional[int] = Field(None, ge=0, description="Last annotated frame (inclusive)")

    @field_validator("start_box")
    @classmethod
    def valid_start_box(cls, box):
        x1, y1, x2, y2 = box
        if not all(math.isfinite(v) for v in box) or x2 <= x1 or y2 <= y1:
            raise ValueError(f"Invalid start box {box}")
        return box


class SceneConfig(StrictModel):
    """One synthetic video"""
    video_id: str = Field("video_000", pattern=r"^[A-Za-z0-9_\-]+$")
    image_size: Tuple[int, int] = Field((300, 300))
    num_frames: int = Field(..., ge=1)
    num_classes: int = Field(..., ge=1)
    actors: List[ActorConfig] = Field(default_factory=list)
    signature_mode: SignatureMode = Field(SignatureMode.APPEARANCE)
    signature_dim: int = Field(4, ge=1)
    motion_gain: float = Field(10.0, gt=0.0, description="Scale of displacement channels")
    noise_level: float = Field(0.0, ge=0.0)
    seed: int = Field(0)

    @model_validator(mode="after")
    def extents_within_video(self):
        for i, actor in enumerate(self.actors):
            if actor.label > self.num_classes:
                raise ValueError(f"Actor {i} label {actor.label} exceeds num_classes {self.num_classes}")
            end = self.num_frames - 1 if actor.end_frame is None else actor.end_frame
            if actor.start_frame > end or end >= self.num_frames:
                raise ValueError(
                    f"Actor {i} extent [{actor.start_frame}, {end}] outside video of "
                    f"{self.num_frames} frames"
                )
        return self

    def actor_extent(self, index: int) -> Tuple[int, int]:
        actor = self.actors[index]
        end = self.num_frames - 1 if actor.end_frame is None else actor.end_frame
        return actor.start_frame, end


class DatasetConfig(StrictModel):
    """A set of synthetic videos sharing anchors, classes and K"""
    name: str = Field("synthetic", min_length=1, max_length=100, pattern=r"^[A-Za-z0-9_\-]+$")
    class_names: List[str] = Field(["class_1", "class_2"], min_length=1)
    anchors: AnchorConfig = Field(default_factory=AnchorConfig)
    signature_mode: SignatureMode = Field(SignatureMode.APPEARANCE)
    signature_dim: int = Field(4, ge=1)
    motion_gain: float = Field(10.0, gt=0.0)
    noise_level: float = Field(0.0, ge=0.0)
    seed: int = Field(0)
    num_videos: int = Field(4, ge=1, description="Videos sampled when scenes is empty")
    num_frames: int = Field(24, ge=1)
    trimmed: bool = Field(True, description="Actors span the whole video")
    box_size: Tuple[float, float] = Field((60.0, 60.0))
    speed: float = Field(2.0, ge=0.0, description="Pixels per frame for sampled actors")
    scenes: List[SceneConfig] = Field(default_factory=list, description="Explicit videos")

    @field_validator("class_names")
    @classmethod
    def unique_class_names(cls, names):
        if len(names) != len(set(names)):
            raise ValueError("Class names must be unique")
        return names

    @model_validator(mode="after")
    def scenes_match_dataset(self):
        for scene in self.scenes:
            if tuple(scene.image_size) != tuple(self.anchors.image_size):
                raise ValueError(
                    f"Scene {scene.video_id} image size {scene.image_size} "
                    f"differs from anchors {self.anchors.image_size}"
                )
            if scene.num_classes != self.num_classes:
                raise ValueError(
                    f"Scene {scene.video_id} has {scene.num_classes} classes, dataset has {self.num_classes}"
                )
        ids = [scene.video_id for scene in self.scenes]
        if len(ids) != len(set(ids)):
            raise ValueError("Scene video ids must be unique")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

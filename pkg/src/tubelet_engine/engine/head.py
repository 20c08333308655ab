"""
Tubelet detection head over stacked per-frame features

Per-frame features come as one (G, G, D) volume per anchor grid. For a sequence
of K frames the volumes are stacked channel-wise and every anchor reads the
stacked vector of its own cell; one linear map per anchor shape produces C + 1
class logits and 4K regressions.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

try:
    from ..errors import ShapeMismatchError, TrainingDivergedError
    from .act_types import FusionMode
    from .anchors import AnchorSet
    from .config import TrainConfig
    from .geometry import Tubelet
    from .matchloss import (
        Assignment, LossResult, Predictions, assign, decode_boxes, regression_targets,
        softmax, total_loss,
    )
except ImportError:
    from errors import ShapeMismatchError, TrainingDivergedError
    from act_types import FusionMode
    from anchors import AnchorSet
    from config import TrainConfig
    from geometry import Tubelet
    from matchloss import (
        Assignment, LossResult, Predictions, assign, decode_boxes, regression_targets,
        softmax, total_loss,
    )

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FeatureVolume:
    """Features of one frame: a (G, G, D) array per grid"""
    grids: List[np.ndarray]

    def __post_init__(self):
        if not self.grids:
            raise ShapeMismatchError("A feature volume needs at least one grid")
        depths = {g.shape[-1] for g in self.grids}
        if len(depths) != 1:
            raise ShapeMismatchError(f"Grids disagree on channel count: {sorted(depths)}")
        for g in self.grids:
            if g.ndim != 3 or g.shape[0] != g.shape[1]:
                raise ShapeMismatchError(f"Grid volume must be (G, G, D), got {g.shape}")
            if not np.all(np.isfinite(g)):
                raise ValueError("Feature values must be finite")

    @property
    def D(self) -> int:
        return self.grids[0].shape[-1]

    @property
    def grid_sizes(self) -> List[int]:
        return [g.shape[0] for g in self.grids]


def stack_features(frames: Sequence[FeatureVolume]) -> List[np.ndarray]:
    """Channel-wise concatenation in frame order -> one (G, G, K*D) array per grid"""
    if not frames:
        raise ShapeMismatchError("Need at least one frame to stack")
    shapes = [[g.shape for g in f.grids] for f in frames]
    if any(s != shapes[0] for s in shapes[1:]):
        raise ShapeMismatchError(f"Frame volumes differ in shape: {shapes}")
    return [
        np.concatenate([f.grids[g] for f in frames], axis=-1)
        for g in range(len(frames[0].grids))
    ]


@dataclass(eq=False)
class HeadParams:
    """Per-grid, per-anchor-shape linear maps

    score_w[g]: (R_g, K*D, C+1), score_b[g]: (R_g, C+1),
    reg_w[g]: (R_g, K*D, 4K), reg_b[g]: (R_g, 4K).
    """
    score_w: List[np.ndarray]
    score_b: List[np.ndarray]
    reg_w: List[np.ndarray]
    reg_b: List[np.ndarray]
    K: int
    D: int
    num_classes: int

    @classmethod
    def zeros(cls, grid_count: int, shapes_per_cell: int, K: int, D: int, num_classes: int) -> "HeadParams":
        R, KD, C1 = shapes_per_cell, K * D, num_classes + 1
        return cls(
            score_w=[np.zeros((R, KD, C1)) for _ in range(grid_count)],
            score_b=[np.zeros((R, C1)) for _ in range(grid_count)],
            reg_w=[np.zeros((R, KD, 4 * K)) for _ in range(grid_count)],
            reg_b=[np.zeros((R, 4 * K)) for _ in range(grid_count)],
            K=K, D=D, num_classes=num_classes,
        )

    @classmethod
    def for_anchors(cls, anchors: AnchorSet, D: int, num_classes: int) -> "HeadParams":
        return cls.zeros(len(anchors.config.grid_sizes), anchors.shapes_per_cell, anchors.K, D, num_classes)

    def arrays(self) -> List[np.ndarray]:
        """All parameter arrays in a fixed order"""
        out = []
        for g in range(len(self.score_w)):
            out.extend([self.score_w[g], self.score_b[g], self.reg_w[g], self.reg_b[g]])
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vector: np.ndarray) -> "HeadParams":
        """Same layout, values taken from a flat vector"""
        out = self.zeros_like()
        offset = 0
        for dst in out.arrays():
            n = dst.size
            dst[...] = np.asarray(vector[offset:offset + n]).reshape(dst.shape)
            offset += n
        if offset != len(vector):
            raise ShapeMismatchError(f"Vector of length {len(vector)} for {offset} parameters")
        return out

    def zeros_like(self) -> "HeadParams":
        return HeadParams(
            score_w=[np.zeros_like(a) for a in self.score_w],
            score_b=[np.zeros_like(a) for a in self.score_b],
            reg_w=[np.zeros_like(a) for a in self.reg_w],
            reg_b=[np.zeros_like(a) for a in self.reg_b],
            K=self.K, D=self.D, num_classes=self.num_classes,
        )

    def copy(self) -> "HeadParams":
        return self.from_vector(self.to_vector())

    def add_scaled(self, other: "HeadParams", alpha: float) -> None:
        """In-place self += alpha * other"""
        for dst, src in zip(self.arrays(), other.arrays()):
            dst += alpha * src

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def check_compatible(self, anchors: AnchorSet, stacked: Sequence[np.ndarray]) -> None:
        if len(stacked) != len(self.score_w) or len(anchors.config.grid_sizes) != len(self.score_w):
            raise ShapeMismatchError(
                f"{len(stacked)} feature grids, {len(anchors.config.grid_sizes)} anchor grids, "
                f"{len(self.score_w)} parameter grids"
            )
        if anchors.K != self.K:
            raise ShapeMismatchError(f"Anchor K={anchors.K} vs head K={self.K}")
        for g, (volume, G) in enumerate(zip(stacked, anchors.config.grid_sizes)):
            expected = (G, G, self.K * self.D)
            if volume.shape != expected:
                raise ShapeMismatchError(f"Grid {g}: stacked features {volume.shape}, expected {expected}")
            if self.score_w[g].shape[0] != anchors.shapes_per_cell:
                raise ShapeMismatchError(
                    f"Grid {g}: {self.score_w[g].shape[0]} shapes in params, "
                    f"{anchors.shapes_per_cell} per anchor cell"
                )


def predict(params: HeadParams, stacked: Sequence[np.ndarray], anchors: AnchorSet) -> Predictions:
    """Logits and regressions for every anchor from its cell's stacked features"""
    params.check_compatible(anchors, stacked)
    scores, regressions = [], []
    for g, volume in enumerate(stacked):
        X = volume.reshape(-1, volume.shape[-1])
        scores.append((np.einsum("nd,rdc->nrc", X, params.score_w[g]) + params.score_b[g]).reshape(
            -1, params.num_classes + 1))
        regressions.append((np.einsum("nd,rdc->nrc", X, params.reg_w[g]) + params.reg_b[g]).reshape(
            -1, 4 * params.K))
    return Predictions(np.concatenate(scores), np.concatenate(regressions))


def backward(
    params: HeadParams,
    stacked: Sequence[np.ndarray],
    anchors: AnchorSet,
    grad_scores: np.ndarray,
    grad_regressions: np.ndarray,
) -> HeadParams:
    """Gradient w.r.t. the parameters given gradients w.r.t. the head outputs"""
    grads = params.zeros_like()
    R = anchors.shapes_per_cell
    for g, volume in enumerate(stacked):
        X = volume.reshape(-1, volume.shape[-1])
        block = anchors.grid_slice(g)
        gs = grad_scores[block].reshape(X.shape[0], R, -1)
        gr = grad_regressions[block].reshape(X.shape[0], R, -1)
        grads.score_w[g] = np.einsum("nd,nrc->rdc", X, gs)
        grads.score_b[g] = gs.sum(axis=0)
        grads.reg_w[g] = np.einsum("nd,nrc->rdc", X, gr)
        grads.reg_b[g] = gr.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScoredTubelet:
    """A tubelet, its softmax score vector and the class this entry stands for"""
    tubelet: Tubelet
    scores: np.ndarray
    label: int
    anchor_index: int
    stream: str = "rgb"

    @property
    def score(self) -> float:
        return float(self.scores[self.label])

    @property
    def start_frame(self) -> int:
        return self.tubelet.start_frame


@dataclass(frozen=True, eq=False)
class StreamOutput:
    """Softmax scores and decoded tubelets of every anchor for one sequence"""
    start_frame: int
    probs: np.ndarray
    boxes: np.ndarray
    stream: str = "rgb"
    anchors: Optional[AnchorSet] = None

    @property
    def num_anchors(self) -> int:
        return self.probs.shape[0]


def run_stream(
    params: HeadParams,
    frames: Sequence[FeatureVolume],
    anchors: AnchorSet,
    start_frame: int = 0,
    stream: str = "rgb",
) -> StreamOutput:
    """predict -> softmax -> decode against each anchor cuboid"""
    pred = predict(params, stack_features(frames), anchors)
    return StreamOutput(
        start_frame=start_frame,
        probs=softmax(pred.scores),
        boxes=decode_boxes(anchors.boxes, pred.regressions),
        stream=stream,
        anchors=anchors,
    )


def floor_detections(output: StreamOutput, score_floor: float = 0.01) -> Dict[int, List[ScoredTubelet]]:
    """Per-class tubelets whose class score exceeds the floor; background never emitted"""
    detections: Dict[int, List[ScoredTubelet]] = {}
    num_classes = output.probs.shape[1] - 1
    for label in range(1, num_classes + 1):
        keep = np.flatnonzero(output.probs[:, label] > score_floor)
        detections[label] = [
            ScoredTubelet(
                tubelet=Tubelet(output.start_frame, output.boxes[i]),
                scores=output.probs[i].copy(),
                label=label,
                anchor_index=int(i),
                stream=output.stream,
            )
            for i in keep
        ]
    return detections


def detect(
    params: HeadParams,
    frames: Sequence[FeatureVolume],
    anchors: AnchorSet,
    score_floor: float = 0.01,
    start_frame: int = 0,
    stream: str = "rgb",
) -> Dict[int, List[ScoredTubelet]]:
    return floor_detections(run_stream(params, frames, anchors, start_frame, stream), score_floor)


def fuse(
    rgb: StreamOutput,
    flow: StreamOutput,
    mode: FusionMode,
    score_floor: float = 0.01,
) -> Dict[int, List[ScoredTubelet]]:
    """Combine the two streams of one sequence

    union: both detection sets, untouched. late: per-anchor mean of the softmax
    scores with RGB geometry, fused before the score floor is applied. Late
    fusion pairs anchors by index, so both outputs must come from the same anchor
    layout; outputs that carry their anchor sets are compared box for box.
    """
    mode = FusionMode(mode)
    if mode == FusionMode.UNION:
        rgb_dets = floor_detections(rgb, score_floor)
        flow_dets = floor_detections(flow, score_floor)
        return {label: rgb_dets[label] + flow_dets.get(label, []) for label in rgb_dets}

    if rgb.probs.shape != flow.probs.shape or rgb.start_frame != flow.start_frame:
        raise ShapeMismatchError(
            f"Late fusion needs identical anchor sets: {rgb.probs.shape} vs {flow.probs.shape}"
        )
    if rgb.anchors is not None and flow.anchors is not None and not rgb.anchors.same_layout(flow.anchors):
        raise ShapeMismatchError("Late fusion needs identical anchor sets: anchor boxes differ")
    fused = StreamOutput(
        start_frame=rgb.start_frame,
        probs=0.5 * (rgb.probs + flow.probs),
        boxes=rgb.boxes,
        stream="late",
        anchors=rgb.anchors,
    )
    return floor_detections(fused, score_floor)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TrainingSample:
    """One eligible K-frame sequence with its assignment precomputed"""
    video_id: str
    start_frame: int
    stacked: List[np.ndarray]
    gt_tubelets: List[Tubelet]
    labels: List[int]
    assignment: Assignment = field(default_factory=Assignment)
    targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    @classmethod
    def build(
        cls,
        video_id: str,
        start_frame: int,
        frames: Sequence[FeatureVolume],
        gt_tubelets: Sequence[Tubelet],
        labels: Sequence[int],
        anchors: AnchorSet,
        threshold: float = 0.5,
    ) -> "TrainingSample":
        asg = assign(anchors, gt_tubelets, labels, threshold)
        return cls(
            video_id=video_id,
            start_frame=start_frame,
            stacked=stack_features(frames),
            gt_tubelets=list(gt_tubelets),
            labels=list(labels),
            assignment=asg,
            targets=regression_targets(anchors, gt_tubelets, asg),
        )


def sample_objective(
    params: HeadParams,
    sample: TrainingSample,
    anchors: AnchorSet,
    hnm_ratio: float = 3.0,
):
    """Loss of one sequence and its gradient w.r.t. the parameters"""
    pred = predict(params, sample.stacked, anchors)
    result: LossResult = total_loss(pred, sample.assignment, sample.targets, hnm_ratio)
    grads = backward(params, sample.stacked, anchors, result.grad_scores, result.grad_regressions)
    return result, grads


def batch_objective(
    params: HeadParams,
    samples: Sequence[TrainingSample],
    anchors: AnchorSet,
    hnm_ratio: float = 3.0,
):
    """Mean loss over a batch; gradients reduced in sample order"""
    total = params.zeros_like()
    value = conf = reg = 0.0
    n_pos = 0
    for sample in samples:
        result, grads = sample_objective(params, sample, anchors, hnm_ratio)
        total.add_scaled(grads, 1.0 / len(samples))
        value += result.value / len(samples)
        conf += result.conf
        reg += result.reg
        n_pos += result.n_pos
    return value, conf, reg, n_pos, total


@dataclass
class TrainResult:
    params: HeadParams
    loss_curve: pd.DataFrame


class HeadTrainer:
    """Mini-batch gradient descent (optional heavy-ball momentum) on the tubelet loss"""

    def __init__(self, anchors: AnchorSet, D: int, num_classes: int, config: Optional[TrainConfig] = None):
        self.anchors = anchors
        self.D = D
        self.num_classes = num_classes
        self.config = config or TrainConfig()

    def fit(self, samples: Sequence[TrainingSample], init: Optional[HeadParams] = None) -> TrainResult:
        cfg = self.config
        usable = [s for s in samples if s.assignment.n_pos > 0]
        if len(usable) < len(samples):
            log.info("Skipping %d sequences without positive anchors", len(samples) - len(usable))

        params = init.copy() if init is not None else HeadParams.for_anchors(self.anchors, self.D, self.num_classes)
        velocity = params.zeros_like()
        rng = np.random.default_rng(cfg.seed)
        records = []
        if not usable:
            log.warning("No trainable sequences; returning initial parameters")
            return TrainResult(params, pd.DataFrame(records, columns=["step", "loss", "conf", "reg", "n_pos"]))

        order = rng.permutation(len(usable))
        cursor = 0
        last_finite: Optional[float] = None
        for step in range(cfg.max_steps):
            if cursor >= len(order):
                order = rng.permutation(len(usable))
                cursor = 0
            batch = [usable[i] for i in order[cursor:cursor + cfg.batch_size]]
            cursor += cfg.batch_size

            value, conf, reg, n_pos, grads = batch_objective(params, batch, self.anchors, cfg.hnm_ratio)
            if not np.isfinite(value) or not grads.is_finite():
                raise TrainingDivergedError(step, last_finite)
            last_finite = value
            records.append((step, value, conf, reg, n_pos))
            if step % cfg.log_every == 0:
                log.info("step %d loss %.6f (conf %.4f, reg %.4f, positives %d)", step, value, conf, reg, n_pos)

            if cfg.momentum > 0:
                velocity.add_scaled(velocity, cfg.momentum - 1.0)
                velocity.add_scaled(grads, -cfg.learning_rate)
                params.add_scaled(velocity, 1.0)
            else:
                params.add_scaled(grads, -cfg.learning_rate)
            if not params.is_finite():
                raise TrainingDivergedError(step, last_finite)

        curve = pd.DataFrame(records, columns=["step", "loss", "conf", "reg", "n_pos"])
        if records:
            log.info("Training finished after %d steps, final loss %.6f", len(records), records[-1][1])
        return TrainResult(params, curve)


def train(
    samples: Sequence[TrainingSample],
    anchors: AnchorSet,
    D: int,
    num_classes: int,
    config: Optional[TrainConfig] = None,
) -> TrainResult:
    return HeadTrainer(anchors, D, num_classes, config).fit(samples)

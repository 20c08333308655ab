"""
Ground-truth assignment, regression targets and the tubelet training loss

Loss = (L_conf + L_reg) / N with N the number of positive anchors. L_conf is a
softmax cross-entropy over positives (true class) and hard-mined negatives
(background, class 0); L_reg is a Smooth-L1 on per-frame (x, y, w, h) offsets
averaged over the K frames. Regressions are laid out frame-major:
[x_0, y_0, w_0, h_0, x_1, ...].
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

try:
    from ..errors import InvalidAnnotationError, ShapeMismatchError
    from .anchors import AnchorCuboid, AnchorSet
    from .geometry import Tubelet, tubelet_overlap_matrix
except ImportError:
    from errors import InvalidAnnotationError, ShapeMismatchError
    from anchors import AnchorCuboid, AnchorSet
    from geometry import Tubelet, tubelet_overlap_matrix


@dataclass(frozen=True, eq=False)
class Assignment:
    """Positive (anchor, ground truth, label) triples and negative anchors"""
    positives: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    negatives: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_pos(self) -> int:
        return int(self.positives.shape[0])

    @property
    def anchors(self) -> np.ndarray:
        return self.positives[:, 0]

    @property
    def gt_indices(self) -> np.ndarray:
        return self.positives[:, 1]

    @property
    def labels(self) -> np.ndarray:
        return self.positives[:, 2]


@dataclass(frozen=True, eq=False)
class Predictions:
    """Raw per-anchor outputs of the head

    scores: (A, C + 1) logits, column 0 is background.
    regressions: (A, 4 * K).
    """
    scores: np.ndarray
    regressions: np.ndarray

    def __post_init__(self):
        if self.scores.ndim != 2 or self.regressions.ndim != 2:
            raise ShapeMismatchError("Predictions must be 2D arrays")
        if self.scores.shape[0] != self.regressions.shape[0]:
            raise ShapeMismatchError(
                f"{self.scores.shape[0]} score rows vs {self.regressions.shape[0]} regression rows"
            )
        if self.regressions.shape[1] % 4:
            raise ShapeMismatchError(f"Regression width {self.regressions.shape[1]} is not 4*K")

    @property
    def num_anchors(self) -> int:
        return self.scores.shape[0]

    @property
    def K(self) -> int:
        return self.regressions.shape[1] // 4


@dataclass(frozen=True)
class LossResult:
    """Loss value with gradients w.r.t. logits and regression outputs"""
    value: float
    conf: float
    reg: float
    grad_scores: np.ndarray
    grad_regressions: np.ndarray
    n_pos: int


# ---------------------------------------------------------------------------
# Assignment
# ---------------------------------------------------------------------------

def assign(
    anchors: AnchorSet,
    gt_tubelets: Sequence[Tubelet],
    labels: Sequence[int],
    threshold: float = 0.5,
) -> Assignment:
    """Pair each anchor with its highest-overlap ground truth when overlap >= threshold

    Ties go to the lowest ground-truth index.
    """
    A = len(anchors)
    if len(gt_tubelets) != len(labels):
        raise ShapeMismatchError(f"{len(gt_tubelets)} tubelets vs {len(labels)} labels")
    if not gt_tubelets:
        return Assignment(negatives=np.arange(A, dtype=np.int64))
    for t in gt_tubelets:
        if t.K != anchors.K:
            raise ShapeMismatchError(f"Tubelet length {t.K} does not match anchor K={anchors.K}")

    overlaps = tubelet_overlap_matrix(anchors.boxes, np.stack([t.boxes for t in gt_tubelets]))
    best_gt = overlaps.argmax(axis=1)
    best = overlaps[np.arange(A), best_gt]
    pos = np.flatnonzero(best >= threshold)
    labels_arr = np.asarray(labels, dtype=np.int64)
    positives = np.stack([pos, best_gt[pos], labels_arr[best_gt[pos]]], axis=1).astype(np.int64)
    negatives = np.flatnonzero(best < threshold).astype(np.int64)
    return Assignment(positives=positives.reshape(-1, 3), negatives=negatives)


# ---------------------------------------------------------------------------
# Target encoding
# ---------------------------------------------------------------------------

def _centers(boxes: np.ndarray):
    w = boxes[..., 2] - boxes[..., 0]
    h = boxes[..., 3] - boxes[..., 1]
    return boxes[..., 0] + 0.5 * w, boxes[..., 1] + 0.5 * h, w, h


def encode_boxes(anchor_boxes: np.ndarray, gt_boxes: np.ndarray) -> np.ndarray:
    """Regression targets of (P, K, 4) ground truths against (P, 4) anchors -> (P, 4K)"""
    anchor_boxes = np.asarray(anchor_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64)
    ax, ay, aw, ah = _centers(anchor_boxes[:, None, :])
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("Anchor boxes must have positive width and height")
    gx, gy, gw, gh = _centers(gt_boxes)
    if np.any(gw <= 0) or np.any(gh <= 0):
        raise InvalidAnnotationError("Ground-truth box with non-positive size")
    targets = np.stack(
        [(gx - ax) / aw, (gy - ay) / ah, np.log(gw / aw), np.log(gh / ah)], axis=-1
    )
    return targets.reshape(targets.shape[0], -1)


def decode_boxes(anchor_boxes: np.ndarray, regressions: np.ndarray) -> np.ndarray:
    """Boxes (A, K, 4) from (A, 4) anchors and (A, 4K) regressions"""
    anchor_boxes = np.asarray(anchor_boxes, dtype=np.float64).reshape(-1, 4)
    reg = np.asarray(regressions, dtype=np.float64).reshape(anchor_boxes.shape[0], -1, 4)
    ax, ay, aw, ah = _centers(anchor_boxes[:, None, :])
    cx = reg[..., 0] * aw + ax
    cy = reg[..., 1] * ah + ay
    w = np.exp(reg[..., 2]) * aw
    h = np.exp(reg[..., 3]) * ah
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)


def encode(anchor: AnchorCuboid, gt: Tubelet) -> np.ndarray:
    """Per-frame (tx, ty, tw, th) of a ground-truth tubelet, flattened to 4K"""
    return encode_boxes(anchor.box.as_array()[None, :], gt.boxes[None, :, :])[0]


def decode(anchor: AnchorCuboid, target: np.ndarray, start_frame: int = 0) -> Tubelet:
    """Inverse of encode"""
    return Tubelet(start_frame, decode_boxes(anchor.box.as_array()[None, :], target)[0])


def regression_targets(anchors: AnchorSet, gt_tubelets: Sequence[Tubelet], asg: Assignment) -> np.ndarray:
    """Targets for every positive triple, in assignment order -> (P, 4K)"""
    if asg.n_pos == 0:
        return np.zeros((0, 4 * anchors.K))
    gt = np.stack([gt_tubelets[j].boxes for j in asg.gt_indices])
    return encode_boxes(anchors.boxes[asg.anchors], gt)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def smooth_l1(d):
    """0.5 d^2 when |d| < 1, |d| - 0.5 otherwise"""
    d = np.asarray(d, dtype=np.float64)
    ad = np.abs(d)
    out = np.where(ad < 1.0, 0.5 * d * d, ad - 0.5)
    return float(out) if out.ndim == 0 else out


def smooth_l1_grad(d: np.ndarray) -> np.ndarray:
    return np.where(np.abs(d) < 1.0, d, np.sign(d))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def select_hard_negatives(pred: Predictions, asg: Assignment, hnm_ratio: float = 3.0) -> np.ndarray:
    """Negatives with the largest background cross-entropy, up to ceil(ratio * n_pos)"""
    if asg.n_pos == 0 or asg.negatives.size == 0:
        return np.zeros(0, dtype=np.int64)
    keep = min(int(math.ceil(hnm_ratio * asg.n_pos)), asg.negatives.size)
    bg_loss = -log_softmax(pred.scores[asg.negatives])[:, 0]
    order = np.argsort(-bg_loss, kind="stable")
    return asg.negatives[order[:keep]]


def confidence_loss(pred: Predictions, asg: Assignment, hnm_ratio: float = 3.0):
    """Summed cross-entropy over positives and hard negatives -> (value, grad)"""
    if hnm_ratio <= 0:
        raise ValueError(f"hnm_ratio must be positive, got {hnm_ratio}")
    grad = np.zeros_like(pred.scores, dtype=np.float64)
    if asg.n_pos == 0:
        return 0.0, grad

    negatives = select_hard_negatives(pred, asg, hnm_ratio)
    rows = np.concatenate([asg.anchors, negatives])
    targets = np.concatenate([asg.labels, np.zeros(negatives.size, dtype=np.int64)])
    if np.any(targets >= pred.scores.shape[1]):
        raise ShapeMismatchError("Label exceeds the number of score columns")

    logp = log_softmax(pred.scores[rows])
    value = float(-logp[np.arange(rows.size), targets].sum())
    local = np.exp(logp)
    local[np.arange(rows.size), targets] -= 1.0
    # Positives and negatives are disjoint, so rows are unique.
    grad[rows] = local
    return value, grad


def regression_loss(pred: Predictions, asg: Assignment, targets: np.ndarray):
    """(1/K) * summed Smooth-L1 over positives, coordinates and frames -> (value, grad)"""
    grad = np.zeros_like(pred.regressions, dtype=np.float64)
    if asg.n_pos == 0:
        return 0.0, grad
    if targets.shape != (asg.n_pos, pred.regressions.shape[1]):
        raise ShapeMismatchError(
            f"Targets shape {targets.shape} vs ({asg.n_pos}, {pred.regressions.shape[1]})"
        )
    K = pred.K
    diff = pred.regressions[asg.anchors] - targets
    value = float(smooth_l1(diff).sum() / K)
    grad[asg.anchors] = smooth_l1_grad(diff) / K
    return value, grad


def total_loss(
    pred: Predictions,
    asg: Assignment,
    targets: np.ndarray,
    hnm_ratio: float = 3.0,
) -> LossResult:
    """(L_conf + L_reg) / N; zero with zero gradients when there are no positives"""
    n = asg.n_pos
    if n == 0:
        return LossResult(
            0.0, 0.0, 0.0,
            np.zeros_like(pred.scores, dtype=np.float64),
            np.zeros_like(pred.regressions, dtype=np.float64),
            0,
        )
    conf, g_conf = confidence_loss(pred, asg, hnm_ratio)
    reg, g_reg = regression_loss(pred, asg, targets)
    return LossResult(
        value=(conf + reg) / n,
        conf=conf,
        reg=reg,
        grad_scores=g_conf / n,
        grad_regressions=g_reg / n,
        n_pos=n,
    )

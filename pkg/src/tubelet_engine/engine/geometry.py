"""
Box, tubelet and tube geometry

All overlap measures average per-frame 2D IoU; boxes are (x1, y1, x2, y2) in
continuous pixel coordinates with area (x2 - x1) * (y2 - y1).
"""

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

try:
    from ..errors import GeometryContractError
except ImportError:
    from errors import GeometryContractError


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle"""
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"Box coordinates must be finite, got {coords}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"Box corners out of order: {coords}")

    @property
    def w(self) -> float:
        return self.x2 - self.x1

    @property
    def h(self) -> float:
        return self.y2 - self.y1

    @property
    def x(self) -> float:
        """Center x"""
        return 0.5 * (self.x1 + self.x2)

    @property
    def y(self) -> float:
        """Center y"""
        return 0.5 * (self.y1 + self.y2)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Box":
        return cls(*(float(v) for v in values))

    @classmethod
    def from_center(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(x - 0.5 * w, y - 0.5 * h, x + 0.5 * w, y + 0.5 * h)


BoxLike = Union[Box, Sequence[float], np.ndarray]


def _box_rows(boxes: Union[Sequence[BoxLike], np.ndarray]) -> np.ndarray:
    """Stack boxes into a float64 (N, 4) array, validating every row"""
    if isinstance(boxes, np.ndarray):
        arr = np.array(boxes, dtype=np.float64).reshape(-1, 4)
    else:
        arr = np.array(
            [b.as_array() if isinstance(b, Box) else np.asarray(b, dtype=np.float64) for b in boxes],
            dtype=np.float64,
        ).reshape(-1, 4)
    if not np.all(np.isfinite(arr)):
        raise ValueError("Box coordinates must be finite")
    if np.any(arr[:, 0] > arr[:, 2]) or np.any(arr[:, 1] > arr[:, 3]):
        raise ValueError("Box corners out of order")
    return arr


@dataclass(frozen=True, eq=False)
class Tubelet:
    """A start frame plus K boxes on consecutive frames

    boxes is a read-only (K, 4) array.
    """
    start_frame: int
    boxes: np.ndarray

    def __post_init__(self):
        arr = _box_rows(self.boxes)
        if arr.shape[0] < 1:
            raise ValueError("A tubelet needs at least one box")
        arr.setflags(write=False)
        object.__setattr__(self, "boxes", arr)
        object.__setattr__(self, "start_frame", int(self.start_frame))

    @property
    def K(self) -> int:
        return self.boxes.shape[0]

    @property
    def end_frame(self) -> int:
        """Last covered frame (inclusive)"""
        return self.start_frame + self.K - 1

    def frames(self) -> range:
        return range(self.start_frame, self.end_frame + 1)

    def box(self, k: int) -> Box:
        """Box on the k-th frame of the tubelet"""
        return Box.from_array(self.boxes[k])

    def box_at(self, frame: int) -> Box:
        """Box on an absolute frame index"""
        if not self.start_frame <= frame <= self.end_frame:
            raise IndexError(f"Frame {frame} outside tubelet [{self.start_frame}, {self.end_frame}]")
        return self.box(frame - self.start_frame)

    @classmethod
    def from_boxes(cls, start_frame: int, boxes: Iterable[BoxLike]) -> "Tubelet":
        return cls(start_frame, _box_rows(list(boxes)))


@dataclass(frozen=True, eq=False)
class ActionTube:
    """Variable-length box sequence with one class label and one score"""
    start_frame: int
    boxes: np.ndarray
    label: int
    score: float = 1.0

    def __post_init__(self):
        arr = _box_rows(self.boxes)
        if arr.shape[0] < 1:
            raise ValueError("An action tube needs at least one box")
        if not math.isfinite(self.score):
            raise ValueError(f"Tube score must be finite, got {self.score}")
        arr.setflags(write=False)
        object.__setattr__(self, "boxes", arr)
        object.__setattr__(self, "start_frame", int(self.start_frame))
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "score", float(self.score))

    def __len__(self) -> int:
        return self.boxes.shape[0]

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self) - 1

    def frames(self) -> range:
        return range(self.start_frame, self.end_frame + 1)

    def covers(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame

    def box_at(self, frame: int) -> Box:
        if not self.covers(frame):
            raise IndexError(f"Frame {frame} outside tube [{self.start_frame}, {self.end_frame}]")
        return Box.from_array(self.boxes[frame - self.start_frame])

    def window(self, start_frame: int, K: int) -> Tubelet:
        """Ground-truth tubelet of length K starting at start_frame"""
        offset = start_frame - self.start_frame
        if offset < 0 or offset + K > len(self):
            raise IndexError(f"Window [{start_frame}, {start_frame + K - 1}] not inside tube")
        return Tubelet(start_frame, self.boxes[offset:offset + K])


# ---------------------------------------------------------------------------
# IoU
# ---------------------------------------------------------------------------

def box_area(boxes: np.ndarray) -> np.ndarray:
    return (boxes[..., 2] - boxes[..., 0]) * (boxes[..., 3] - boxes[..., 1])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) box arrays -> (N, M)

    A zero union (two zero-area boxes) yields 0.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return np.clip(out, 0.0, 1.0)


def iou_pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise IoU between two (..., 4) arrays of the same shape"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = box_area(a) + box_area(b) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return np.clip(out, 0.0, 1.0)


def iou(a: BoxLike, b: BoxLike) -> float:
    """Intersection over union of two boxes"""
    a_arr = a.as_array() if isinstance(a, Box) else np.asarray(a, dtype=np.float64)
    b_arr = b.as_array() if isinstance(b, Box) else np.asarray(b, dtype=np.float64)
    return float(iou_pairwise(a_arr, b_arr))


# ---------------------------------------------------------------------------
# Tubelets and tubes
# ---------------------------------------------------------------------------

def tubelet_overlap(a: Tubelet, b: Tubelet) -> float:
    """Mean per-frame IoU of two aligned tubelets"""
    if a.start_frame != b.start_frame or a.K != b.K:
        raise GeometryContractError(
            f"Tubelets not aligned: start {a.start_frame}/{b.start_frame}, K {a.K}/{b.K}"
        )
    return float(iou_pairwise(a.boxes, b.boxes).mean())


def tubelet_overlap_matrix(anchor_boxes: np.ndarray, gt_boxes: np.ndarray) -> np.ndarray:
    """Mean-over-frames IoU between anchor cuboids and ground-truth tubelets

    anchor_boxes: (A, 4), constant over the K frames.
    gt_boxes: (G, K, 4).
    Returns (A, G).
    """
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64)
    if gt_boxes.ndim != 3 or gt_boxes.shape[0] == 0:
        return np.zeros((len(anchor_boxes), 0))
    K = gt_boxes.shape[1]
    total = np.zeros((len(anchor_boxes), gt_boxes.shape[0]))
    for k in range(K):
        total += iou_matrix(anchor_boxes, gt_boxes[:, k, :])
    return total / K


def link_tubelet_overlap(last_of_link: Tubelet, t: Tubelet) -> float:
    """Mean IoU over the frames both tubelets cover"""
    first = max(last_of_link.start_frame, t.start_frame)
    last = min(last_of_link.end_frame, t.end_frame)
    if first > last:
        raise GeometryContractError(
            f"Link tubelet [{last_of_link.start_frame}, {last_of_link.end_frame}] and candidate "
            f"[{t.start_frame}, {t.end_frame}] share no frame"
        )
    a = last_of_link.boxes[first - last_of_link.start_frame:last - last_of_link.start_frame + 1]
    b = t.boxes[first - t.start_frame:last - t.start_frame + 1]
    return float(iou_pairwise(a, b).mean())


def tube_overlap(a: ActionTube, b: ActionTube) -> float:
    """Spatio-temporal overlap: per-frame IoU summed over the temporal union

    Frames covered by only one tube contribute 0.
    """
    union_first = min(a.start_frame, b.start_frame)
    union_last = max(a.end_frame, b.end_frame)
    first = max(a.start_frame, b.start_frame)
    last = min(a.end_frame, b.end_frame)
    if first > last:
        return 0.0
    ious = iou_pairwise(
        a.boxes[first - a.start_frame:last - a.start_frame + 1],
        b.boxes[first - b.start_frame:last - b.start_frame + 1],
    )
    return float(ious.sum() / (union_last - union_first + 1))


def temporal_iou(a: ActionTube, b: ActionTube) -> float:
    """Frame-span intersection over union"""
    inter = min(a.end_frame, b.end_frame) - max(a.start_frame, b.start_frame) + 1
    union = max(a.end_frame, b.end_frame) - min(a.start_frame, b.start_frame) + 1
    return max(inter, 0) / union


def motion_overlap(gt: ActionTube, n: int) -> Optional[float]:
    """Mean IoU between each box and the box n frames later

    Returns None when the tube has fewer than n + 1 frames.
    """
    if n < 0:
        raise ValueError(f"Gap must be non-negative, got {n}")
    if n == 0:
        return 1.0
    if len(gt) < n + 1:
        return None
    return float(iou_pairwise(gt.boxes[:-n], gt.boxes[n:]).mean())


def velocity_for_motion_overlap(box_width: float, target: float, n: int) -> float:
    """Horizontal speed (pixels/frame) giving IoU `target` between boxes n frames apart

    A shift d of a w-wide box has IoU (w - d) / (w + d).
    """
    if not 0.0 < target <= 1.0:
        raise ValueError(f"Target overlap must lie in (0, 1], got {target}")
    if n < 1:
        raise ValueError(f"Gap must be >= 1, got {n}")
    return box_width * (1.0 - target) / (1.0 + target) / n

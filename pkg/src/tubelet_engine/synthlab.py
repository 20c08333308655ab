"""
Synthetic videos for the tubelet detector
Renders actors moving on linear trajectories into two per-frame feature streams
and the matching ground-truth tubes, and selects the training sequences
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from .engine.act_types import SignatureMode, Stream
from .engine.anchors import AnchorSet
from .engine.config import ActorConfig, AnchorConfig, DatasetConfig, SceneConfig
from .engine.geometry import ActionTube, Tubelet, iou_matrix
from .engine.head import FeatureVolume, TrainingSample
from .errors import SceneGenerationError, TubeletEngineError

log = logging.getLogger(__name__)

# Channels ahead of the class signature: objectness + 4 geometry values
GEOMETRY_CHANNELS = 5

# Motion direction per class in motion-only mode: right, left, down, up, then diagonals
MOTION_DIRECTIONS: Tuple[Tuple[float, float], ...] = (
    (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0),
    (math.sqrt(0.5), math.sqrt(0.5)), (-math.sqrt(0.5), -math.sqrt(0.5)),
    (math.sqrt(0.5), -math.sqrt(0.5)), (-math.sqrt(0.5), math.sqrt(0.5)),
)

_EDGE_TOLERANCE = 1e-9

T = TypeVar("T")
R = TypeVar("R")


def num_threads() -> int:
    """Worker count from ACT_NUM_THREADS (default 1)"""
    raw = os.environ.get("ACT_NUM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise TubeletEngineError(f"ACT_NUM_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise TubeletEngineError(f"ACT_NUM_THREADS must be >= 1, got {n}")
    return n


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: Optional[int] = None) -> List[R]:
    """map over a thread pool; results come back in input order"""
    workers = num_threads() if workers is None else workers
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(eq=False)
class Scene:
    """One generated video: both feature streams and the ground-truth tubes"""
    config: SceneConfig
    rgb: List[FeatureVolume]
    flow: List[FeatureVolume]
    tubes: List[ActionTube]

    @property
    def video_id(self) -> str:
        return self.config.video_id

    @property
    def num_frames(self) -> int:
        return self.config.num_frames

    def stream(self, stream: Stream) -> List[FeatureVolume]:
        return self.rgb if Stream(stream) == Stream.RGB else self.flow


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

def actor_boxes(actor: ActorConfig, start: int, end: int) -> np.ndarray:
    """Boxes of an actor over frames start..end (inclusive), relative to its start frame"""
    t = np.arange(start - actor.start_frame, end - actor.start_frame + 1, dtype=np.float64)
    x1, y1, x2, y2 = actor.start_box
    cx = 0.5 * (x1 + x2) + actor.velocity[0] * t
    cy = 0.5 * (y1 + y2) + actor.velocity[1] * t
    w = (x2 - x1) + actor.size_drift[0] * t
    h = (y2 - y1) + actor.size_drift[1] * t
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def check_trajectory(boxes: np.ndarray, image_size: Tuple[int, int], label: str) -> None:
    W, H = image_size
    widths = boxes[:, 2] - boxes[:, 0]
    heights = boxes[:, 3] - boxes[:, 1]
    if np.any(widths <= 0) or np.any(heights <= 0):
        raise SceneGenerationError(f"{label}: box size shrinks to zero")
    inside = (
        (boxes[:, 0] >= -_EDGE_TOLERANCE) & (boxes[:, 1] >= -_EDGE_TOLERANCE)
        & (boxes[:, 2] <= W + _EDGE_TOLERANCE) & (boxes[:, 3] <= H + _EDGE_TOLERANCE)
    )
    if not inside.all():
        frame = int(np.flatnonzero(~inside)[0])
        raise SceneGenerationError(f"{label}: trajectory leaves the {W}x{H} image at offset {frame}")


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def reference_boxes(anchors: AnchorConfig, g: int) -> np.ndarray:
    """Square-ratio reference box of every cell of grid g, row-major -> (G*G, 4)"""
    W, H = anchors.image_size
    G = anchors.grid_sizes[g]
    s = anchors.scales[g]
    cy, cx = np.meshgrid((np.arange(G) + 0.5) * H / G, (np.arange(G) + 0.5) * W / G, indexing="ij")
    w, h = s * W, s * H
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1).reshape(-1, 4)


def class_signature(label: int, mode: SignatureMode, dim: int) -> np.ndarray:
    sig = np.zeros(dim)
    if SignatureMode(mode) == SignatureMode.MOTION_ONLY:
        sig[0] = 1.0
    else:
        sig[(label - 1) % dim] = 1.0
    return sig


def _center_size(boxes: np.ndarray):
    w = boxes[..., 2] - boxes[..., 0]
    h = boxes[..., 3] - boxes[..., 1]
    return boxes[..., 0] + 0.5 * w, boxes[..., 1] + 0.5 * h, w, h


def _displacement(boxes: np.ndarray, k: int) -> np.ndarray:
    """(dcx, dcy, dlog w, dlog h) from row k to the next row (or from the previous one at the end)"""
    if len(boxes) == 1:
        return np.zeros(4)
    a, b = (k, k + 1) if k + 1 < len(boxes) else (k - 1, k)
    ax, ay, aw, ah = _center_size(boxes[a])
    bx, by, bw, bh = _center_size(boxes[b])
    return np.array([bx - ax, by - ay, math.log(bw / aw), math.log(bh / ah)])


def _render_grid(
    ref: np.ndarray,
    present: List[Tuple[np.ndarray, np.ndarray, np.ndarray]],
    cfg: SceneConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    """Appearance and motion channels of one grid for one frame -> two (N, D) arrays"""
    N = ref.shape[0]
    D = GEOMETRY_CHANNELS + cfg.signature_dim
    rgb = np.zeros((N, D))
    flow = np.zeros((N, D))
    if not present:
        return rgb, flow

    boxes = np.stack([p[0] for p in present])
    ious = iou_matrix(ref, boxes)
    who = ious.argmax(axis=1)
    obj = ious[np.arange(N), who]
    mask = (obj > 0).astype(np.float64)[:, None]
    b = boxes[who]

    rx, ry, rw, rh = _center_size(ref)
    bx, by, bw, bh = _center_size(b)
    geometry = np.stack([(bx - rx) / rw, (by - ry) / rh, np.log(bw / rw), np.log(bh / rh)], axis=1)
    motion = np.stack([p[1] for p in present])[who]
    motion = np.stack([motion[:, 0] / rw, motion[:, 1] / rh, motion[:, 2], motion[:, 3]], axis=1)
    signature = np.stack([p[2] for p in present])[who] * obj[:, None]

    rgb[:, 0] = obj
    rgb[:, 1:GEOMETRY_CHANNELS] = geometry * mask
    rgb[:, GEOMETRY_CHANNELS:] = signature
    flow[:, 0] = obj
    flow[:, 1:GEOMETRY_CHANNELS] = cfg.motion_gain * motion * mask
    flow[:, GEOMETRY_CHANNELS:] = signature
    return rgb, flow


def generate_scene(cfg: SceneConfig, anchors: Optional[AnchorConfig] = None) -> Scene:
    """Render a scene into per-frame RGB/flow feature volumes and its ground-truth tubes

    Feature grids follow the anchor layout (default: the standard layout at the
    scene's image size). Every cell reads the actor overlapping its reference box
    most: objectness, box offsets and the class signature on the appearance
    stream; objectness, frame-to-frame displacement and the signature on the
    motion stream.
    """
    anchors = anchors or AnchorConfig(image_size=cfg.image_size)
    if tuple(anchors.image_size) != tuple(cfg.image_size):
        raise SceneGenerationError(
            f"{cfg.video_id}: anchor image size {anchors.image_size} vs scene {cfg.image_size}"
        )

    tracks = []
    tubes = []
    for i, actor in enumerate(cfg.actors):
        start, end = cfg.actor_extent(i)
        boxes = actor_boxes(actor, start, end)
        check_trajectory(boxes, cfg.image_size, f"{cfg.video_id} actor {i}")
        tracks.append((start, end, boxes, class_signature(actor.label, cfg.signature_mode, cfg.signature_dim)))
        tubes.append(ActionTube(start_frame=start, boxes=boxes, label=actor.label))

    refs = [reference_boxes(anchors, g) for g in range(len(anchors.grid_sizes))]
    rng = np.random.default_rng(cfg.seed)
    rgb_frames: List[FeatureVolume] = []
    flow_frames: List[FeatureVolume] = []
    for f in range(cfg.num_frames):
        present = [
            (boxes[f - start], _displacement(boxes, f - start), sig)
            for start, end, boxes, sig in tracks
            if start <= f <= end
        ]
        rgb_grids, flow_grids = [], []
        for G, ref in zip(anchors.grid_sizes, refs):
            rgb, flow = _render_grid(ref, present, cfg)
            if cfg.noise_level > 0:
                rgb = rgb + rng.normal(0.0, cfg.noise_level, rgb.shape)
                flow = flow + rng.normal(0.0, cfg.noise_level, flow.shape)
            rgb_grids.append(rgb.reshape(G, G, -1))
            flow_grids.append(flow.reshape(G, G, -1))
        rgb_frames.append(FeatureVolume(rgb_grids))
        flow_frames.append(FeatureVolume(flow_grids))

    log.debug("Generated %s: %d frames, %d actors", cfg.video_id, cfg.num_frames, len(cfg.actors))
    return Scene(config=cfg, rgb=rgb_frames, flow=flow_frames, tubes=tubes)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def sample_scenes(cfg: DatasetConfig) -> List[SceneConfig]:
    """Explicit scenes, or num_videos single-actor scenes drawn from the seed

    Classes are assigned round-robin. In motion-only mode the class fixes the
    motion direction; otherwise the direction is random.
    """
    if cfg.scenes:
        return list(cfg.scenes)

    rng = np.random.default_rng(cfg.seed)
    W, H = cfg.anchors.image_size
    bw, bh = cfg.box_size
    if bw > W or bh > H:
        raise SceneGenerationError(f"Box size {cfg.box_size} does not fit the {W}x{H} image")
    scenes = []
    for v in range(cfg.num_videos):
        label = v % cfg.num_classes + 1
        if cfg.signature_mode == SignatureMode.MOTION_ONLY:
            direction = MOTION_DIRECTIONS[(label - 1) % len(MOTION_DIRECTIONS)]
        else:
            angle = rng.uniform(0.0, 2.0 * math.pi)
            direction = (math.cos(angle), math.sin(angle))
        vx, vy = cfg.speed * direction[0], cfg.speed * direction[1]

        if cfg.trimmed:
            start, end = 0, cfg.num_frames - 1
        else:
            start = int(rng.integers(0, cfg.num_frames // 4 + 1))
            end = int(rng.integers(max(start, (3 * cfg.num_frames) // 4), cfg.num_frames))
        span = end - start

        lo_x, hi_x = 0.5 * bw + max(0.0, -vx * span), W - 0.5 * bw - max(0.0, vx * span)
        lo_y, hi_y = 0.5 * bh + max(0.0, -vy * span), H - 0.5 * bh - max(0.0, vy * span)
        if lo_x > hi_x or lo_y > hi_y:
            raise SceneGenerationError(
                f"{cfg.name}: a {bw}x{bh} box at speed {cfg.speed} cannot stay inside {W}x{H} "
                f"for {span + 1} frames"
            )
        cx, cy = rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
        actor = ActorConfig(
            label=label,
            start_box=(cx - 0.5 * bw, cy - 0.5 * bh, cx + 0.5 * bw, cy + 0.5 * bh),
            velocity=(vx, vy),
            start_frame=start,
            end_frame=end,
        )
        scenes.append(SceneConfig(
            video_id=f"{cfg.name}_{v:03d}",
            image_size=cfg.anchors.image_size,
            num_frames=cfg.num_frames,
            num_classes=cfg.num_classes,
            actors=[actor],
            signature_mode=cfg.signature_mode,
            signature_dim=cfg.signature_dim,
            motion_gain=cfg.motion_gain,
            noise_level=cfg.noise_level,
            seed=int(rng.integers(0, 2**31 - 1)),
        ))
    return scenes


def generate_dataset(cfg: DatasetConfig, workers: Optional[int] = None) -> List[Scene]:
    """All scenes of a dataset, rendered in parallel and returned in order"""
    configs = sample_scenes(cfg)
    scenes = ordered_map(lambda c: generate_scene(c, cfg.anchors), configs, workers)
    log.info("Generated %d videos for dataset %s", len(scenes), cfg.name)
    return scenes


# ---------------------------------------------------------------------------
# Training sequences
# ---------------------------------------------------------------------------

def _extents(tubes: Iterable[ActionTube]) -> List[Tuple[int, int]]:
    return [(t.start_frame, t.end_frame) for t in tubes]


def eligible_sequences(tubes: Sequence[ActionTube], num_frames: int, K: int) -> List[int]:
    """Start frames of K-windows that lie strictly inside an actor's extent

    A window is rejected when it contains the first or last annotated frame of
    any actor, and kept only if at least one actor covers all of it.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    extents = _extents(tubes)
    starts = []
    for f in range(0, num_frames - K + 1):
        last = f + K - 1
        if any(f <= s <= last or f <= e <= last for s, e in extents):
            continue
        if any(s < f and last < e for s, e in extents):
            starts.append(f)
    return starts


def window_ground_truth(tubes: Sequence[ActionTube], start: int, K: int) -> Tuple[List[Tubelet], List[int]]:
    """Ground-truth tubelets and labels of every actor covering the window"""
    covering = [t for t in tubes if t.start_frame <= start and start + K - 1 <= t.end_frame]
    return [t.window(start, K) for t in covering], [t.label for t in covering]


def ground_truth_windows(
    videos: Sequence[Tuple[Sequence[ActionTube], int]],
    K: int,
) -> Dict[int, List[Tubelet]]:
    """Ground-truth tubelets of every eligible window, grouped by class"""
    by_class: Dict[int, List[Tubelet]] = {}
    for tubes, num_frames in videos:
        for label in {t.label for t in tubes}:
            by_class.setdefault(label, [])
        for start in eligible_sequences(tubes, num_frames, K):
            gts, labels = window_ground_truth(tubes, start, K)
            for gt, label in zip(gts, labels):
                by_class[label].append(gt)
    return by_class


def training_samples(
    video_id: str,
    frames: Sequence[FeatureVolume],
    tubes: Sequence[ActionTube],
    anchors: AnchorSet,
    positive_threshold: float = 0.5,
) -> List[TrainingSample]:
    """One TrainingSample per eligible window of a video"""
    K = anchors.K
    samples = []
    for start in eligible_sequences(tubes, len(frames), K):
        gts, labels = window_ground_truth(tubes, start, K)
        samples.append(TrainingSample.build(
            video_id, start, frames[start:start + K], gts, labels, anchors, positive_threshold,
        ))
    return samples

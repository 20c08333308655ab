"""
Online tubelet linking and temporal smoothing into action tubes

Frames are processed in order. At frame f the NMS-filtered candidates are the
tubelets of the sequence starting at f. Live links, in descending link score,
each claim the best unclaimed same-class candidate whose overlap with the link's
last tubelet reaches tau; unclaimed candidates start new links, and links left
unextended for more than `patience` consecutive frames are finalized.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

try:
    from .act_types import SmoothingMode
    from .config import LinkerConfig
    from .geometry import ActionTube, iou, iou_matrix, link_tubelet_overlap, tubelet_overlap
    from .head import ScoredTubelet
except ImportError:
    from act_types import SmoothingMode
    from config import LinkerConfig
    from geometry import ActionTube, iou, iou_matrix, link_tubelet_overlap, tubelet_overlap
    from head import ScoredTubelet

log = logging.getLogger(__name__)


def _candidate_order(dets: Sequence[ScoredTubelet]) -> List[int]:
    """Descending score; ties by anchor index, then input order"""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].anchor_index, i))


def tubelet_nms(
    dets: Mapping[int, Sequence[ScoredTubelet]],
    cfg: LinkerConfig,
) -> Dict[int, List[ScoredTubelet]]:
    """Greedy per-class NMS with tubelet overlap, truncated to the top_n best"""
    kept: Dict[int, List[ScoredTubelet]] = {}
    for label, class_dets in dets.items():
        survivors: List[ScoredTubelet] = []
        for i in _candidate_order(class_dets):
            candidate = class_dets[i]
            if all(tubelet_overlap(candidate.tubelet, s.tubelet) <= cfg.nms_threshold for s in survivors):
                survivors.append(candidate)
                if len(survivors) == cfg.top_n:
                    break
        kept[label] = survivors
    return kept


@dataclass(eq=False)
class Link:
    """Tubelets of one class linked over time"""
    label: int
    tubelets: List[ScoredTubelet] = field(default_factory=list)
    frames_since_extension: int = 0
    link_id: int = 0

    @property
    def score(self) -> float:
        return float(np.mean([t.score for t in self.tubelets]))

    @property
    def last(self) -> ScoredTubelet:
        return self.tubelets[-1]

    def extend(self, tubelet: ScoredTubelet) -> None:
        if self.tubelets and tubelet.start_frame <= self.last.start_frame:
            raise ValueError("Link start frames must strictly increase")
        self.tubelets.append(tubelet)
        self.frames_since_extension = 0


@dataclass(eq=False)
class LinkerState:
    """Live and finished links of one video"""
    live: List[Link] = field(default_factory=list)
    finished: List[Link] = field(default_factory=list)
    next_id: int = 0
    last_frame: Optional[int] = None

    def start_link(self, tubelet: ScoredTubelet) -> Link:
        link = Link(label=tubelet.label, tubelets=[tubelet], link_id=self.next_id)
        self.next_id += 1
        self.live.append(link)
        return link


def link_overlap(link: Link, candidate: ScoredTubelet) -> float:
    """Overlap between a link's last tubelet and a candidate

    When the two no longer share a frame (the link skipped K or more
    sequences) the last box of the link is compared with the first box of the
    candidate.
    """
    last = link.last.tubelet
    if candidate.start_frame <= last.end_frame:
        return link_tubelet_overlap(last, candidate.tubelet)
    return iou(last.boxes[-1], candidate.tubelet.boxes[0])


def link_frame(
    state: LinkerState,
    candidates: Mapping[int, Sequence[ScoredTubelet]],
    frame: int,
    cfg: LinkerConfig,
) -> LinkerState:
    """Advance the linker by one frame

    candidates must already be NMS-filtered and start at `frame`.
    """
    if state.last_frame is not None and frame <= state.last_frame:
        raise ValueError(f"Frames must be processed in increasing order ({frame} after {state.last_frame})")
    state.last_frame = frame

    claimed: Dict[int, set] = {label: set() for label in candidates}
    ordered = {label: _candidate_order(dets) for label, dets in candidates.items()}

    # Stable sort keeps creation order among equal scores.
    for link in sorted(state.live, key=lambda l: -l.score):
        pool = candidates.get(link.label, [])
        match = None
        for i in ordered.get(link.label, []):
            if i in claimed[link.label]:
                continue
            if link_overlap(link, pool[i]) >= cfg.tau:
                match = i
                break
        if match is None:
            link.frames_since_extension += 1
        else:
            claimed[link.label].add(match)
            link.extend(pool[match])

    still_live = []
    for link in state.live:
        if link.frames_since_extension > cfg.patience:
            state.finished.append(link)
        else:
            still_live.append(link)
    state.live = still_live

    for label in sorted(candidates):
        for i in ordered[label]:
            if i not in claimed[label]:
                state.start_link(candidates[label][i])
    return state


def finish(state: LinkerState) -> List[Link]:
    """Finalize every live link; returns all links in creation order"""
    state.finished.extend(state.live)
    state.live = []
    return sorted(state.finished, key=lambda l: l.link_id)


def smooth_to_tube(link: Link, mode: SmoothingMode = SmoothingMode.MEAN) -> ActionTube:
    """Per-frame coordinate mean (or best-scored box) of the tubelets covering each frame"""
    if not link.tubelets:
        raise ValueError("Cannot build a tube from an empty link")
    first = link.tubelets[0].start_frame
    last = max(t.tubelet.end_frame for t in link.tubelets)
    length = last - first + 1
    sums = np.zeros((length, 4))
    counts = np.zeros(length)
    best_score = np.full(length, -np.inf)
    best_box = np.zeros((length, 4))
    for t in link.tubelets:
        offset = t.start_frame - first
        span = slice(offset, offset + t.tubelet.K)
        sums[span] += t.tubelet.boxes
        counts[span] += 1
        better = t.score > best_score[span]
        best_box[span][better] = t.tubelet.boxes[better]
        best_score[span] = np.where(better, t.score, best_score[span])
    covered = counts > 0
    boxes = best_box if SmoothingMode(mode) == SmoothingMode.BEST else sums / np.maximum(counts, 1)[:, None]
    if not covered.all():
        # Gaps only appear with patience > K - 1; fill them by linear interpolation.
        idx = np.arange(length)
        boxes = np.stack([np.interp(idx, idx[covered], boxes[covered, c]) for c in range(4)], axis=1)
    return ActionTube(start_frame=first, boxes=boxes, label=link.label, score=link.score)


def build_tubes(
    detections: Mapping[int, Mapping[int, Sequence[ScoredTubelet]]],
    cfg: LinkerConfig,
    num_frames: Optional[int] = None,
) -> List[ActionTube]:
    """Run the linker over one video

    detections: start frame -> class -> tubelets. Frames without detections
    still advance the termination counters.
    """
    frames = sorted(detections)
    last = max(frames[-1] if frames else -1, (num_frames - cfg.K) if num_frames else -1)
    if last < 0:
        return []
    state = LinkerState()
    for frame in range(0, last + 1):
        candidates = tubelet_nms(detections.get(frame, {}), cfg)
        link_frame(state, candidates, frame, cfg)
    links = finish(state)
    tubes = [smooth_to_tube(link, cfg.smoothing) for link in links]
    log.debug("Linked %d tubes over %d frames", len(tubes), last + 1)
    return tubes


@dataclass(frozen=True)
class FrameDetection:
    """A scored box on one frame"""
    frame: int
    label: int
    score: float
    box: Tuple[float, float, float, float]


def box_nms(boxes: np.ndarray, scores: np.ndarray, threshold: float) -> List[int]:
    """Greedy NMS; ties by input order"""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    keep: List[int] = []
    suppressed = np.zeros(len(scores), dtype=bool)
    if len(scores) == 0:
        return keep
    overlaps = iou_matrix(boxes, boxes)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= overlaps[i] > threshold
    return keep


def frame_level_detections(
    tubelets: Iterable[ScoredTubelet],
    frame: int,
    nms_threshold: float = 0.3,
) -> List[FrameDetection]:
    """Boxes at `frame` from every covering tubelet, per-class NMS"""
    by_class: Dict[int, List[Tuple[float, np.ndarray]]] = {}
    for t in tubelets:
        if t.tubelet.start_frame <= frame <= t.tubelet.end_frame:
            by_class.setdefault(t.label, []).append((t.score, t.tubelet.boxes[frame - t.start_frame]))
    out: List[FrameDetection] = []
    for label in sorted(by_class):
        scores = np.array([s for s, _ in by_class[label]])
        boxes = np.array([b for _, b in by_class[label]])
        for i in box_nms(boxes, scores, nms_threshold):
            out.append(FrameDetection(frame, label, float(scores[i]), tuple(float(v) for v in boxes[i])))
    return out


def all_frame_detections(
    tubelets: Sequence[ScoredTubelet],
    num_frames: int,
    nms_threshold: float = 0.3,
) -> List[FrameDetection]:
    """frame_level_detections over every frame of a video"""
    by_frame: Dict[int, List[ScoredTubelet]] = {}
    for t in tubelets:
        for f in t.tubelet.frames():
            by_frame.setdefault(f, []).append(t)
    out: List[FrameDetection] = []
    for f in range(num_frames):
        out.extend(frame_level_detections(by_frame.get(f, []), f, nms_threshold))
    return out

"""
Evaluation: frame-mAP, video-mAP, MABO, classification accuracy, speed-stratified
frame-mAP and the false-positive error breakdown
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

try:
    from ..errors import TubeletEngineError
    from .act_types import APInterpolation, ErrorFactor, SpeedStratum
    from .geometry import ActionTube, Tubelet, iou, iou_pairwise, tube_overlap
    from .head import ScoredTubelet
    from .linker import FrameDetection
except ImportError:
    from errors import TubeletEngineError
    from act_types import APInterpolation, ErrorFactor, SpeedStratum
    from geometry import ActionTube, Tubelet, iou, iou_pairwise, tube_overlap
    from head import ScoredTubelet
    from linker import FrameDetection

log = logging.getLogger(__name__)

VIDEO_THRESHOLDS = (0.2, 0.5, 0.75)
COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class DetectionItem:
    """A scored detection; key groups detections with the ground truths they may match"""
    key: Hashable
    label: int
    score: float
    geometry: Any


@dataclass(frozen=True)
class GroundTruthItem:
    key: Hashable
    label: int
    geometry: Any
    ignore: bool = False


# ---------------------------------------------------------------------------
# Average precision
# ---------------------------------------------------------------------------

def match_detections(
    dets: Sequence[DetectionItem],
    gts: Sequence[GroundTruthItem],
    overlap_fn: Callable[[Any, Any], float],
    theta: float,
) -> Tuple[List[int], List[Optional[int]]]:
    """Greedy matching by descending score

    Returns the sorted detection indices and, for each, the matched
    ground-truth index (None for a false positive, -1 when it only hits an
    ignored ground truth and is dropped).
    """
    by_key: Dict[Tuple[Hashable, int], List[int]] = defaultdict(list)
    for j, g in enumerate(gts):
        by_key[(g.key, g.label)].append(j)

    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    matched = np.zeros(len(gts), dtype=bool)
    outcome: List[Optional[int]] = []
    for i in order:
        d = dets[i]
        best_j, best_ov = None, -1.0
        hits_ignored = False
        for j in by_key.get((d.key, d.label), []):
            ov = overlap_fn(d.geometry, gts[j].geometry)
            if ov < theta:
                continue
            if gts[j].ignore:
                hits_ignored = True
                continue
            if not matched[j] and ov > best_ov:
                best_j, best_ov = j, ov
        if best_j is not None:
            matched[best_j] = True
            outcome.append(best_j)
        elif hits_ignored:
            outcome.append(-1)
        else:
            outcome.append(None)
    return order, outcome


def precision_recall(tp: np.ndarray, n_gt: int) -> Tuple[np.ndarray, np.ndarray]:
    """Cumulative precision/recall along a score-sorted list of TP flags"""
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / max(n_gt, 1)
    precision = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).eps)
    return precision, recall


def ap_from_pr(
    precision: np.ndarray,
    recall: np.ndarray,
    interpolation: APInterpolation = APInterpolation.CONTINUOUS,
) -> float:
    """Area under the precision-recall curve

    continuous: every-point interpolation over the precision envelope;
    eleven_point: PASCAL VOC 2007 11-point average.
    """
    if APInterpolation(interpolation) == APInterpolation.ELEVEN_POINT:
        ap = 0.0
        for t in np.arange(0.0, 1.1, 0.1):
            p = np.max(precision[recall >= t]) if np.any(recall >= t) else 0.0
            ap += p / 11.0
        return float(ap)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    i = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def average_precision(
    dets: Sequence[DetectionItem],
    gts: Sequence[GroundTruthItem],
    overlap_fn: Callable[[Any, Any], float],
    theta: float = 0.5,
    interpolation: APInterpolation = APInterpolation.CONTINUOUS,
) -> Optional[float]:
    """AP of single-class detections; None when there is no (non-ignored) ground truth"""
    n_gt = sum(1 for g in gts if not g.ignore)
    if n_gt == 0:
        return None
    if not dets:
        return 0.0
    _, outcome = match_detections(dets, gts, overlap_fn, theta)
    tp = np.array([o is not None and o >= 0 for o in outcome if o != -1], dtype=np.float64)
    if tp.size == 0:
        return 0.0
    precision, recall = precision_recall(tp, n_gt)
    return ap_from_pr(precision, recall, interpolation)


def _split_by_class(dets: Sequence[DetectionItem], gts: Sequence[GroundTruthItem]):
    classes = sorted({g.label for g in gts} | {d.label for d in dets})
    det_by = {c: [d for d in dets if d.label == c] for c in classes}
    gt_by = {c: [g for g in gts if g.label == c] for c in classes}
    return classes, det_by, gt_by


def mean_ap(
    dets: Sequence[DetectionItem],
    gts: Sequence[GroundTruthItem],
    overlap_fn: Callable[[Any, Any], float],
    theta: float = 0.5,
    interpolation: APInterpolation = APInterpolation.CONTINUOUS,
) -> Tuple[float, Dict[int, float]]:
    """Mean AP over classes with ground truth"""
    classes, det_by, gt_by = _split_by_class(dets, gts)
    per_class: Dict[int, float] = {}
    for c in classes:
        ap = average_precision(det_by[c], gt_by[c], overlap_fn, theta, interpolation)
        if ap is not None:
            per_class[c] = ap
    value = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return value, per_class


def _box_overlap(a, b) -> float:
    return iou(a, b)


def frame_items(
    frame_dets: Mapping[str, Sequence[FrameDetection]],
    gt_tubes: Mapping[str, Sequence[ActionTube]],
    ignore: Optional[Callable[[str, int, int], bool]] = None,
) -> Tuple[List[DetectionItem], List[GroundTruthItem]]:
    """Flatten per-video frame detections and tube annotations to per-frame items

    ignore(video, tube_index, frame) marks ground-truth boxes excluded from scoring.
    """
    dets = [
        DetectionItem((video, d.frame), d.label, d.score, np.asarray(d.box, dtype=np.float64))
        for video in sorted(frame_dets)
        for d in frame_dets[video]
    ]
    gts = []
    for video in sorted(gt_tubes):
        for t_idx, tube in enumerate(gt_tubes[video]):
            for f in tube.frames():
                gts.append(GroundTruthItem(
                    (video, f), tube.label, tube.boxes[f - tube.start_frame],
                    ignore=bool(ignore(video, t_idx, f)) if ignore else False,
                ))
    return dets, gts


def frame_map(
    frame_dets: Mapping[str, Sequence[FrameDetection]],
    gt_tubes: Mapping[str, Sequence[ActionTube]],
    theta: float = 0.5,
    interpolation: APInterpolation = APInterpolation.CONTINUOUS,
    ignore: Optional[Callable[[str, int, int], bool]] = None,
) -> Tuple[float, Dict[int, float]]:
    """Frame-mAP: per-frame boxes matched by IoU"""
    dets, gts = frame_items(frame_dets, gt_tubes, ignore)
    return mean_ap(dets, gts, _box_overlap, theta, interpolation)


def tube_items(
    tubes: Mapping[str, Sequence[ActionTube]],
    gt_tubes: Mapping[str, Sequence[ActionTube]],
) -> Tuple[List[DetectionItem], List[GroundTruthItem]]:
    dets = [DetectionItem(v, t.label, t.score, t) for v in sorted(tubes) for t in tubes[v]]
    gts = [GroundTruthItem(v, t.label, t) for v in sorted(gt_tubes) for t in gt_tubes[v]]
    return dets, gts


def video_map(
    tubes: Mapping[str, Sequence[ActionTube]],
    gt_tubes: Mapping[str, Sequence[ActionTube]],
    thresholds: Sequence[float] = VIDEO_THRESHOLDS,
    interpolation: APInterpolation = APInterpolation.CONTINUOUS,
) -> Dict[str, float]:
    """Video-mAP at each threshold plus the 0.5:0.95 average"""
    dets, gts = tube_items(tubes, gt_tubes)
    results: Dict[str, float] = {}
    for theta in thresholds:
        results[f"{theta:.2f}"] = mean_ap(dets, gts, tube_overlap, theta, interpolation)[0]
    coco = [mean_ap(dets, gts, tube_overlap, theta, interpolation)[0] for theta in COCO_THRESHOLDS]
    results["0.5:0.95"] = float(np.mean(coco))
    return results


# ---------------------------------------------------------------------------
# MABO and classification accuracy
# ---------------------------------------------------------------------------

def mabo(
    dets: Sequence[DetectionItem],
    gts: Sequence[GroundTruthItem],
    overlap_fn: Callable[[Any, Any], float],
) -> float:
    """Mean over classes of the average best overlap of each ground truth

    Best overlap is taken over all detections sharing the ground truth's key,
    whatever their class or score.
    """
    if not gts or not dets:
        return 0.0
    by_key: Dict[Hashable, List[DetectionItem]] = defaultdict(list)
    for d in dets:
        by_key[d.key].append(d)
    best_per_class: Dict[int, List[float]] = defaultdict(list)
    for g in gts:
        overlaps = [overlap_fn(d.geometry, g.geometry) for d in by_key.get(g.key, [])]
        best_per_class[g.label].append(max(overlaps, default=0.0))
    return float(np.mean([np.mean(v) for v in best_per_class.values()]))


def frame_mabo(
    tubelets: Mapping[str, Sequence[ScoredTubelet]],
    gt_tubes: Mapping[str, Sequence[ActionTube]],
) -> float:
    """MABO of every regressed tubelet box against every ground-truth box"""
    dets = [
        DetectionItem((video, t.start_frame + k), t.label, t.score, t.tubelet.boxes[k])
        for video in sorted(tubelets)
        for t in _unique_tubelets(tubelets[video])
        for k in range(t.tubelet.K)
    ]
    _, gts = frame_items({}, gt_tubes)
    return mabo(dets, gts, _box_overlap)


def video_mabo(tubes: Mapping[str, Sequence[ActionTube]], gt_tubes: Mapping[str, Sequence[ActionTube]]) -> float:
    dets, gts = tube_items(tubes, gt_tubes)
    return mabo(dets, gts, tube_overlap)


def _unique_tubelets(tubelets: Sequence[ScoredTubelet]) -> List[ScoredTubelet]:
    """One entry per (sequence, anchor, stream); per-class entries share geometry and scores"""
    seen = set()
    out = []
    for t in tubelets:
        key = (t.start_frame, t.anchor_index, t.stream)
        if key not in seen:
            seen.add(key)
            out.append(t)
    return out


def tubes_as_tubelets(tubes: Sequence[ActionTube], num_classes: int) -> List[ScoredTubelet]:
    """Tubes as whole-span scored tubelets: tube score on its class, the rest on background"""
    out = []
    for i, t in enumerate(tubes):
        scores = np.zeros(num_classes + 1)
        scores[t.label] = t.score
        scores[0] = max(0.0, 1.0 - t.score)
        tubelet = Tubelet(t.start_frame, t.boxes)
        out.append(ScoredTubelet(tubelet, scores, t.label, anchor_index=-(i + 1), stream="tube"))
    return out


def classification_accuracy(
    tubelets: Mapping[str, Sequence[ScoredTubelet]],
    gt_tubes: Mapping[str, Sequence[ActionTube]],
    match_threshold: float = 0.7,
) -> float:
    """Fraction of ground-truth boxes whose averaged class scores peak at the true class

    Scores are averaged over detected boxes with IoU strictly above the
    threshold; ground-truth boxes without such boxes are left out.
    """
    correct = total = 0
    for video in sorted(gt_tubes):
        by_frame: Dict[int, List[Tuple[np.ndarray, np.ndarray]]] = defaultdict(list)
        for t in _unique_tubelets(tubelets.get(video, [])):
            for k in range(t.tubelet.K):
                by_frame[t.start_frame + k].append((t.tubelet.boxes[k], t.scores[1:]))
        for tube in gt_tubes[video]:
            for f in tube.frames():
                candidates = by_frame.get(f, [])
                if not candidates:
                    continue
                boxes = np.stack([b for b, _ in candidates])
                ious = iou_pairwise(boxes, np.broadcast_to(tube.boxes[f - tube.start_frame], boxes.shape))
                sel = ious > match_threshold
                if not sel.any():
                    continue
                mean_scores = np.mean([candidates[i][1] for i in np.flatnonzero(sel)], axis=0)
                total += 1
                correct += int(np.argmax(mean_scores) + 1 == tube.label)
    if total == 0:
        log.warning("No ground-truth box has a detection above IoU %.2f", match_threshold)
        return 0.0
    return correct / total


# ---------------------------------------------------------------------------
# Error breakdown
# ---------------------------------------------------------------------------

@dataclass
class ErrorBreakdown:
    """Shares of the frame-mAP lost to each factor, averaged over classes"""
    shares: Dict[ErrorFactor, float]
    per_class: pd.DataFrame
    fp_counts: Dict[ErrorFactor, int] = field(default_factory=dict)


def categorize_false_positive(
    det: DetectionItem,
    frame_gts: Sequence[GroundTruthItem],
    video_labels: set,
    theta: float,
) -> ErrorFactor:
    """Exactly one of E_C, E_L, E_T, E_O for a false positive

    E_C needs IoU >= theta with a box of another class. Otherwise any same-class
    box on the frame makes it E_L, including a duplicate of a box an earlier
    detection already matched.
    """
    for g in frame_gts:
        if g.label != det.label and iou(det.geometry, g.geometry) >= theta:
            return ErrorFactor.CLASSIFICATION
    if any(g.label == det.label for g in frame_gts):
        return ErrorFactor.LOCALIZATION
    if det.label in video_labels:
        return ErrorFactor.TIME
    return ErrorFactor.OTHER


FP_FACTORS = (ErrorFactor.LOCALIZATION, ErrorFactor.CLASSIFICATION, ErrorFactor.TIME, ErrorFactor.OTHER)


def error_breakdown(
    frame_dets: Mapping[str, Sequence[FrameDetection]],
    gt_tubes: Mapping[str, Sequence[ActionTube]],
    theta: float = 0.5,
) -> ErrorBreakdown:
    """Partition false positives into E_L/E_C/E_T/E_O and measure missed boxes (E_M)

    The four false-positive shares are the area, over the exact recall
    breakpoints of the frame-mAP sweep, of the fraction of detections so far
    that fall in each category.
    """
    dets, gts = frame_items(frame_dets, gt_tubes)
    gts_by_key: Dict[Hashable, List[GroundTruthItem]] = defaultdict(list)
    for g in gts:
        gts_by_key[g.key].append(g)
    video_labels = {v: {t.label for t in tubes} for v, tubes in gt_tubes.items()}

    classes, det_by, gt_by = _split_by_class(dets, gts)
    rows = {}
    fp_counts = {f: 0 for f in FP_FACTORS}
    for c in classes:
        n_gt = len(gt_by[c])
        if n_gt == 0:
            continue
        order, outcome = match_detections(det_by[c], gt_by[c], _box_overlap, theta)
        counts = {f: 0 for f in FP_FACTORS}
        area = {f: 0.0 for f in FP_FACTORS}
        tp = 0
        prev_recall = 0.0
        n_fp = 0
        for rank, (i, o) in enumerate(zip(order, outcome), start=1):
            if o is not None:
                tp += 1
            else:
                d = det_by[c][i]
                labels = video_labels.get(d.key[0], set())
                factor = categorize_false_positive(d, gts_by_key.get(d.key, []), labels, theta)
                counts[factor] += 1
                n_fp += 1
            recall = tp / n_gt
            if recall != prev_recall:
                for f in FP_FACTORS:
                    area[f] += (recall - prev_recall) * counts[f] / rank
                prev_recall = recall
        if sum(counts.values()) != n_fp:
            raise TubeletEngineError(f"Class {c}: false positives not partitioned")
        for f in FP_FACTORS:
            fp_counts[f] += counts[f]
        rows[c] = {**{f.value: area[f] for f in FP_FACTORS}, ErrorFactor.MISSED.value: 1.0 - tp / n_gt}

    columns = [f.value for f in FP_FACTORS] + [ErrorFactor.MISSED.value]
    per_class = pd.DataFrame.from_dict(rows, orient="index", columns=columns)
    per_class.index.name = "class"
    if per_class.empty:
        shares = {ErrorFactor(col): 0.0 for col in columns}
    else:
        shares = {ErrorFactor(col): float(per_class[col].mean()) for col in columns}
    return ErrorBreakdown(shares=shares, per_class=per_class, fp_counts=fp_counts)


# ---------------------------------------------------------------------------
# Speed strata
# ---------------------------------------------------------------------------

def box_speed(tube: ActionTube, frame: int, gap: int = 10) -> float:
    """Mean IoU of the box at `frame` with the same actor at frame +/- gap

    When neither neighbour exists the largest smaller gap that has one is used;
    a single-frame tube counts as static.
    """
    box = tube.boxes[frame - tube.start_frame]
    for n in range(gap, 0, -1):
        neighbours = [f for f in (frame - n, frame + n) if tube.covers(f)]
        if neighbours:
            return float(np.mean([iou(box, tube.boxes[f - tube.start_frame]) for f in neighbours]))
    return 1.0


def speed_strata(gt_tubes: Mapping[str, Sequence[ActionTube]], gap: int = 10) -> pd.DataFrame:
    """Per ground-truth box speed and its global tertile (slow = highest overlap)

    Tertiles are cut on speed ranks with ties sharing the lowest rank, so boxes of
    equal speed always land in the same stratum.
    """
    records = [
        (video, t_idx, f, tube.label, box_speed(tube, f, gap))
        for video in sorted(gt_tubes)
        for t_idx, tube in enumerate(gt_tubes[video])
        for f in tube.frames()
    ]
    table = pd.DataFrame(records, columns=["video", "tube", "frame", "label", "speed"])
    if table.empty:
        table["stratum"] = pd.Series(dtype=object)
        return table
    rank = table["speed"].rank(method="min", ascending=False) - 1
    tertile = np.minimum((3 * rank.to_numpy() / len(table)).astype(int), 2)
    names = [SpeedStratum.SLOW.value, SpeedStratum.MEDIUM.value, SpeedStratum.FAST.value]
    table["stratum"] = [names[t] for t in tertile]
    return table


def speed_map(
    frame_dets: Mapping[str, Sequence[FrameDetection]],
    gt_tubes: Mapping[str, Sequence[ActionTube]],
    strata: Optional[pd.DataFrame] = None,
    theta: float = 0.5,
    gap: int = 10,
) -> Dict[SpeedStratum, float]:
    """Frame-mAP restricted to each stratum; other strata's boxes are ignored"""
    strata = speed_strata(gt_tubes, gap) if strata is None else strata
    lookup = {
        (row.video, row.tube, row.frame): row.stratum
        for row in strata.itertuples(index=False)
    }
    results = {}
    for stratum in SpeedStratum:
        def ignore(video, t_idx, f, s=stratum.value):
            return lookup.get((video, t_idx, f)) != s
        results[stratum] = frame_map(frame_dets, gt_tubes, theta, ignore=ignore)[0]
    return results


# ---------------------------------------------------------------------------
# PR dumps and reports
# ---------------------------------------------------------------------------

def pr_curves(
    frame_dets: Mapping[str, Sequence[FrameDetection]],
    gt_tubes: Mapping[str, Sequence[ActionTube]],
    theta: float = 0.5,
) -> Dict[int, pd.DataFrame]:
    """Score/precision/recall table per class along the frame-mAP sweep"""
    dets, gts = frame_items(frame_dets, gt_tubes)
    classes, det_by, gt_by = _split_by_class(dets, gts)
    curves = {}
    for c in classes:
        if not gt_by[c]:
            continue
        order, outcome = match_detections(det_by[c], gt_by[c], _box_overlap, theta)
        tp = np.array([o is not None for o in outcome], dtype=np.float64)
        precision, recall = precision_recall(tp, len(gt_by[c]))
        curves[c] = pd.DataFrame({
            "score": [det_by[c][i].score for i in order],
            "precision": precision,
            "recall": recall,
        })
    return curves


@dataclass
class EvalReport:
    """All metrics of one evaluation run"""
    frame_ap: Dict[int, float]
    frame_map: float
    video_map: Dict[str, float]
    video_ap: Dict[int, float]
    frame_mabo: float
    video_mabo: float
    classification_accuracy: float
    errors: Dict[ErrorFactor, float]
    speed_map: Dict[SpeedStratum, float]

    def to_text(self) -> str:
        """One key-value block per metric"""
        blocks = [
            ("frame_map", {"mAP": self.frame_map, **{f"class_{c}": v for c, v in sorted(self.frame_ap.items())}}),
            ("video_map", {**self.video_map, **{f"class_{c}@0.50": v for c, v in sorted(self.video_ap.items())}}),
            ("mabo", {"frame": self.frame_mabo, "video": self.video_mabo}),
            ("classification_accuracy", {"accuracy": self.classification_accuracy}),
            ("errors", {f.value: v for f, v in self.errors.items()}),
            ("speed_map", {s.value: v for s, v in self.speed_map.items()}),
        ]
        lines = []
        for name, values in blocks:
            lines.append(f"[{name}]")
            lines.extend(f"{key} = {value:.6f}" for key, value in values.items())
            lines.append("")
        return "\n".join(lines)

    def to_frame(self) -> pd.DataFrame:
        """Machine-readable (metric, key, value) table"""
        rows = [("frame_map", "mAP", self.frame_map)]
        rows += [("frame_ap", str(c), v) for c, v in sorted(self.frame_ap.items())]
        rows += [("video_map", k, v) for k, v in self.video_map.items()]
        rows += [("video_ap@0.50", str(c), v) for c, v in sorted(self.video_ap.items())]
        rows += [("mabo", "frame", self.frame_mabo), ("mabo", "video", self.video_mabo)]
        rows += [("classification_accuracy", "accuracy", self.classification_accuracy)]
        rows += [("errors", f.value, v) for f, v in self.errors.items()]
        rows += [("speed_map", s.value, v) for s, v in self.speed_map.items()]
        return pd.DataFrame(rows, columns=["metric", "key", "value"])

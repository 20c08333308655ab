"""
Tubelet Detection Engine Core Implementation
===========================================

Main engine class for running the complete pipeline: synthetic data generation,
head training, tubelet detection, linking and evaluation.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd

# Import from parent package
from ..errors import ShapeMismatchError, TubeletEngineError
from ..formats import (
    DatasetManifest, dataset_digest, read_ground_truth, read_manifest, read_video_features, write_dataset,
)
from ..synthlab import generate_dataset, ground_truth_windows, ordered_map, training_samples

# Import from engine package
from .act_types import FusionMode, Stream
from .anchors import AnchorSet, generate_anchors, recall_study
from .config import DatasetConfig, EvalConfig, LinkerConfig, TrainConfig
from .geometry import ActionTube, tube_overlap
from .head import HeadParams, HeadTrainer, ScoredTubelet, TrainResult, floor_detections, fuse, run_stream
from .linker import FrameDetection, all_frame_detections, build_tubes
from .metrics import (
    ErrorBreakdown, EvalReport, classification_accuracy, error_breakdown, frame_mabo, frame_map, mean_ap,
    pr_curves, speed_map, tube_items, tubes_as_tubelets, video_mabo, video_map,
)

log = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class DatasetHandle:
    """A dataset directory with its manifest and ground truth loaded"""
    root: Path
    manifest: DatasetManifest
    ground_truth: Dict[str, List[ActionTube]]
    _features: Dict[tuple, list] = field(default_factory=dict, repr=False)

    @property
    def num_frames(self) -> Dict[str, int]:
        return {v.video_id: v.num_frames for v in self.manifest.videos}

    def features(self, video_id: str, stream: Stream):
        key = (video_id, Stream(stream))
        if key not in self._features:
            self._features[key] = read_video_features(self.root, self.manifest, self.manifest.video(video_id), stream)
        return self._features[key]

    def anchors(self, K: Optional[int] = None) -> AnchorSet:
        config = self.manifest.anchors if K is None else self.manifest.anchors.with_k(K)
        return generate_anchors(config)


class TubeletDetectionEngine:
    """
    Unified tubelet detection engine

    Thin sequential orchestrator over the engine modules; per-video work runs on
    the ACT_NUM_THREADS pool with results merged in input order.
    """

    def __init__(self, workers: Optional[int] = None):
        self.workers = workers

    # ------------------------------------------------------------------
    # Data
    # ------------------------------------------------------------------

    def generate(self, config: DatasetConfig, out_dir: PathLike) -> DatasetManifest:
        scenes = generate_dataset(config, self.workers)
        manifest = write_dataset(out_dir, config, scenes)
        log.info("Dataset %s digest %s", config.name, dataset_digest(out_dir))
        return manifest

    def load(self, data_dir: PathLike) -> DatasetHandle:
        root = Path(data_dir)
        manifest = read_manifest(root)
        return DatasetHandle(root=root, manifest=manifest, ground_truth=read_ground_truth(root, manifest))

    # ------------------------------------------------------------------
    # Training and detection
    # ------------------------------------------------------------------

    def train(
        self,
        data: DatasetHandle,
        K: int,
        stream: Stream = Stream.RGB,
        config: Optional[TrainConfig] = None,
    ) -> TrainResult:
        """Train a head for one stream on every eligible K-sequence of the dataset"""
        config = config or TrainConfig()
        anchors = data.anchors(K)
        entries = data.manifest.videos

        def build(entry):
            return training_samples(
                entry.video_id, data.features(entry.video_id, stream), data.ground_truth[entry.video_id],
                anchors, config.positive_threshold,
            )

        samples = [s for per_video in ordered_map(build, entries, self.workers) for s in per_video]
        if not samples:
            raise TubeletEngineError(f"No eligible {K}-frame sequences in {data.root}")
        D = samples[0].stacked[0].shape[-1] // K
        log.info(
            "Training %s head: K=%d, %d sequences, %d anchors", Stream(stream).value, K, len(samples), len(anchors),
        )
        return HeadTrainer(anchors, D, data.manifest.num_classes, config).fit(samples)

    def _check_model(self, params: HeadParams, data: DatasetHandle, stream: Stream) -> None:
        if params.num_classes != data.manifest.num_classes:
            raise ShapeMismatchError(
                f"{Stream(stream).value} model has {params.num_classes} classes, dataset {data.manifest.num_classes}"
            )
        first = data.manifest.videos[0].video_id if data.manifest.videos else None
        if first is not None and data.features(first, stream)[0].D != params.D:
            raise ShapeMismatchError(f"{Stream(stream).value} model expects D={params.D}")

    def detect(
        self,
        data: DatasetHandle,
        rgb_params: HeadParams,
        flow_params: Optional[HeadParams] = None,
        fusion: FusionMode = FusionMode.UNION,
        score_floor: float = 0.01,
    ) -> Dict[str, List[ScoredTubelet]]:
        """Tubelets of every K-sequence of every video, per class in label order"""
        K = rgb_params.K
        if flow_params is not None and flow_params.K != K:
            raise ShapeMismatchError(f"RGB model K={K} vs flow model K={flow_params.K}")
        self._check_model(rgb_params, data, Stream.RGB)
        if flow_params is not None:
            self._check_model(flow_params, data, Stream.FLOW)
        anchors = data.anchors(K)

        def run(entry) -> List[ScoredTubelet]:
            rgb = data.features(entry.video_id, Stream.RGB)
            flow = data.features(entry.video_id, Stream.FLOW) if flow_params is not None else None
            out: List[ScoredTubelet] = []
            for start in range(0, entry.num_frames - K + 1):
                rgb_out = run_stream(rgb_params, rgb[start:start + K], anchors, start, Stream.RGB.value)
                if flow_params is None:
                    per_class = floor_detections(rgb_out, score_floor)
                else:
                    flow_out = run_stream(flow_params, flow[start:start + K], anchors, start, Stream.FLOW.value)
                    per_class = fuse(rgb_out, flow_out, fusion, score_floor)
                for label in sorted(per_class):
                    out.extend(per_class[label])
            log.debug("%s: %d tubelets", entry.video_id, len(out))
            return out

        entries = data.manifest.videos
        results = ordered_map(run, entries, self.workers)
        return {entry.video_id: dets for entry, dets in zip(entries, results)}

    # ------------------------------------------------------------------
    # Linking
    # ------------------------------------------------------------------

    def link(
        self,
        detections: Mapping[str, Sequence[ScoredTubelet]],
        config: Optional[LinkerConfig] = None,
        num_frames: Optional[Mapping[str, int]] = None,
    ) -> Dict[str, List[ActionTube]]:
        """Action tubes per video; K is taken from the tubelets"""
        videos = list(detections)

        def run(video: str) -> List[ActionTube]:
            dets = detections[video]
            if not dets:
                return []
            K = dets[0].tubelet.K
            cfg = config or LinkerConfig(K=K)
            if cfg.K != K:
                raise ShapeMismatchError(f"Linker configured for K={cfg.K}, tubelets of {video} have K={K}")
            by_frame: Dict[int, Dict[int, List[ScoredTubelet]]] = {}
            for d in dets:
                by_frame.setdefault(d.start_frame, {}).setdefault(d.label, []).append(d)
            tubes = build_tubes(by_frame, cfg, (num_frames or {}).get(video))
            log.debug("%s: %d tubes", video, len(tubes))
            return tubes

        results = ordered_map(run, videos, self.workers)
        return dict(zip(videos, results))

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    def _tubelets_for_eval(
        self,
        data: DatasetHandle,
        tubes: Mapping[str, Sequence[ActionTube]],
        detections: Optional[Mapping[str, Sequence[ScoredTubelet]]],
    ) -> Dict[str, List[ScoredTubelet]]:
        if detections is not None:
            return {v: list(detections.get(v, [])) for v in data.ground_truth}
        return {v: tubes_as_tubelets(tubes.get(v, []), data.manifest.num_classes) for v in data.ground_truth}

    def frame_detections(
        self,
        data: DatasetHandle,
        tubelets: Mapping[str, Sequence[ScoredTubelet]],
        nms_threshold: float = 0.3,
    ) -> Dict[str, List[FrameDetection]]:
        videos = list(data.ground_truth)
        results = ordered_map(
            lambda v: all_frame_detections(tubelets.get(v, []), data.num_frames[v], nms_threshold),
            videos,
            self.workers,
        )
        return dict(zip(videos, results))

    def evaluate(
        self,
        data: DatasetHandle,
        tubes: Mapping[str, Sequence[ActionTube]],
        detections: Optional[Mapping[str, Sequence[ScoredTubelet]]] = None,
        config: Optional[EvalConfig] = None,
    ) -> EvalReport:
        """Full report; frame metrics use the tubelets when given, else the tubes' boxes"""
        config = config or EvalConfig()
        gt = data.ground_truth
        unknown = sorted(set(tubes) - set(gt))
        if unknown:
            log.warning("Ignoring tubes of videos outside the dataset: %s", unknown)
        tubes = {v: list(tubes.get(v, [])) for v in gt}
        tubelets = self._tubelets_for_eval(data, tubes, detections)
        frame_dets = self.frame_detections(data, tubelets, config.frame_nms)

        f_map, f_ap = frame_map(frame_dets, gt, config.frame_iou, config.interpolation)
        _, v_ap = mean_ap(*tube_items(tubes, gt), tube_overlap, 0.5, config.interpolation)
        report = EvalReport(
            frame_ap=f_ap,
            frame_map=f_map,
            video_map=video_map(tubes, gt, config.video_thresholds, config.interpolation),
            video_ap=v_ap,
            frame_mabo=frame_mabo(tubelets, gt),
            video_mabo=video_mabo(tubes, gt),
            classification_accuracy=classification_accuracy(tubelets, gt, config.accuracy_overlap),
            errors=error_breakdown(frame_dets, gt, config.frame_iou).shares,
            speed_map=speed_map(frame_dets, gt, theta=config.frame_iou, gap=config.speed_gap),
        )
        log.info(
            "frame-mAP %.4f, video-mAP %s, MABO %.4f, accuracy %.4f",
            report.frame_map, {k: round(v, 4) for k, v in report.video_map.items()},
            report.frame_mabo, report.classification_accuracy,
        )
        return report

    def pr_curves(
        self,
        data: DatasetHandle,
        tubes: Mapping[str, Sequence[ActionTube]],
        detections: Optional[Mapping[str, Sequence[ScoredTubelet]]] = None,
        config: Optional[EvalConfig] = None,
    ) -> Dict[int, pd.DataFrame]:
        config = config or EvalConfig()
        tubelets = self._tubelets_for_eval(data, tubes, detections)
        return pr_curves(self.frame_detections(data, tubelets, config.frame_nms), data.ground_truth, config.frame_iou)

    def errors(
        self,
        data: DatasetHandle,
        detections: Mapping[str, Sequence[ScoredTubelet]],
        config: Optional[EvalConfig] = None,
    ) -> ErrorBreakdown:
        """Error breakdown of the frame-level detections built from tubelets"""
        config = config or EvalConfig()
        tubelets = {v: list(detections.get(v, [])) for v in data.ground_truth}
        frame_dets = self.frame_detections(data, tubelets, config.frame_nms)
        breakdown = error_breakdown(frame_dets, data.ground_truth, config.frame_iou)
        log.info("Error shares: %s", {f.value: round(v, 4) for f, v in breakdown.shares.items()})
        return breakdown

    def recall(
        self,
        data: DatasetHandle,
        k_values: Sequence[int],
        thresholds: Sequence[float] = (0.5,),
    ) -> pd.DataFrame:
        """Anchor recall per K over the eligible ground-truth tubelets"""
        videos = [(data.ground_truth[v.video_id], v.num_frames) for v in data.manifest.videos]
        return recall_study(data.manifest.anchors, lambda K: ground_truth_windows(videos, K), k_values, thresholds)

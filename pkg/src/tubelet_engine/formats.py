"""
Dataset, detection, tube and model files

Layouts
-------
manifest.yaml
    DatasetManifest dumped with yaml.safe_dump (name, class_names, anchors, K,
    videos[video_id, num_frames, features{rgb, flow}, annotations]); paths are
    relative to the dataset directory.

annotations/<video>.txt and tube files (text, one tube per line)
    video_id label score start_frame x1 y1 x2 y2 [x1 y1 x2 y2 ...]

detection files (text, one scored tubelet per line)
    video_id label score start_frame anchor stream n_scores s_0 .. s_C x1 y1 x2 y2 ...
    (4 coordinates per frame of the tubelet)

features/<video>.<stream>.bin (binary, little-endian)
    magic "ACTFEAT\\0" | version u16 | endianness "<" | stream 8s | frames u32 |
    D u32 | grids u32 | G_0 .. G_n u32 | frames x grids x (G, G, D) float64

model files (binary, little-endian)
    magic "ACTHEAD\\0" | version u16 | K u32 | D u32 | classes u32 | grids u32 |
    shapes u32 | HeadParams.to_vector() float64

Text lines starting with "#" are comments. Reals are written with repr() so
files round-trip exactly. Positions in FormatError are 1-based lines for text
and 1-based records (header = 1, then one per frame) for binaries.
"""

import hashlib
import logging
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import Field, ValidationError, model_validator

from .engine.act_types import Stream
from .engine.config import AnchorConfig, DatasetConfig, StrictModel
from .engine.geometry import ActionTube, Tubelet
from .engine.head import FeatureVolume, HeadParams, ScoredTubelet
from .errors import FormatError

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST_NAME = "manifest.yaml"
FEATURE_MAGIC = b"ACTFEAT\x00"
MODEL_MAGIC = b"ACTHEAD\x00"
FORMAT_VERSION = 1

_FEATURE_HEADER = struct.Struct("<8sHc8sIII")
_MODEL_HEADER = struct.Struct("<8sHIIIII")
_FLOAT = np.dtype("<f8")

ANNOTATION_HEADER = "# video_id label score start_frame x1 y1 x2 y2 ..."
DETECTION_HEADER = "# video_id label score start_frame anchor stream n_scores scores... x1 y1 x2 y2 ..."


class VideoEntry(StrictModel):
    video_id: str = Field(..., pattern=r"^[A-Za-z0-9_\-]+$")
    num_frames: int = Field(..., ge=1)
    features: Dict[str, str] = Field(..., description="Stream name -> feature file")
    annotations: str


class DatasetManifest(StrictModel):
    """Index of a generated dataset directory"""
    name: str
    class_names: List[str] = Field(..., min_length=1)
    anchors: AnchorConfig
    K: int = Field(..., ge=1)
    videos: List[VideoEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def k_matches_anchors(self):
        if self.K != self.anchors.K:
            raise ValueError(f"Manifest K={self.K} differs from anchors K={self.anchors.K}")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def video(self, video_id: str) -> VideoEntry:
        for entry in self.videos:
            if entry.video_id == video_id:
                return entry
        raise KeyError(f"Video '{video_id}' not in manifest. Available: {[v.video_id for v in self.videos]}")


def _real(value: float) -> str:
    return repr(float(value))


def _parse_real(token: str, path: PathLike, line_no: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise FormatError(path, line_no, f"not a number: {token!r}")
    if not np.isfinite(value):
        raise FormatError(path, line_no, f"non-finite value {token!r}")
    return value


def _parse_int(token: str, path: PathLike, line_no: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise FormatError(path, line_no, f"{what} must be an integer, got {token!r}")


def _records(path: PathLike) -> Iterable[Tuple[int, List[str]]]:
    """(line number, tokens) of every non-comment, non-blank line"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except FileNotFoundError:
        raise FormatError(path, 1, "file not found")
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            yield line_no, stripped.split()


def _write_lines(path: PathLike, header: str, lines: Iterable[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n")
        for line in lines:
            f.write(line + "\n")


# ---------------------------------------------------------------------------
# Tubes and annotations
# ---------------------------------------------------------------------------

def write_tubes(path: PathLike, tubes: Mapping[str, Sequence[ActionTube]]) -> None:
    """Ground-truth annotations or linked tubes, one tube per line"""
    _write_lines(path, ANNOTATION_HEADER, (
        " ".join([video, str(t.label), _real(t.score), str(t.start_frame)] + [_real(v) for v in t.boxes.ravel()])
        for video in tubes
        for t in tubes[video]
    ))


def read_tubes(path: PathLike) -> Dict[str, List[ActionTube]]:
    tubes: Dict[str, List[ActionTube]] = {}
    for line_no, tokens in _records(path):
        if len(tokens) < 8 or (len(tokens) - 4) % 4:
            raise FormatError(
                path, line_no, f"expected 4 fields plus 4 coordinates per frame, got {len(tokens)} fields"
            )
        label = _parse_int(tokens[1], path, line_no, "label")
        score = _parse_real(tokens[2], path, line_no)
        start = _parse_int(tokens[3], path, line_no, "start frame")
        coords = np.array([_parse_real(t, path, line_no) for t in tokens[4:]]).reshape(-1, 4)
        try:
            tube = ActionTube(start_frame=start, boxes=coords, label=label, score=score)
        except ValueError as e:
            raise FormatError(path, line_no, str(e))
        tubes.setdefault(tokens[0], []).append(tube)
    return tubes


# ---------------------------------------------------------------------------
# Tubelet detections
# ---------------------------------------------------------------------------

def write_detections(path: PathLike, detections: Mapping[str, Sequence[ScoredTubelet]]) -> None:
    _write_lines(path, DETECTION_HEADER, (
        " ".join(
            [video, str(d.label), _real(d.score), str(d.start_frame), str(d.anchor_index), d.stream,
             str(len(d.scores))]
            + [_real(s) for s in d.scores]
            + [_real(v) for v in d.tubelet.boxes.ravel()]
        )
        for video in detections
        for d in detections[video]
    ))


def read_detections(path: PathLike) -> Dict[str, List[ScoredTubelet]]:
    detections: Dict[str, List[ScoredTubelet]] = {}
    for line_no, tokens in _records(path):
        if len(tokens) < 7:
            raise FormatError(path, line_no, f"expected at least 7 fields, got {len(tokens)}")
        label = _parse_int(tokens[1], path, line_no, "label")
        start = _parse_int(tokens[3], path, line_no, "start frame")
        anchor = _parse_int(tokens[4], path, line_no, "anchor index")
        n_scores = _parse_int(tokens[6], path, line_no, "score count")
        rest = tokens[7:]
        if n_scores < 2 or len(rest) < n_scores + 4 or (len(rest) - n_scores) % 4:
            raise FormatError(path, line_no, f"{len(rest)} values do not split into {n_scores} scores and boxes")
        if not 1 <= label < n_scores:
            raise FormatError(path, line_no, f"label {label} outside 1..{n_scores - 1}")
        scores = np.array([_parse_real(t, path, line_no) for t in rest[:n_scores]])
        boxes = np.array([_parse_real(t, path, line_no) for t in rest[n_scores:]]).reshape(-1, 4)
        try:
            tubelet = Tubelet(start, boxes)
        except ValueError as e:
            raise FormatError(path, line_no, str(e))
        detections.setdefault(tokens[0], []).append(
            ScoredTubelet(tubelet=tubelet, scores=scores, label=label, anchor_index=anchor, stream=tokens[5])
        )
    return detections


# ---------------------------------------------------------------------------
# Feature volumes
# ---------------------------------------------------------------------------

def write_features(path: PathLike, frames: Sequence[FeatureVolume], stream: Stream) -> None:
    if not frames:
        raise ValueError("Cannot write an empty feature file")
    sizes = frames[0].grid_sizes
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_FEATURE_HEADER.pack(
            FEATURE_MAGIC, FORMAT_VERSION, b"<", Stream(stream).value.encode("ascii"),
            len(frames), frames[0].D, len(sizes),
        ))
        f.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for volume in frames:
            for grid in volume.grids:
                f.write(np.ascontiguousarray(grid, dtype=_FLOAT).tobytes())


def read_features(path: PathLike) -> Tuple[Stream, List[FeatureVolume]]:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise FormatError(path, 1, "file not found")
    if len(data) < _FEATURE_HEADER.size:
        raise FormatError(path, 1, "truncated header")
    magic, version, endian, tag, num_frames, D, num_grids = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FormatError(path, 1, f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(path, 1, f"unsupported version {version}")
    if endian != b"<":
        raise FormatError(path, 1, f"unsupported byte order {endian!r}")
    try:
        stream = Stream(tag.rstrip(b"\x00").decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise FormatError(path, 1, f"unknown stream tag {tag!r}")
    offset = _FEATURE_HEADER.size
    if len(data) < offset + 4 * num_grids:
        raise FormatError(path, 1, "truncated grid sizes")
    sizes = struct.unpack_from(f"<{num_grids}I", data, offset)
    offset += 4 * num_grids

    per_frame = sum(G * G * D for G in sizes)
    expected = offset + num_frames * per_frame * _FLOAT.itemsize
    if len(data) != expected:
        record = 2 + (len(data) - offset) // max(per_frame * _FLOAT.itemsize, 1)
        raise FormatError(path, min(record, num_frames + 1), f"{len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype=_FLOAT, offset=offset).astype(np.float64)

    frames = []
    cursor = 0
    for f in range(num_frames):
        grids = []
        for G in sizes:
            n = G * G * D
            grids.append(values[cursor:cursor + n].reshape(G, G, D).copy())
            cursor += n
        try:
            frames.append(FeatureVolume(grids))
        except ValueError as e:
            raise FormatError(path, f + 2, str(e))
    return stream, frames


# ---------------------------------------------------------------------------
# Model parameters
# ---------------------------------------------------------------------------

def save_params(path: PathLike, params: HeadParams) -> None:
    shapes = params.score_w[0].shape[0] if params.score_w else 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_MODEL_HEADER.pack(
            MODEL_MAGIC, FORMAT_VERSION, params.K, params.D, params.num_classes, len(params.score_w), shapes,
        ))
        f.write(params.to_vector().astype(_FLOAT).tobytes())


def load_params(path: PathLike) -> HeadParams:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise FormatError(path, 1, "file not found")
    if len(data) < _MODEL_HEADER.size:
        raise FormatError(path, 1, "truncated header")
    magic, version, K, D, num_classes, grids, shapes = _MODEL_HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise FormatError(path, 1, f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(path, 1, f"unsupported version {version}")
    template = HeadParams.zeros(grids, shapes, K, D, num_classes)
    n = template.to_vector().size
    payload = len(data) - _MODEL_HEADER.size
    if payload != n * _FLOAT.itemsize:
        raise FormatError(path, 2, f"{payload} parameter bytes, expected {n * _FLOAT.itemsize}")
    vector = np.frombuffer(data, dtype=_FLOAT, offset=_MODEL_HEADER.size).astype(np.float64)
    return template.from_vector(vector)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def write_dataset(root: PathLike, cfg: DatasetConfig, scenes) -> DatasetManifest:
    """Write features, annotations and the manifest of generated scenes"""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for scene in scenes:
        features = {}
        for stream in Stream:
            rel = f"features/{scene.video_id}.{stream.value}.bin"
            write_features(root / rel, scene.stream(stream), stream)
            features[stream.value] = rel
        annotations = f"annotations/{scene.video_id}.txt"
        write_tubes(root / annotations, {scene.video_id: scene.tubes})
        entries.append(VideoEntry(
            video_id=scene.video_id, num_frames=scene.num_frames, features=features, annotations=annotations,
        ))
    manifest = DatasetManifest(
        name=cfg.name, class_names=cfg.class_names, anchors=cfg.anchors, K=cfg.anchors.K, videos=entries,
    )
    with open(root / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as f:
        yaml.safe_dump(manifest.model_dump(mode="json"), f, sort_keys=False)
    log.info("Wrote %d videos to %s", len(entries), root)
    return manifest


def read_manifest(root: PathLike) -> DatasetManifest:
    """Load and check a dataset manifest; every referenced file must exist"""
    root = Path(root)
    path = root / MANIFEST_NAME
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError:
        raise FormatError(path, 1, "file not found")
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise FormatError(path, mark.line + 1 if mark else 1, f"invalid YAML: {e}")
    try:
        manifest = DatasetManifest.model_validate(raw)
    except ValidationError as e:
        raise FormatError(path, 1, f"invalid manifest: {e.errors()[0]['msg']}")
    for position, entry in enumerate(manifest.videos, start=1):
        for rel in [*entry.features.values(), entry.annotations]:
            if not (root / rel).is_file():
                raise FormatError(path, position, f"video {entry.video_id}: missing file {rel}")
    return manifest


def read_video_features(
    root: PathLike, manifest: DatasetManifest, entry: VideoEntry, stream: Stream
) -> List[FeatureVolume]:
    """Feature volumes of one stream, shape-checked against the manifest"""
    path = Path(root) / entry.features[Stream(stream).value]
    tag, frames = read_features(path)
    if tag != Stream(stream):
        raise FormatError(path, 1, f"stream tag {tag.value}, expected {Stream(stream).value}")
    if len(frames) != entry.num_frames:
        raise FormatError(path, 1, f"{len(frames)} frames, manifest says {entry.num_frames}")
    if frames[0].grid_sizes != list(manifest.anchors.grid_sizes):
        raise FormatError(path, 1, f"grid sizes {frames[0].grid_sizes} vs anchors {manifest.anchors.grid_sizes}")
    return frames


def read_ground_truth(root: PathLike, manifest: DatasetManifest) -> Dict[str, List[ActionTube]]:
    """Ground-truth tubes of every video, in manifest order"""
    gt: Dict[str, List[ActionTube]] = {}
    for entry in manifest.videos:
        path = Path(root) / entry.annotations
        tubes = read_tubes(path)
        unknown = set(tubes) - {entry.video_id}
        if unknown:
            raise FormatError(path, 1, f"annotations for other videos: {sorted(unknown)}")
        for t in tubes.get(entry.video_id, []):
            if t.end_frame >= entry.num_frames or not 1 <= t.label <= manifest.num_classes:
                raise FormatError(path, 1, f"tube [{t.start_frame}, {t.end_frame}] label {t.label} out of range")
        gt[entry.video_id] = tubes.get(entry.video_id, [])
    return gt


def dataset_digest(root: PathLike) -> str:
    """sha256 over every file under root (relative path, then bytes) in sorted order"""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(path.relative_to(root).as_posix().encode("utf-8") + b"\x00")
        digest.update(path.read_bytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def write_table(path: PathLike, table: pd.DataFrame, index: bool = True, float_format: Optional[str] = "%.6f") -> None:
    """Tab-separated table (recall studies, loss curves, reports, PR curves)"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, sep="\t", index=index, float_format=float_format, lineterminator="\n")

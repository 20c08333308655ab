"""
Anchor cuboid generation and the anchor recall study
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Sequence, Tuple, Union, overload

import numpy as np
import pandas as pd

try:
    from .config import AnchorConfig
    from .geometry import Box, Tubelet, tubelet_overlap_matrix
except ImportError:
    from config import AnchorConfig
    from geometry import Box, Tubelet, tubelet_overlap_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnchorCuboid:
    """A box replicated over K frames"""
    box: Box
    source_grid: int
    cell: Tuple[int, int]
    shape_index: int = 0
    K: int = 1

    def as_tubelet(self, start_frame: int = 0) -> Tubelet:
        return Tubelet(start_frame, np.tile(self.box.as_array(), (self.K, 1)))


class AnchorSet(Sequence[AnchorCuboid]):
    """Array-backed, ordered collection of anchor cuboids

    Ordering is grid-major, then row, column and shape, so the anchors of grid g
    form a contiguous (G, G, shapes) block.
    """

    def __init__(
        self,
        config: AnchorConfig,
        boxes: np.ndarray,
        grid: np.ndarray,
        rows: np.ndarray,
        cols: np.ndarray,
        shapes: np.ndarray,
    ):
        self.config = config
        self.boxes = boxes
        self.grid = grid
        self.rows = rows
        self.cols = cols
        self.shapes = shapes
        for arr in (self.boxes, self.grid, self.rows, self.cols, self.shapes):
            arr.setflags(write=False)

    @property
    def K(self) -> int:
        return self.config.K

    @property
    def shapes_per_cell(self) -> int:
        return self.config.shapes_per_cell()

    def grid_slice(self, g: int) -> slice:
        """Index range of the anchors generated by grid g"""
        per_cell = self.shapes_per_cell
        start = sum(G * G * per_cell for G in self.config.grid_sizes[:g])
        G = self.config.grid_sizes[g]
        return slice(start, start + G * G * per_cell)

    def __len__(self) -> int:
        return self.boxes.shape[0]

    @overload
    def __getitem__(self, index: int) -> AnchorCuboid: ...

    @overload
    def __getitem__(self, index: slice) -> List[AnchorCuboid]: ...

    def __getitem__(self, index: Union[int, slice]):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        if index < 0:
            index += len(self)
        if not 0 <= index < len(self):
            raise IndexError(f"Anchor index {index} out of range")
        return AnchorCuboid(
            box=Box.from_array(self.boxes[index]),
            source_grid=int(self.grid[index]),
            cell=(int(self.rows[index]), int(self.cols[index])),
            shape_index=int(self.shapes[index]),
            K=self.K,
        )

    def __iter__(self) -> Iterator[AnchorCuboid]:
        for i in range(len(self)):
            yield self[i]

    def same_layout(self, other: "AnchorSet") -> bool:
        return self.K == other.K and np.array_equal(self.boxes, other.boxes)


def anchor_shapes(config: AnchorConfig, g: int) -> List[Tuple[float, float]]:
    """(width, height) of every anchor shape on grid g"""
    W, H = config.image_size
    s = config.scales[g]
    shapes = [(s * W * math.sqrt(r), s * H / math.sqrt(r)) for r in config.aspect_ratios]
    if config.extra_square:
        s_next = config.scales[g + 1] if g + 1 < len(config.scales) else 1.0
        s_extra = math.sqrt(s * s_next)
        shapes.append((s_extra * W, s_extra * H))
    return shapes


def generate_anchors(config: AnchorConfig) -> AnchorSet:
    """Dense anchor cuboids centered on every cell of every grid"""
    W, H = config.image_size
    all_boxes, all_grid, all_rows, all_cols, all_shapes = [], [], [], [], []
    for g, G in enumerate(config.grid_sizes):
        shapes = np.array(anchor_shapes(config, g))
        R = len(shapes)
        rows, cols, shape_idx = np.meshgrid(np.arange(G), np.arange(G), np.arange(R), indexing="ij")
        rows, cols, shape_idx = rows.ravel(), cols.ravel(), shape_idx.ravel()
        cx = (cols + 0.5) * W / G
        cy = (rows + 0.5) * H / G
        w = shapes[shape_idx, 0]
        h = shapes[shape_idx, 1]
        boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
        if config.clip:
            boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0.0, W)
            boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0.0, H)
        all_boxes.append(boxes)
        all_grid.append(np.full(len(boxes), g))
        all_rows.append(rows)
        all_cols.append(cols)
        all_shapes.append(shape_idx)

    anchors = AnchorSet(
        config,
        np.concatenate(all_boxes).astype(np.float64),
        np.concatenate(all_grid).astype(np.int64),
        np.concatenate(all_rows).astype(np.int64),
        np.concatenate(all_cols).astype(np.int64),
        np.concatenate(all_shapes).astype(np.int64),
    )
    log.debug("Generated %d anchors over grids %s", len(anchors), config.grid_sizes)
    return anchors


def max_anchor_overlap(anchors: AnchorSet, tubelets: Sequence[Tubelet]) -> np.ndarray:
    """Best anchor tubelet overlap for each ground-truth tubelet"""
    if not tubelets:
        return np.zeros(0)
    for t in tubelets:
        if t.K != anchors.K:
            raise ValueError(f"Tubelet length {t.K} does not match anchor K={anchors.K}")
    gt = np.stack([t.boxes for t in tubelets])
    return tubelet_overlap_matrix(anchors.boxes, gt).max(axis=0)


def anchor_recall(
    anchors: AnchorSet,
    gt: Mapping[int, Sequence[Tubelet]],
    thresholds: Sequence[float],
) -> pd.DataFrame:
    """Fraction of ground-truth tubelets whose best anchor overlap reaches each threshold

    Rows are classes plus a final "mean" row (unweighted over classes that have
    tubelets); columns are thresholds.
    An empty anchor set recalls nothing, even at threshold 0.
    """
    rows: Dict[str, List[float]] = {}
    for label in sorted(gt):
        tubelets = gt[label]
        if not tubelets:
            rows[str(label)] = [float("nan")] * len(thresholds)
            continue
        if not len(anchors):
            rows[str(label)] = [0.0] * len(thresholds)
            continue
        best = max_anchor_overlap(anchors, tubelets)
        rows[str(label)] = [float(np.mean(best >= theta)) for theta in thresholds]

    table = pd.DataFrame.from_dict(rows, orient="index", columns=[float(t) for t in thresholds])
    table.index.name = "class"
    table.loc["mean"] = table.mean(axis=0, skipna=True)
    return table


def recall_study(
    base_config: AnchorConfig,
    gt_for_k,
    k_values: Sequence[int],
    thresholds: Sequence[float],
) -> pd.DataFrame:
    """Mean anchor recall for each sequence length K

    gt_for_k: callable K -> {class: [Tubelet]} giving the ground-truth tubelets
    of length K.
    """
    results = {}
    for K in k_values:
        anchors = generate_anchors(base_config.with_k(K))
        table = anchor_recall(anchors, gt_for_k(K), thresholds)
        results[K] = table.loc["mean"].tolist()
        log.info("K=%d recall@%s = %s", K, list(thresholds), [round(v, 4) for v in results[K]])
    study = pd.DataFrame.from_dict(results, orient="index", columns=[float(t) for t in thresholds])
    study.index.name = "K"
    return study

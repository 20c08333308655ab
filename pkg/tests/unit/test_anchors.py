"""
Unit tests for anchor cuboid generation and anchor recall
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from tubelet_engine import AnchorConfig, Tubelet
from tubelet_engine.engine.anchors import (
    AnchorSet, anchor_recall, anchor_shapes, generate_anchors, max_anchor_overlap, recall_study,
)

SMALL_LAYOUT = AnchorConfig(
    image_size=(120, 120), grid_sizes=[8, 4], scales=[0.3, 0.6], aspect_ratios=[1.0], extra_square=False, K=2,
)


@st.composite
def tubelets_in_image(draw, K=2, size=120):
    boxes = []
    for _ in range(K):
        x1 = draw(st.integers(0, size - 2))
        y1 = draw(st.integers(0, size - 2))
        boxes.append([x1, y1, draw(st.integers(x1 + 1, size)), draw(st.integers(y1 + 1, size))])
    return Tubelet(0, np.array(boxes, dtype=float))


class TestAnchorConfig:
    """Test anchor layout validation"""

    def test_defaults(self):
        cfg = AnchorConfig()
        assert cfg.image_size == (300, 300)
        assert cfg.grid_sizes == [19, 10, 5, 3, 1]
        assert cfg.shapes_per_cell() == 6

    def test_rejects_non_decreasing_grids(self):
        with pytest.raises(ValidationError):
            AnchorConfig(grid_sizes=[10, 10], scales=[0.2, 0.4])

    def test_rejects_scale_count_mismatch(self):
        with pytest.raises(ValidationError):
            AnchorConfig(grid_sizes=[10, 5], scales=[0.2])

    def test_rejects_bad_values(self):
        with pytest.raises(ValidationError):
            AnchorConfig(grid_sizes=[4], scales=[0.0])
        with pytest.raises(ValidationError):
            AnchorConfig(grid_sizes=[4], scales=[0.5], aspect_ratios=[-1.0])
        with pytest.raises(ValidationError):
            AnchorConfig(K=0)
        with pytest.raises(ValidationError):
            AnchorConfig(unknown_field=1)

    def test_with_k(self, small_anchor_config):
        cfg = small_anchor_config.with_k(8)
        assert cfg.K == 8
        assert small_anchor_config.K == 2
        assert cfg.grid_sizes == small_anchor_config.grid_sizes


class TestAnchorGeneration:
    """Test dense anchor cuboids"""

    def test_default_count(self):
        anchors = generate_anchors(AnchorConfig())
        assert len(anchors) == (19 * 19 + 10 * 10 + 5 * 5 + 3 * 3 + 1) * 6

    def test_shapes_follow_ratios(self):
        cfg = AnchorConfig()
        shapes = anchor_shapes(cfg, 0)
        assert len(shapes) == 6
        w, h = shapes[1]
        assert w == pytest.approx(0.1 * 300 * math.sqrt(2.0))
        assert h == pytest.approx(0.1 * 300 / math.sqrt(2.0))
        assert shapes[-1][0] == pytest.approx(math.sqrt(0.1 * 0.2) * 300)
        # The last grid pairs its scale with 1.0
        assert anchor_shapes(cfg, 4)[-1][0] == pytest.approx(math.sqrt(0.725) * 300)

    def test_ordering_and_centers(self, small_anchor_config):
        anchors = generate_anchors(small_anchor_config)
        assert len(anchors) == 8 * 8 + 4 * 4
        assert anchors.grid_slice(0) == slice(0, 64)
        assert anchors.grid_slice(1) == slice(64, 80)

        cuboid = anchors[2 * 8 + 3]
        assert cuboid.source_grid == 0
        assert cuboid.cell == (2, 3)
        assert cuboid.box.x == pytest.approx(52.5)
        assert cuboid.box.y == pytest.approx(37.5)
        assert cuboid.box.w == pytest.approx(36.0)
        assert cuboid.K == 2
        assert anchors[-1].source_grid == 1

    def test_clipped_to_image(self, small_anchor_config):
        anchors = generate_anchors(small_anchor_config)
        assert np.all(anchors.boxes[:, :2] >= 0.0)
        assert np.all(anchors.boxes[:, 2:] <= 120.0)
        with pytest.raises(ValueError):
            anchors.boxes[0, 0] = 1.0

    def test_as_tubelet(self, small_anchor_config):
        cuboid = generate_anchors(small_anchor_config)[0]
        t = cuboid.as_tubelet(start_frame=4)
        assert t.K == 2 and t.start_frame == 4
        np.testing.assert_allclose(t.boxes[0], t.boxes[1])

    def test_same_layout(self, small_anchor_config):
        a = generate_anchors(small_anchor_config)
        assert a.same_layout(generate_anchors(small_anchor_config))
        assert not a.same_layout(generate_anchors(small_anchor_config.with_k(3)))


class TestAnchorRecall:
    """Test the recall of ground-truth tubelets by anchor cuboids"""

    def aligned_tubelet(self, K=2):
        return Tubelet(0, np.tile([34.5, 19.5, 70.5, 55.5], (K, 1)))

    def test_exact_anchor_is_recalled(self, small_anchor_config):
        anchors = generate_anchors(small_anchor_config)
        best = max_anchor_overlap(anchors, [self.aligned_tubelet()])
        assert best[0] == pytest.approx(1.0)

    def test_length_mismatch_raises(self, small_anchor_config):
        anchors = generate_anchors(small_anchor_config)
        with pytest.raises(ValueError):
            max_anchor_overlap(anchors, [self.aligned_tubelet(K=3)])

    def test_recall_table(self, small_anchor_config):
        anchors = generate_anchors(small_anchor_config)
        tiny = Tubelet(0, np.tile([0.0, 0.0, 2.0, 2.0], (2, 1)))
        table = anchor_recall(anchors, {1: [self.aligned_tubelet()], 2: [tiny]}, [0.5, 0.7])
        assert list(table.index) == ["1", "2", "mean"]
        assert table.loc["1"].tolist() == [1.0, 1.0]
        assert table.loc["2"].tolist() == [0.0, 0.0]
        assert table.loc["mean", 0.5] == pytest.approx(0.5)

    def test_recall_study_rows_per_k(self, small_anchor_config):
        def gt_for_k(K):
            return {1: [Tubelet(0, np.tile([34.5, 19.5, 70.5, 55.5], (K, 1)))]}

        study = recall_study(small_anchor_config, gt_for_k, [1, 2, 4], [0.5])
        assert list(study.index) == [1, 2, 4]
        assert study[0.5].tolist() == [1.0, 1.0, 1.0]

    def test_empty_anchor_set_recalls_nothing(self):
        empty = AnchorSet(
            SMALL_LAYOUT, np.zeros((0, 4)), *(np.zeros(0, dtype=np.int64) for _ in range(4)),
        )
        table = anchor_recall(empty, {1: [self.aligned_tubelet()]}, [0.0, 0.5])
        assert table.loc["1"].tolist() == [0.0, 0.0]
        assert table.loc["mean"].tolist() == [0.0, 0.0]

    @given(
        st.lists(tubelets_in_image(), min_size=1, max_size=6),
        st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6, unique=True),
    )
    @settings(max_examples=100, deadline=None)
    def test_recall_non_increasing_in_threshold(self, tubelets, thresholds):
        thresholds = sorted(thresholds)
        table = anchor_recall(generate_anchors(SMALL_LAYOUT), {1: tubelets}, thresholds)
        values = table.loc["1"].tolist()
        assert all(a >= b for a, b in zip(values, values[1:]))

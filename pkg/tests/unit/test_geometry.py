"""
Unit tests for box, tubelet and tube geometry
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubelet_engine import ActionTube, Box, GeometryContractError, Tubelet
from tubelet_engine.engine.geometry import (
    iou, iou_matrix, link_tubelet_overlap, motion_overlap, temporal_iou, tube_overlap, tubelet_overlap,
    tubelet_overlap_matrix, velocity_for_motion_overlap,
)


@st.composite
def int_boxes(draw, size=16):
    x1 = draw(st.integers(0, size - 1))
    y1 = draw(st.integers(0, size - 1))
    x2 = draw(st.integers(x1 + 1, size))
    y2 = draw(st.integers(y1 + 1, size))
    return (x1, y1, x2, y2)


def raster(box, size=16):
    mask = np.zeros((size, size), dtype=bool)
    x1, y1, x2, y2 = box
    mask[y1:y2, x1:x2] = True
    return mask


def raster_iou(a, b):
    ma, mb = raster(a), raster(b)
    return (ma & mb).sum() / (ma | mb).sum()


@st.composite
def int_tubes(draw, max_start=4, max_length=4):
    start = draw(st.integers(0, max_start))
    boxes = draw(st.lists(int_boxes(), min_size=1, max_size=max_length))
    return ActionTube(start_frame=start, boxes=np.array(boxes, dtype=float), label=1)


@st.composite
def aligned_tubelet_pairs(draw, max_k=4):
    K = draw(st.integers(1, max_k))
    a = draw(st.lists(int_boxes(), min_size=K, max_size=K))
    b = draw(st.lists(int_boxes(), min_size=K, max_size=K))
    return a, b


class TestBoxIoU:
    """Test 2D box overlap"""

    def test_box_rejects_bad_corners(self):
        with pytest.raises(ValueError):
            Box(10, 0, 5, 10)
        with pytest.raises(ValueError):
            Box(0, 0, float("nan"), 1)

    def test_box_center_and_area(self):
        box = Box.from_center(10, 20, 4, 6)
        assert (box.x1, box.y1, box.x2, box.y2) == (8, 17, 12, 23)
        assert box.area == 24
        assert (box.x, box.y) == (10, 20)

    def test_known_values(self):
        assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == pytest.approx(1.0)
        assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1.0 / 3.0)
        assert iou((0, 0, 10, 10), (10, 0, 20, 10)) == 0.0
        assert iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) == 0.0

    def test_zero_area_boxes(self):
        assert iou((5, 5, 5, 5), (5, 5, 5, 5)) == 0.0
        assert iou((0, 0, 0, 10), (0, 0, 10, 10)) == 0.0

    @given(int_boxes(), int_boxes())
    @settings(max_examples=1000, deadline=None)
    def test_matches_rasterized_overlap(self, a, b):
        """Integer boxes: IoU equals the pixel-count ratio"""
        assert iou(a, b) == pytest.approx(raster_iou(a, b), abs=1e-9)

    @given(int_boxes(), int_boxes())
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        value = iou(a, b)
        assert 0.0 <= value <= 1.0
        assert value == pytest.approx(iou(b, a))

    def test_matrix_agrees_with_scalar(self):
        a = np.array([[0, 0, 10, 10], [5, 5, 15, 15]], dtype=float)
        b = np.array([[0, 0, 10, 10], [2, 2, 8, 8], [20, 20, 30, 30]], dtype=float)
        m = iou_matrix(a, b)
        assert m.shape == (2, 3)
        for i in range(2):
            for j in range(3):
                assert m[i, j] == pytest.approx(iou(a[i], b[j]))


class TestTubelets:
    """Test tubelet construction and overlap"""

    def test_tubelet_is_read_only(self):
        t = Tubelet(3, np.array([[0, 0, 10, 10], [1, 0, 11, 10]], dtype=float))
        assert t.K == 2
        assert t.end_frame == 4
        assert list(t.frames()) == [3, 4]
        with pytest.raises(ValueError):
            t.boxes[0, 0] = 5.0

    def test_box_at(self):
        t = Tubelet.from_boxes(2, [(0, 0, 10, 10), (2, 0, 12, 10)])
        assert t.box_at(3) == Box(2, 0, 12, 10)
        with pytest.raises(IndexError):
            t.box_at(4)

    def test_overlap_is_mean_over_frames(self):
        a = Tubelet.from_boxes(0, [(0, 0, 10, 10), (0, 0, 10, 10)])
        b = Tubelet.from_boxes(0, [(0, 0, 10, 10), (5, 0, 15, 10)])
        assert tubelet_overlap(a, b) == pytest.approx((1.0 + 1.0 / 3.0) / 2)

    @given(aligned_tubelet_pairs())
    @settings(max_examples=1000, deadline=None)
    def test_overlap_matches_rasterized_mean(self, pair):
        a, b = pair
        expected = np.mean([raster_iou(x, y) for x, y in zip(a, b)])
        assert tubelet_overlap(Tubelet.from_boxes(3, a), Tubelet.from_boxes(3, b)) == pytest.approx(expected, abs=1e-9)

    def test_misaligned_tubelets_raise(self):
        a = Tubelet.from_boxes(0, [(0, 0, 10, 10), (0, 0, 10, 10)])
        b = Tubelet.from_boxes(1, [(0, 0, 10, 10), (0, 0, 10, 10)])
        c = Tubelet.from_boxes(0, [(0, 0, 10, 10)])
        with pytest.raises(GeometryContractError):
            tubelet_overlap(a, b)
        with pytest.raises(GeometryContractError):
            tubelet_overlap(a, c)

    def test_overlap_matrix_for_constant_anchors(self):
        anchors = np.array([[0, 0, 10, 10], [100, 100, 110, 110]], dtype=float)
        gt = np.array([[[0, 0, 10, 10], [5, 0, 15, 10]]], dtype=float)
        m = tubelet_overlap_matrix(anchors, gt)
        assert m.shape == (2, 1)
        assert m[0, 0] == pytest.approx((1.0 + 1.0 / 3.0) / 2)
        assert m[1, 0] == 0.0
        assert tubelet_overlap_matrix(anchors, np.zeros((0, 2, 4))).shape == (2, 0)

    def test_link_overlap_uses_shared_frames(self):
        last = Tubelet.from_boxes(0, [(0, 0, 10, 10), (0, 0, 10, 10), (5, 0, 15, 10)])
        cand = Tubelet.from_boxes(1, [(0, 0, 10, 10), (0, 0, 10, 10), (50, 50, 60, 60)])
        assert link_tubelet_overlap(last, cand) == pytest.approx((1.0 + 1.0 / 3.0) / 2)

    def test_link_overlap_requires_shared_frame(self):
        last = Tubelet.from_boxes(0, [(0, 0, 10, 10)])
        cand = Tubelet.from_boxes(2, [(0, 0, 10, 10)])
        with pytest.raises(GeometryContractError):
            link_tubelet_overlap(last, cand)


class TestTubes:
    """Test action tubes and spatio-temporal overlap"""

    def tube(self, start, length, label=1, box=(0, 0, 10, 10), dx=0.0):
        boxes = np.array([[box[0] + dx * i, box[1], box[2] + dx * i, box[3]] for i in range(length)], dtype=float)
        return ActionTube(start_frame=start, boxes=boxes, label=label)

    def test_window(self):
        t = self.tube(2, 6, dx=1.0)
        w = t.window(3, 2)
        assert w.start_frame == 3
        np.testing.assert_allclose(w.boxes[0], [1, 0, 11, 10])
        with pytest.raises(IndexError):
            t.window(6, 3)

    def test_identical_tubes(self):
        t = self.tube(0, 5)
        assert tube_overlap(t, t) == pytest.approx(1.0)
        assert temporal_iou(t, t) == pytest.approx(1.0)

    def test_temporal_union_penalizes_partial_coverage(self):
        a = self.tube(0, 4)
        b = self.tube(2, 4)
        assert tube_overlap(a, b) == pytest.approx(2.0 / 6.0)
        assert temporal_iou(a, b) == pytest.approx(2.0 / 6.0)

    def test_disjoint_in_time(self):
        assert tube_overlap(self.tube(0, 3), self.tube(5, 3)) == 0.0
        assert temporal_iou(self.tube(0, 3), self.tube(5, 3)) == 0.0

    def test_tube_rejects_bad_score(self):
        with pytest.raises(ValueError):
            ActionTube(0, np.array([[0, 0, 1, 1]], dtype=float), label=1, score=float("inf"))

    def test_motion_overlap(self):
        static = self.tube(0, 12)
        assert motion_overlap(static, 10) == pytest.approx(1.0)
        assert motion_overlap(static, 0) == 1.0
        assert motion_overlap(self.tube(0, 5), 10) is None
        with pytest.raises(ValueError):
            motion_overlap(static, -1)

    @pytest.mark.parametrize("target", [0.3, 0.6, 0.9])
    def test_velocity_calibration(self, target):
        """A track at the calibrated speed has the requested motion overlap"""
        speed = velocity_for_motion_overlap(60.0, target, 10)
        t = self.tube(0, 30, box=(0, 0, 60, 60), dx=speed)
        assert motion_overlap(t, 10) == pytest.approx(target)

    def test_velocity_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            velocity_for_motion_overlap(60.0, 0.0, 10)
        with pytest.raises(ValueError):
            velocity_for_motion_overlap(60.0, 0.5, 0)

    @given(int_tubes(), int_tubes())
    @settings(max_examples=1000, deadline=None)
    def test_tube_overlap_matches_brute_force(self, a, b):
        """Sum of rasterized IoUs on shared frames over the temporal union"""
        first = min(a.start_frame, b.start_frame)
        last = max(a.end_frame, b.end_frame)
        total = sum(
            raster_iou(tuple(int(v) for v in a.box_at(f).as_array()), tuple(int(v) for v in b.box_at(f).as_array()))
            for f in range(first, last + 1)
            if a.covers(f) and b.covers(f)
        )
        assert tube_overlap(a, b) == pytest.approx(total / (last - first + 1), abs=1e-9)
        assert tube_overlap(a, b) == pytest.approx(tube_overlap(b, a), abs=1e-12)

    @given(
        st.floats(-6.0, 6.0), st.floats(-6.0, 6.0), st.floats(1.0, 40.0), st.floats(1.0, 40.0),
        st.integers(2, 24),
    )
    @settings(max_examples=200, deadline=None)
    def test_motion_overlap_non_increasing_in_gap(self, dx, dy, w, h, length):
        """Constant-velocity track with a constant box size"""
        boxes = np.array([[100 + dx * i, 100 + dy * i, 100 + dx * i + w, 100 + dy * i + h] for i in range(length)])
        track = ActionTube(start_frame=0, boxes=boxes, label=1)
        values = [motion_overlap(track, n) for n in range(length)]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))
        assert motion_overlap(track, length) is None

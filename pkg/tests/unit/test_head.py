"""
Unit tests for the detection head, fusion and training
"""

import numpy as np
import pytest

from tubelet_engine import (
    AnchorConfig, FeatureVolume, FusionMode, HeadParams, SceneBuilder, ShapeMismatchError, TrainConfig,
    TrainingDivergedError, Tubelet,
)
from tubelet_engine.engine.anchors import generate_anchors
from tubelet_engine.engine.gradcheck import numerical_gradient, relative_error
from tubelet_engine.engine.head import (
    HeadTrainer, StreamOutput, TrainingSample, detect, floor_detections, fuse, predict, run_stream,
    sample_objective, stack_features,
)
from tubelet_engine.engine.matchloss import Assignment, total_loss
from tubelet_engine.synthlab import generate_scene, training_samples

ALIGNED = (34.5, 19.5, 70.5, 55.5)


def random_frames(anchors_cfg, K, D, seed=0):
    rng = np.random.default_rng(seed)
    return [FeatureVolume([rng.normal(size=(G, G, D)) for G in anchors_cfg.grid_sizes]) for _ in range(K)]


def random_params(anchors, D, num_classes, seed=0, scale=0.3):
    params = HeadParams.for_anchors(anchors, D, num_classes)
    rng = np.random.default_rng(seed)
    return params.from_vector(rng.normal(scale=scale, size=params.to_vector().size))


def tiny_anchor_config(K):
    """13 anchors: a 3x3 and a 2x2 grid, one square shape each"""
    return AnchorConfig(
        image_size=(120, 120), grid_sizes=[3, 2], scales=[0.4, 0.8], aspect_ratios=[1.0], extra_square=False, K=K,
    )


@pytest.fixture
def anchors(small_anchor_config):
    return generate_anchors(small_anchor_config)


@pytest.fixture
def static_samples(small_anchor_config, anchors):
    scene = generate_scene(
        SceneBuilder.static_actor(box=ALIGNED, num_frames=6, image_size=(120, 120)), small_anchor_config,
    )
    return training_samples(scene.video_id, scene.rgb, scene.tubes, anchors)


class TestFeatures:
    """Test feature volumes and stacking"""

    def test_volume_validation(self):
        with pytest.raises(ShapeMismatchError):
            FeatureVolume([])
        with pytest.raises(ShapeMismatchError):
            FeatureVolume([np.zeros((4, 4, 3)), np.zeros((2, 2, 2))])
        with pytest.raises(ShapeMismatchError):
            FeatureVolume([np.zeros((4, 3, 3))])
        bad = np.zeros((2, 2, 1))
        bad[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            FeatureVolume([bad])

    def test_stacking_is_channel_wise_in_frame_order(self):
        frames = [FeatureVolume([np.full((2, 2, 3), float(k))]) for k in range(3)]
        stacked = stack_features(frames)
        assert len(stacked) == 1
        assert stacked[0].shape == (2, 2, 9)
        np.testing.assert_array_equal(stacked[0][0, 0], [0, 0, 0, 1, 1, 1, 2, 2, 2])

    def test_stacking_rejects_mixed_shapes(self):
        with pytest.raises(ShapeMismatchError):
            stack_features([FeatureVolume([np.zeros((2, 2, 3))]), FeatureVolume([np.zeros((3, 3, 3))])])


class TestHeadParams:
    """Test parameter layout"""

    def test_shapes(self, anchors):
        params = HeadParams.for_anchors(anchors, D=3, num_classes=2)
        assert params.score_w[0].shape == (1, 6, 3)
        assert params.reg_w[1].shape == (1, 6, 8)
        assert params.to_vector().size == 2 * (18 + 3 + 48 + 8)

    def test_vector_length_checked(self, anchors):
        params = HeadParams.for_anchors(anchors, D=3, num_classes=2)
        with pytest.raises(ShapeMismatchError):
            params.from_vector(np.zeros(params.to_vector().size + 1))

    def test_add_scaled(self, anchors):
        params = random_params(anchors, 3, 2)
        other = random_params(anchors, 3, 2, seed=1)
        expected = params.to_vector() + 0.5 * other.to_vector()
        params.add_scaled(other, 0.5)
        np.testing.assert_allclose(params.to_vector(), expected)


class TestPredict:
    """Test the per-anchor linear head"""

    def test_output_shapes(self, small_anchor_config, anchors):
        params = random_params(anchors, 3, 2)
        pred = predict(params, stack_features(random_frames(small_anchor_config, 2, 3)), anchors)
        assert pred.scores.shape == (len(anchors), 3)
        assert pred.regressions.shape == (len(anchors), 8)

    def test_anchor_reads_only_its_cell(self, small_anchor_config, anchors):
        params = random_params(anchors, 3, 2)
        base = random_frames(small_anchor_config, 2, 3)
        changed = [FeatureVolume([g.copy() for g in f.grids]) for f in base]
        changed[1].grids[0][2, 3, :] += 5.0

        a = predict(params, stack_features(base), anchors)
        b = predict(params, stack_features(changed), anchors)
        differs = np.flatnonzero(np.any(a.scores != b.scores, axis=1) | np.any(a.regressions != b.regressions, axis=1))
        assert differs.tolist() == [19]

    def test_incompatible_inputs(self, small_anchor_config, anchors):
        params = random_params(anchors, 3, 2)
        with pytest.raises(ShapeMismatchError):
            predict(params, stack_features(random_frames(small_anchor_config, 2, 4)), anchors)
        with pytest.raises(ShapeMismatchError):
            predict(params, stack_features(random_frames(small_anchor_config, 3, 3)), anchors)

    @pytest.mark.parametrize("seed", range(100))
    def test_parameter_gradient(self, seed):
        rng = np.random.default_rng(seed)
        K = (1, 2, 6)[seed % 3]
        config = tiny_anchor_config(K)
        anchors = generate_anchors(config)
        C, D = int(rng.integers(1, 4)), 2
        pos = rng.choice(len(anchors), size=2, replace=False)
        asg = Assignment(
            positives=np.stack([pos, [0, 1], rng.integers(1, C + 1, size=2)], axis=1).astype(np.int64),
            negatives=np.setdiff1d(np.arange(len(anchors)), pos).astype(np.int64),
        )
        stacked = stack_features(random_frames(config, K, D, seed=seed))
        sample = TrainingSample("v", 0, stacked, [], [], asg, rng.normal(scale=0.5, size=(2, 4 * K)))
        params = random_params(anchors, D, C, seed=seed + 1000)

        result, grads = sample_objective(params, sample, anchors)
        assert result.n_pos == 2

        def loss(vector):
            pred = predict(params.from_vector(vector), stacked, anchors)
            return total_loss(pred, asg, sample.targets).value

        numeric = numerical_gradient(loss, params.to_vector(), eps=1e-6)
        assert relative_error(grads.to_vector(), numeric) < 1e-4


class TestDetectAndFuse:
    """Test detection flooring and two-stream fusion"""

    def output(self, probs, start=0, stream="rgb"):
        probs = np.asarray(probs, dtype=float)
        boxes = np.tile(np.array(ALIGNED), (probs.shape[0], 2, 1))
        return StreamOutput(start_frame=start, probs=probs, boxes=boxes, stream=stream)

    def test_zero_head_is_uniform(self, small_anchor_config, anchors):
        params = HeadParams.for_anchors(anchors, D=3, num_classes=2)
        dets = detect(params, random_frames(small_anchor_config, 2, 3), anchors, start_frame=4)
        assert sorted(dets) == [1, 2]
        assert len(dets[1]) == len(anchors)
        assert dets[1][0].score == pytest.approx(1.0 / 3.0)
        assert dets[1][0].start_frame == 4
        assert detect(params, random_frames(small_anchor_config, 2, 3), anchors, score_floor=0.5)[2] == []

    def test_floor_is_strict(self):
        dets = floor_detections(self.output([[0.5, 0.5, 0.0], [0.9, 0.05, 0.05]]), score_floor=0.05)
        assert [d.anchor_index for d in dets[1]] == [0]
        assert dets[2] == []

    def test_union_keeps_both_streams(self):
        rgb = self.output([[0.2, 0.8], [0.9, 0.1]])
        flow = self.output([[0.3, 0.7], [0.6, 0.4]], stream="flow")
        fused = fuse(rgb, flow, FusionMode.UNION, score_floor=0.05)
        assert [d.stream for d in fused[1]] == ["rgb", "rgb", "flow", "flow"]

    def test_late_fusion_averages_before_the_floor(self):
        rgb = self.output([[0.995, 0.005], [0.5, 0.5]])
        flow = self.output([[0.5, 0.5], [0.9, 0.1]], stream="flow")
        fused = fuse(rgb, flow, FusionMode.LATE, score_floor=0.01)
        assert [d.anchor_index for d in fused[1]] == [0, 1]
        assert fused[1][0].score == pytest.approx(0.2525)
        assert fused[1][1].score == pytest.approx(0.3)
        assert fused[1][0].stream == "late"

    def test_late_fusion_needs_matching_anchors(self):
        with pytest.raises(ShapeMismatchError):
            fuse(self.output([[0.5, 0.5]]), self.output([[0.5, 0.5], [0.5, 0.5]]), FusionMode.LATE)

    def test_late_fusion_compares_anchor_boxes(self, small_anchor_config, anchors):
        shifted = generate_anchors(small_anchor_config.model_copy(update={"scales": [0.35, 0.6]}))
        assert len(shifted) == len(anchors)
        frames = random_frames(small_anchor_config, 2, 3)
        params = HeadParams.for_anchors(anchors, D=3, num_classes=2)
        rgb = run_stream(params, frames, anchors)
        with pytest.raises(ShapeMismatchError):
            fuse(rgb, run_stream(params, frames, shifted, stream="flow"), FusionMode.LATE)
        fused = fuse(rgb, run_stream(params, frames, anchors, stream="flow"), FusionMode.LATE)
        assert len(fused[1]) == len(anchors)


class TestTraining:
    """Test gradient descent on the tubelet loss"""

    def test_samples_have_positives(self, static_samples):
        assert [s.start_frame for s in static_samples] == [1, 2, 3]
        assert all(s.assignment.n_pos >= 1 for s in static_samples)

    def test_zero_learning_rate_keeps_parameters(self, anchors, static_samples):
        D = static_samples[0].stacked[0].shape[-1] // 2
        result = HeadTrainer(anchors, D, 1, TrainConfig(learning_rate=0.0, max_steps=5)).fit(static_samples)
        assert not result.params.to_vector().any()
        assert len(result.loss_curve) == 5
        assert result.loss_curve["loss"].nunique() == 1

    def test_loss_decreases(self, anchors, static_samples):
        D = static_samples[0].stacked[0].shape[-1] // 2
        config = TrainConfig(learning_rate=0.01, batch_size=3, max_steps=40)
        curve = HeadTrainer(anchors, D, 1, config).fit(static_samples).loss_curve
        assert list(curve.columns) == ["step", "loss", "conf", "reg", "n_pos"]
        assert curve["loss"].iloc[-1] < curve["loss"].iloc[0]

    def test_training_is_deterministic(self, anchors, static_samples):
        D = static_samples[0].stacked[0].shape[-1] // 2
        config = TrainConfig(learning_rate=0.01, momentum=0.5, batch_size=2, max_steps=10, seed=3)
        a = HeadTrainer(anchors, D, 1, config).fit(static_samples).params.to_vector()
        b = HeadTrainer(anchors, D, 1, config).fit(static_samples).params.to_vector()
        np.testing.assert_array_equal(a, b)

    def test_non_finite_parameters_abort(self, anchors, static_samples):
        D = static_samples[0].stacked[0].shape[-1] // 2
        init = HeadParams.for_anchors(anchors, D, 1)
        init.score_b[0][...] = np.nan
        with pytest.raises(TrainingDivergedError) as info:
            HeadTrainer(anchors, D, 1, TrainConfig(max_steps=3)).fit(static_samples, init=init)
        assert info.value.step == 0
        assert info.value.last_finite_loss is None

    def test_no_trainable_sequences(self, anchors):
        result = HeadTrainer(anchors, 9, 1, TrainConfig(max_steps=3)).fit([])
        assert result.loss_curve.empty
        assert not result.params.to_vector().any()

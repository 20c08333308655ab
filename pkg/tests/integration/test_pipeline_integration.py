"""
Integration tests for the full generate -> train -> detect -> link -> evaluate pipeline
"""

import numpy as np
import pytest

from tubelet_engine import (
    AnchorConfig, DatasetConfig, ErrorFactor, FusionMode, LinkerConfig, SceneBuilder, ShapeMismatchError, Stream,
    TrainConfig, TubeletDetectionEngine, dataset_digest,
)
from tubelet_engine.cli import main
from tubelet_engine.engine.geometry import motion_overlap, tube_overlap
from tubelet_engine.formats import read_detections, read_tubes

pytestmark = pytest.mark.integration


@pytest.fixture
def engine():
    return TubeletDetectionEngine(workers=1)


class TestCommandLine:
    """Run every act-tubelets subcommand on the tiny preset"""

    def test_full_pipeline(self, tmp_path):
        data = tmp_path / "data"
        rgb, flow = tmp_path / "rgb.model", tmp_path / "flow.model"
        dets, tubes = tmp_path / "dets.txt", tmp_path / "tubes.txt"
        report = tmp_path / "report.txt"

        assert main(["gen", "--preset", "tiny", "--out", str(data)]) == 0
        assert (data / "manifest.yaml").is_file()

        for stream, model in (("rgb", rgb), ("flow", flow)):
            assert main([
                "train", "--data", str(data), "--k", "2", "--stream", stream, "--out", str(model),
                "--steps", "20", "--batch-size", "4",
            ]) == 0
            assert model.is_file()
            assert (tmp_path / f"{model.name}.loss.tsv").is_file()

        assert main([
            "detect", "--data", str(data), "--model-rgb", str(rgb), "--model-flow", str(flow),
            "--fusion", "late", "--out", str(dets),
        ]) == 0
        detections = read_detections(dets)
        assert set(detections) <= {"tiny_000", "tiny_001"}
        assert all(d.stream == "late" and d.tubelet.K == 2 for ds in detections.values() for d in ds)

        assert main(["link", "--dets", str(dets), "--data", str(data), "--out", str(tubes)]) == 0
        linked = read_tubes(tubes)
        assert all(t.end_frame < 12 for ts in linked.values() for t in ts)

        assert main([
            "eval", "--tubes", str(tubes), "--data", str(data), "--report", str(report), "--dets", str(dets),
            "--pr-curves", str(tmp_path / "pr"),
        ]) == 0
        text = report.read_text(encoding="utf-8")
        for block in ("[frame_map]", "[video_map]", "[mabo]", "[classification_accuracy]", "[errors]"):
            assert block in text
        assert (tmp_path / "report.txt.tsv").is_file()

        assert main(["recall", "--data", str(data), "--k-list", "1,2", "--out", str(tmp_path / "recall.tsv")]) == 0
        assert (tmp_path / "recall.tsv").read_text(encoding="utf-8").startswith("K\t")

        assert main(["errors", "--dets", str(dets), "--data", str(data), "--out", str(tmp_path / "errors.tsv")]) == 0
        assert (tmp_path / "errors.tsv").is_file()

    def test_errors_exit_with_status_one(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "missing"), "--k", "2", "--out", str(tmp_path / "m")]) == 1
        config = tmp_path / "bad.yaml"
        config.write_text("num_videos: 0\n", encoding="utf-8")
        assert main(["gen", "--config", str(config), "--out", str(tmp_path / "d")]) == 1
        config.write_text("preset: nope\n", encoding="utf-8")
        assert main(["gen", "--config", str(config), "--out", str(tmp_path / "d")]) == 1

    def test_too_long_sequences(self, tmp_path):
        data = tmp_path / "data"
        assert main(["gen", "--preset", "tiny", "--out", str(data)]) == 0
        assert main(["train", "--data", str(data), "--k", "12", "--out", str(tmp_path / "m")]) == 1


class TestDeterminism:
    """Same inputs, same bytes"""

    def test_generation_ignores_thread_count(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ACT_NUM_THREADS", "1")
        assert main(["gen", "--preset", "motion_only", "--out", str(tmp_path / "a")]) == 0
        monkeypatch.setenv("ACT_NUM_THREADS", "4")
        assert main(["gen", "--preset", "motion_only", "--out", str(tmp_path / "b")]) == 0
        assert dataset_digest(tmp_path / "a") == dataset_digest(tmp_path / "b")

    def test_training_and_detection_repeat(self, tmp_path):
        data = tmp_path / "data"
        assert main(["gen", "--preset", "tiny", "--out", str(data)]) == 0
        outputs = []
        for run in ("a", "b"):
            model, dets = tmp_path / f"{run}.model", tmp_path / f"{run}.dets.txt"
            tubes, report = tmp_path / f"{run}.tubes.txt", tmp_path / f"{run}.report.txt"
            assert main([
                "train", "--data", str(data), "--k", "2", "--out", str(model), "--steps", "10", "--momentum", "0.5",
            ]) == 0
            assert main(["detect", "--data", str(data), "--model-rgb", str(model), "--out", str(dets)]) == 0
            assert main(["link", "--dets", str(dets), "--data", str(data), "--out", str(tubes)]) == 0
            assert main([
                "eval", "--tubes", str(tubes), "--data", str(data), "--report", str(report), "--dets", str(dets),
            ]) == 0
            outputs.append([p.read_bytes() for p in (model, dets, tubes, report)])
        assert outputs[0] == outputs[1]


class TestEvaluation:
    """Evaluate known detections through the engine"""

    def test_ground_truth_scores_perfectly(self, engine, tiny_dataset):
        report = engine.evaluate(tiny_dataset, tiny_dataset.ground_truth)
        assert report.frame_map == pytest.approx(1.0)
        assert all(v == pytest.approx(1.0) for v in report.video_map.values())
        assert report.frame_mabo == pytest.approx(1.0)
        assert report.video_mabo == pytest.approx(1.0)
        assert report.classification_accuracy == pytest.approx(1.0)
        assert report.errors[ErrorFactor.MISSED] == pytest.approx(0.0)

    def test_no_detections(self, engine, tiny_dataset):
        empty = {v: [] for v in tiny_dataset.ground_truth}
        report = engine.evaluate(tiny_dataset, {}, detections=empty)
        assert report.frame_map == pytest.approx(0.0)
        assert report.errors[ErrorFactor.MISSED] == pytest.approx(1.0)
        assert engine.errors(tiny_dataset, empty).shares[ErrorFactor.MISSED] == pytest.approx(1.0)

    def test_engine_pipeline_runs(self, engine, tiny_dataset):
        rgb = engine.train(tiny_dataset, K=2, config=TrainConfig(max_steps=15, batch_size=4)).params
        flow = engine.train(tiny_dataset, K=2, stream=Stream.FLOW, config=TrainConfig(max_steps=15)).params
        detections = engine.detect(tiny_dataset, rgb, flow, FusionMode.UNION)
        streams = {d.stream for ds in detections.values() for d in ds}
        assert streams <= {"rgb", "flow"}
        tubes = engine.link(detections, LinkerConfig(K=2), tiny_dataset.num_frames)
        report = engine.evaluate(tiny_dataset, tubes, detections)
        assert 0.0 <= report.frame_map <= 1.0
        assert sum(report.errors.values()) >= 0.0

    def test_noise_free_actor_is_found(self, engine, tmp_path):
        """Train, detect, link and evaluate a single clean actor sitting on an anchor"""
        config = DatasetConfig(
            name="clean",
            class_names=["actor"],
            anchors=AnchorConfig(
                image_size=(120, 120), grid_sizes=[8, 4], scales=[0.3, 0.6], aspect_ratios=[1.0],
                extra_square=False, K=2,
            ),
            scenes=[SceneBuilder.static_actor(box=(34.5, 19.5, 70.5, 55.5), num_frames=10, image_size=(120, 120))],
        )
        engine.generate(config, tmp_path / "clean")
        data = engine.load(tmp_path / "clean")
        params = engine.train(data, K=2, config=TrainConfig(max_steps=300, batch_size=4, momentum=0.9)).params
        detections = engine.detect(data, params)
        tubes = engine.link(detections, LinkerConfig(K=2), data.num_frames)
        report = engine.evaluate(data, tubes, detections)
        assert report.video_map["0.50"] == pytest.approx(1.0)
        best = max(tubes["static"], key=lambda t: t.score)
        assert tube_overlap(best, data.ground_truth["static"][0]) >= 0.5

    def test_linker_k_must_match(self, engine, tiny_dataset):
        rgb = engine.train(tiny_dataset, K=2, config=TrainConfig(max_steps=2)).params
        detections = engine.detect(tiny_dataset, rgb, score_floor=0.0)
        with pytest.raises(ShapeMismatchError):
            engine.link(detections, LinkerConfig(K=3))


class TestAnchorRecallStudy:
    """Anchor recall drops with K once actors move fast"""

    def test_speed_mixture(self, engine, tmp_path):
        engine.generate(SceneBuilder.speed_mixture(), tmp_path / "speed")
        data = engine.load(tmp_path / "speed")
        overlaps = [motion_overlap(t, 10) for tubes in data.ground_truth.values() for t in tubes]
        assert np.mean(overlaps) == pytest.approx(0.6)
        study = engine.recall(data, [1, 2, 4, 6, 8, 10, 32], [0.5])
        assert list(study.index) == [1, 2, 4, 6, 8, 10, 32]
        for K in (1, 2, 4, 6, 8, 10):
            assert study.loc[K, 0.5] == pytest.approx(1.0)
        assert study.loc[32, 0.5] == pytest.approx(0.5)
        assert list(study[0.5]) == sorted(study[0.5], reverse=True)


@pytest.mark.slow
class TestSequenceLength:
    """Multi-frame heads separate classes that single frames cannot"""

    def test_longer_sequences_classify_motion(self, engine, tmp_path):
        engine.generate(SceneBuilder.motion_only_dataset(), tmp_path / "motion")
        data = engine.load(tmp_path / "motion")
        config = TrainConfig(learning_rate=0.05, momentum=0.9, batch_size=8, max_steps=800)
        results = {}
        for K in (1, 6):
            params = engine.train(data, K=K, config=config).params
            detections = engine.detect(data, params)
            tubes = engine.link(detections, LinkerConfig(K=K), data.num_frames)
            report = engine.evaluate(data, tubes, detections)
            results[K] = (report.frame_map, report.errors[ErrorFactor.CLASSIFICATION])
        assert results[6][0] >= 0.9
        assert results[1][0] <= 0.6
        assert results[6][1] < results[1][1]

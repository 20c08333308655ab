"""
act-tubelets command line

    act-tubelets gen     --config scene.yaml --out data/
    act-tubelets train   --data data/ --k 6 --stream rgb --out rgb.model
    act-tubelets detect  --data data/ --model-rgb rgb.model [--model-flow flow.model --fusion late] --out dets.txt
    act-tubelets link    --dets dets.txt --out tubes.txt
    act-tubelets eval    --tubes tubes.txt --data data/ --report report.txt
    act-tubelets recall  --data data/ --k-list 1,2,4,6,8,10,32
    act-tubelets errors  --dets dets.txt --data data/
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from .engine.act_types import APInterpolation, FusionMode, SmoothingMode, Stream
from .engine.config import EvalConfig, LinkerConfig, TrainConfig
from .engine.core import TubeletDetectionEngine
from .errors import TubeletEngineError
from .formats import (
    load_params, read_detections, read_tubes, save_params, write_detections, write_table, write_tubes,
)
from .scene_config import get_scene_library, load_dataset_config

log = logging.getLogger("tubelet_engine.cli")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="act-tubelets", description="Tubelet action detection on synthetic videos")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a synthetic dataset")
    source = gen.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", type=Path, help="YAML dataset config (may name a preset)")
    source.add_argument("--preset", choices=get_scene_library().get_preset_names(), help="Packaged preset")
    gen.add_argument("--out", type=Path, required=True)

    train = sub.add_parser("train", help="Train a detection head for one stream")
    train.add_argument("--data", type=Path, required=True)
    train.add_argument("--k", type=int, required=True)
    train.add_argument("--stream", choices=[s.value for s in Stream], default=Stream.RGB.value)
    train.add_argument("--out", type=Path, required=True)
    train.add_argument("--steps", type=int, default=TrainConfig().max_steps)
    train.add_argument("--lr", type=float, default=TrainConfig().learning_rate)
    train.add_argument("--momentum", type=float, default=TrainConfig().momentum)
    train.add_argument("--batch-size", type=int, default=TrainConfig().batch_size)
    train.add_argument("--seed", type=int, default=TrainConfig().seed)

    detect = sub.add_parser("detect", help="Score every K-sequence of every video")
    detect.add_argument("--data", type=Path, required=True)
    detect.add_argument("--model-rgb", type=Path, required=True)
    detect.add_argument("--model-flow", type=Path)
    detect.add_argument("--fusion", choices=[m.value for m in FusionMode], default=FusionMode.UNION.value)
    detect.add_argument("--score-floor", type=float, default=EvalConfig().score_floor)
    detect.add_argument("--out", type=Path, required=True)

    link = sub.add_parser("link", help="Link tubelets into action tubes")
    link.add_argument("--dets", type=Path, required=True)
    link.add_argument("--tau", type=float, default=LinkerConfig().tau)
    link.add_argument("--nms", type=float, default=LinkerConfig().nms_threshold)
    link.add_argument("--topn", type=int, default=LinkerConfig().top_n)
    link.add_argument("--patience", type=int, help="Frames a link may stay unextended (default K-1)")
    link.add_argument("--smoothing", choices=[m.value for m in SmoothingMode], default=SmoothingMode.MEAN.value)
    link.add_argument("--data", type=Path, help="Dataset, to link up to the last frame of each video")
    link.add_argument("--out", type=Path, required=True)

    ev = sub.add_parser("eval", help="Evaluate tubes against the dataset annotations")
    ev.add_argument("--tubes", type=Path, required=True)
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--report", type=Path, required=True)
    ev.add_argument("--dets", type=Path, help="Tubelet detections for the frame-level metrics")
    ev.add_argument("--frame-nms", type=float, default=EvalConfig().frame_nms)
    ev.add_argument(
        "--interpolation", choices=[m.value for m in APInterpolation], default=APInterpolation.CONTINUOUS.value,
    )
    ev.add_argument("--pr-curves", type=Path, help="Directory for per-class precision/recall tables")

    recall = sub.add_parser("recall", help="Anchor recall as a function of K")
    recall.add_argument("--data", type=Path, required=True)
    recall.add_argument("--k-list", type=_int_list, default=[1, 2, 4, 6, 8, 10, 32])
    recall.add_argument("--thresholds", type=_float_list, default=[0.5])
    recall.add_argument("--out", type=Path)

    errors = sub.add_parser("errors", help="Break frame-level false positives down by cause")
    errors.add_argument("--dets", type=Path, required=True)
    errors.add_argument("--data", type=Path, required=True)
    errors.add_argument("--theta", type=float, default=EvalConfig().frame_iou)
    errors.add_argument("--frame-nms", type=float, default=EvalConfig().frame_nms)
    errors.add_argument("--out", type=Path)
    return parser


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else os.environ.get("ACT_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def cmd_gen(engine: TubeletDetectionEngine, args) -> int:
    if args.config is not None:
        config = load_dataset_config(args.config)
    else:
        config = get_scene_library().dataset_config(args.preset)
    manifest = engine.generate(config, args.out)
    print(f"{len(manifest.videos)} videos written to {args.out}")
    return 0


def cmd_train(engine: TubeletDetectionEngine, args) -> int:
    config = TrainConfig(
        learning_rate=args.lr, momentum=args.momentum, batch_size=args.batch_size,
        max_steps=args.steps, seed=args.seed,
    )
    data = engine.load(args.data)
    result = engine.train(data, args.k, Stream(args.stream), config)
    save_params(args.out, result.params)
    write_table(f"{args.out}.loss.tsv", result.loss_curve, index=False, float_format=None)
    final = result.loss_curve["loss"].iloc[-1] if len(result.loss_curve) else float("nan")
    print(f"model written to {args.out} (final loss {final:.6f})")
    return 0


def cmd_detect(engine: TubeletDetectionEngine, args) -> int:
    data = engine.load(args.data)
    rgb = load_params(args.model_rgb)
    flow = load_params(args.model_flow) if args.model_flow is not None else None
    detections = engine.detect(data, rgb, flow, FusionMode(args.fusion), args.score_floor)
    write_detections(args.out, detections)
    print(f"{sum(len(d) for d in detections.values())} tubelets written to {args.out}")
    return 0


def cmd_link(engine: TubeletDetectionEngine, args) -> int:
    detections = read_detections(args.dets)
    K = next((d[0].tubelet.K for d in detections.values() if d), 1)
    config = LinkerConfig(
        nms_threshold=args.nms, top_n=args.topn, tau=args.tau, K=K,
        patience=args.patience, smoothing=SmoothingMode(args.smoothing),
    )
    num_frames = engine.load(args.data).num_frames if args.data is not None else None
    tubes = engine.link(detections, config, num_frames)
    write_tubes(args.out, tubes)
    print(f"{sum(len(t) for t in tubes.values())} tubes written to {args.out}")
    return 0


def cmd_eval(engine: TubeletDetectionEngine, args) -> int:
    data = engine.load(args.data)
    tubes = read_tubes(args.tubes)
    detections = read_detections(args.dets) if args.dets is not None else None
    config = EvalConfig(frame_nms=args.frame_nms, interpolation=APInterpolation(args.interpolation))
    report = engine.evaluate(data, tubes, detections, config)

    args.report.parent.mkdir(parents=True, exist_ok=True)
    args.report.write_text(report.to_text(), encoding="utf-8")
    write_table(f"{args.report}.tsv", report.to_frame(), index=False)
    if args.pr_curves is not None:
        for label, curve in engine.pr_curves(data, tubes, detections, config).items():
            write_table(args.pr_curves / f"pr_class_{label}.tsv", curve, index=False)
    print(report.to_text())
    return 0


def cmd_recall(engine: TubeletDetectionEngine, args) -> int:
    table = engine.recall(engine.load(args.data), args.k_list, args.thresholds)
    if args.out is not None:
        write_table(args.out, table)
    print(table.to_string(float_format=lambda v: f"{v:.4f}"))
    return 0


def cmd_errors(engine: TubeletDetectionEngine, args) -> int:
    data = engine.load(args.data)
    config = EvalConfig(frame_iou=args.theta, frame_nms=args.frame_nms)
    breakdown = engine.errors(data, read_detections(args.dets), config)
    if args.out is not None:
        write_table(args.out, breakdown.per_class)
    for factor, share in breakdown.shares.items():
        print(f"{factor.value} = {share:.6f}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "detect": cmd_detect,
    "link": cmd_link,
    "eval": cmd_eval,
    "recall": cmd_recall,
    "errors": cmd_errors,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    engine = TubeletDetectionEngine()
    try:
        return COMMANDS[args.command](engine, args)
    except ValidationError as e:
        log.error("Invalid configuration: %s", e.errors()[0].get("msg", e))
        return 1
    except TubeletEngineError as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())

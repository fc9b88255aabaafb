"""Command line interface.

Subcommands: synth, train-cls, mine, pseudo, attribute, train-map, eval,
infer, report, pipeline. Exit codes: 0 ok, 1 stage failure, 2 config error.
Failures emit a machine-readable JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import attribution, classifier, mapper, metrics
from .checkpoint import load_checkpoint
from .config import load_config
from .data import load_manifest, load_mask_png, load_tile, ManifestEntry
from .errors import ConfigError, SolarMapError
from .pipeline import PipelineRunner, VARIANTS
from .pseudolabels import binarize, otsu_threshold

log = logging.getLogger(__name__)

# Fig.-5-style palette for overlays
OVERLAY_TP = (255, 255, 0)  # yellow
OVERLAY_TN = (0, 0, 0)  # black
OVERLAY_FP = (0, 255, 0)  # green
OVERLAY_FN = (255, 0, 0)  # red


def _add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, type=Path, help="pipeline TOML config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="solarmap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    _add_config_arg(p)
    p.add_argument("--out", type=Path, help="override the data root directory")

    p = sub.add_parser("train-cls", help="train the image-level classifier")
    _add_config_arg(p)

    p = sub.add_parser("mine", help="mine positives from the unlabeled split")
    _add_config_arg(p)
    p.add_argument("--tau", type=float, help="override the mining threshold")

    p = sub.add_parser("pseudo", help="build initial pseudo labels")
    _add_config_arg(p)
    p.add_argument("--layer", help="override the attribution layer")

    p = sub.add_parser("attribute", help="render an attribution map for one tile")
    p.add_argument("--model", required=True, type=Path, help="classifier checkpoint")
    p.add_argument("--layer", default="conv4_3")
    p.add_argument("--class", dest="class_id", default="positive", choices=["positive", "negative"])
    p.add_argument("--in", dest="input", required=True, type=Path, help="tile PNG")
    p.add_argument("--out", required=True, type=Path, help="output 8-bit grayscale PNG")

    p = sub.add_parser("train-map", help="train the mapping network")
    _add_config_arg(p)
    p.add_argument("--phase1", type=int, help="override phase-1 epochs")
    p.add_argument("--phase2", type=int, help="override phase-2 epochs")
    corr = p.add_mutually_exclusive_group()
    corr.add_argument("--correct", dest="correct", action="store_true", default=True)
    corr.add_argument("--no-correct", dest="correct", action="store_false")

    p = sub.add_parser("eval", help="evaluate a mapper checkpoint on a split")
    _add_config_arg(p)
    p.add_argument("--model", type=Path, help="mapper checkpoint (default: pipeline artifact)")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--agg", default=None, choices=["global", "per-image"])

    p = sub.add_parser("infer", help="emit score map, mask and overlay for tiles")
    p.add_argument("--model", required=True, type=Path, help="mapper checkpoint")
    p.add_argument("--in", dest="input", required=True, type=Path, help="tile PNG or directory")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--masks", type=Path, help="directory of reference masks (paired by filename)")

    p = sub.add_parser("report", help="render the evaluation report as markdown")
    _add_config_arg(p)
    p.add_argument("--variant", default="ps-cnnlc", choices=list(VARIANTS))

    p = sub.add_parser("pipeline", help="run every stage in order")
    _add_config_arg(p)
    p.add_argument("--variant", default="ps-cnnlc", choices=list(VARIANTS))

    return parser


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_synth(args) -> int:
    cfg = load_config(args.config)
    from .data import synth_generate

    out = args.out if args.out else cfg.data_root
    synth_generate(cfg.data, out)
    print(f"wrote synthetic dataset to {out}")
    return 0


def _cmd_stage(args, stages: tuple[str, ...]) -> int:
    """Run a prefix of the pipeline ending at the requested stage."""
    cfg = load_config(args.config)
    if getattr(args, "tau", None) is not None:
        cfg.pseudolabels.tau = args.tau
    if getattr(args, "layer", None):
        cfg.attribution.layer = args.layer
    if getattr(args, "phase1", None) is not None:
        cfg.mapper.epochs_phase1 = args.phase1
    if getattr(args, "phase2", None) is not None:
        cfg.mapper.epochs_phase2 = args.phase2
    variant = getattr(args, "variant", None) or ("ps-cnnlc" if getattr(args, "correct", True) else "ps-cnn")
    runner = PipelineRunner(cfg, variant)
    manifest_path = runner.stage_synth()
    split_path = runner.stage_split(manifest_path)
    if "train-cls" in stages:
        cls_path = runner.stage_train_cls(split_path)
    if "mine" in stages:
        mined = runner.stage_mine(split_path, cls_path)
    if "pseudo" in stages:
        store_root = runner.stage_pseudo(split_path, cls_path, mined)
    if "train-map" in stages:
        runner.stage_train_map(split_path, store_root)
    runner.write_run_manifest()
    print(f"done; artifacts in {runner.root}")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if args.agg:
        cfg.eval.aggregation = args.agg
    manifest = load_manifest(cfg.artifact_root / "manifest_split.json")
    model_path = args.model or (cfg.artifact_root / "checkpoints" / "mapper_ps-cnnlc.ntar")
    model = mapper.mapper_from_checkpoint(load_checkpoint(model_path))
    report = metrics.evaluate_dataset(
        model, manifest.split(args.split), cfg.eval.aggregation, cfg.eval.theta_sq, cfg.eval.thresholds
    )
    out = cfg.artifact_root / "eval" / f"report_{args.split}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out, out.with_suffix(".csv"))
    print(json.dumps({k: report.to_dict()[k] for k in ("AC", "AUC", "P", "R", "F")}, indent=2))
    print(f"report written to {out}")
    return 0


def _cmd_attribute(args) -> int:
    model = classifier.classifier_from_checkpoint(load_checkpoint(args.model))
    entry = ManifestEntry(id=args.input.stem, image_path=args.input, label="unlabeled", split="unlabeled")
    tile = load_tile(entry)
    amap = attribution.gradcam(model, tile.pixels, layer=args.layer, class_id=args.class_id)
    score = attribution.upsample_map(amap, tile.pixels.shape[:2])
    Image.fromarray(np.clip(np.rint(score * 255), 0, 255).astype(np.uint8), mode="L").save(args.out)
    print(f"attribution map written to {args.out}")
    return 0


def _overlay(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    out = np.zeros((*pred.shape, 3), dtype=np.uint8)
    p = pred.astype(bool)
    g = gt.astype(bool)
    out[p & g] = OVERLAY_TP
    out[~p & ~g] = OVERLAY_TN
    out[p & ~g] = OVERLAY_FP
    out[~p & g] = OVERLAY_FN
    return out


def _cmd_infer(args) -> int:
    model = mapper.mapper_from_checkpoint(load_checkpoint(args.model))
    paths = sorted(args.input.glob("*.png")) if args.input.is_dir() else [args.input]
    args.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    for path in paths:
        entry = ManifestEntry(id=path.stem, image_path=path, label="unlabeled", split="unlabeled")
        tile = load_tile(entry)
        pair = mapper.mapper_forward(model, tile.pixels)
        mask = binarize(pair.f0, otsu_threshold(pair.f0))
        Image.fromarray(np.clip(np.rint(pair.f0 * 255), 0, 255).astype(np.uint8), mode="L").save(
            args.out / f"{path.stem}_score.png"
        )
        Image.fromarray(mask * 255, mode="L").save(args.out / f"{path.stem}_mask.png")
        ref_path = args.masks / path.name if args.masks else None
        if ref_path and ref_path.is_file():
            ref = load_mask_png(ref_path)
            Image.fromarray(_overlay(mask, ref), mode="RGB").save(args.out / f"{path.stem}_overlay.png")
    elapsed = time.perf_counter() - t0
    log.info("inferred %d tiles in %.2fs (%.2fs/tile)", len(paths), elapsed, elapsed / max(len(paths), 1))
    print(f"wrote {len(paths)} tile outputs to {args.out} in {elapsed:.2f}s")
    return 0


def _cmd_report(args) -> int:
    cfg = load_config(args.config)
    eval_path = cfg.artifact_root / "eval" / f"report_{args.variant}.json"
    if not eval_path.is_file():
        raise SolarMapError(f"no evaluation report at {eval_path}; run `solarmap pipeline` or `solarmap eval` first")
    runner = PipelineRunner(cfg, args.variant)
    out = runner.stage_report(eval_path)
    print(out.read_text())
    return 0


def _cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    runner = PipelineRunner(cfg, args.variant)
    manifest = runner.run()
    print(f"pipeline complete; {len(manifest['artifacts'])} artifacts, config hash {manifest['config_hash'][:12]}")
    if runner.skipped:
        print(f"skipped (up to date): {', '.join(runner.skipped)}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "train-cls":
            return _cmd_stage(args, ("synth", "split", "train-cls"))
        if args.command == "mine":
            return _cmd_stage(args, ("synth", "split", "train-cls", "mine"))
        if args.command == "pseudo":
            return _cmd_stage(args, ("synth", "split", "train-cls", "mine", "pseudo"))
        if args.command == "train-map":
            return _cmd_stage(args, ("synth", "split", "train-cls", "mine", "pseudo", "train-map"))
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "attribute":
            return _cmd_attribute(args)
        if args.command == "infer":
            return _cmd_infer(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "pipeline":
            return _cmd_pipeline(args)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        json.dump({"error": "config", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except SolarMapError as exc:
        json.dump({"error": "stage", "type": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

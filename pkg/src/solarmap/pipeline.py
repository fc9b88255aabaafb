"""Stage orchestration for the full pipeline: synth -> split -> train-cls ->
mine -> pseudo -> train-map -> eval -> report, with content-hash based
resumability and a deterministic run manifest.

Every stage records the SHA-256 of its inputs (config subset + input
artifacts) and outputs in <artifact_root>/run_state.json; a rerun skips
stages whose input hash is unchanged and whose outputs still match.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

from . import attribution, classifier, mapper, metrics, pseudolabels
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig
from .data import (
    POSITIVE,
    load_manifest,
    load_tile,
    save_manifest,
    split_dataset,
    synth_generate,
)
from .errors import StageError
from .pseudolabels import LabelStore, binarize, otsu_threshold

log = logging.getLogger(__name__)

VARIANTS = ("ps-cnnlc", "ps-cnn", "gradcam4", "gradcam5")
STAGE_ORDER = ("synth", "split", "train-cls", "mine", "pseudo", "train-map", "eval", "report")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RunState:
    """Per-stage input/output hashes backing skip decisions."""

    def __init__(self, root: Path):
        self.root = root
        self.path = root / "run_state.json"
        self.stages: dict[str, dict] = {}
        if self.path.is_file():
            self.stages = json.loads(self.path.read_text())

    def save(self) -> None:
        self.path.write_text(json.dumps(self.stages, indent=2, sort_keys=True) + "\n")

    def can_skip(self, stage: str, input_hash: str) -> bool:
        rec = self.stages.get(stage)
        if rec is None or rec["inputs"] != input_hash:
            return False
        for rel, digest in rec["outputs"].items():
            path = self.root / rel
            if not path.is_file() or sha256_file(path) != digest:
                return False
        return True

    def record(self, stage: str, input_hash: str, outputs: list[Path]) -> None:
        self.stages[stage] = {
            "inputs": input_hash,
            "outputs": {str(p.relative_to(self.root)): sha256_file(p) for p in outputs},
        }
        self.save()


class PipelineRunner:
    def __init__(self, cfg: PipelineConfig, variant: str = "ps-cnnlc"):
        if variant not in VARIANTS:
            raise StageError(f"unknown variant '{variant}'; expected one of {VARIANTS}")
        self.cfg = cfg
        self.variant = variant
        self.root = cfg.artifact_root
        self.root.mkdir(parents=True, exist_ok=True)
        self.state = RunState(self.root)
        self.executed: list[str] = []
        self.skipped: list[str] = []

    # -- helpers -----------------------------------------------------------

    def _input_hash(self, parts: dict) -> str:
        return sha256_text(json.dumps(parts, sort_keys=True, separators=(",", ":")))

    def _run(self, stage: str, input_parts: dict, produce) -> list[Path]:
        input_hash = self._input_hash(input_parts)
        if self.state.can_skip(stage, input_hash):
            log.info("stage %s: inputs unchanged, skipping", stage)
            self.skipped.append(stage)
            return [self.root / rel for rel in self.state.stages[stage]["outputs"]]
        log.info("stage %s: running", stage)
        try:
            outputs = produce()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(f"stage '{stage}' failed: {exc}") from exc
        self.state.record(stage, input_hash, outputs)
        self.executed.append(stage)
        return outputs

    def _manifest_path(self) -> Path:
        return self.cfg.data_root / "manifest.json"

    def _split_path(self) -> Path:
        return self.root / "manifest_split.json"

    # -- stages --------------------------------------------------------------

    def stage_synth(self) -> Path:
        manifest_path = self._manifest_path()

        def produce():
            manifest = synth_generate(self.cfg.data, self.cfg.data_root)
            paths = [manifest_path]
            for e in manifest.entries:
                paths.append(e.image_path)
                if e.mask_path:
                    paths.append(e.mask_path)
            return paths

        self._run("synth", {"data": self.cfg.to_dict()["data"]}, produce)
        return manifest_path

    def stage_split(self, manifest_path: Path) -> Path:
        out = self._split_path()

        def produce():
            manifest = load_manifest(manifest_path)
            split = split_dataset(manifest, self.cfg.split.fractions, self.cfg.split.seed)
            save_manifest(split, out)
            return [out]

        self._run(
            "split",
            {"manifest": sha256_file(manifest_path), "split": self.cfg.to_dict()["split"]},
            produce,
        )
        return out

    def stage_train_cls(self, split_path: Path) -> Path:
        out = self.root / "checkpoints" / "classifier.ntar"

        def produce():
            out.parent.mkdir(parents=True, exist_ok=True)
            manifest = load_manifest(split_path)
            model = classifier.build_classifier(self.cfg.classifier)
            ckpt, _ = classifier.train_classifier(
                model, manifest.split("train"), manifest.split("val"), self.cfg.classifier
            )
            save_checkpoint(ckpt, out)
            return [out]

        self._run(
            "train-cls",
            {"manifest": sha256_file(split_path), "classifier": self.cfg.to_dict()["classifier"]},
            produce,
        )
        return out

    def stage_mine(self, split_path: Path, cls_path: Path) -> Path:
        out = self.root / "mined_ids.json"

        def produce():
            manifest = load_manifest(split_path)
            model = classifier.classifier_from_checkpoint(load_checkpoint(cls_path))
            mined = pseudolabels.mine_positives(model, manifest.split("unlabeled"), self.cfg.pseudolabels.tau)
            out.write_text(json.dumps(mined, indent=2) + "\n")
            return [out]

        self._run(
            "mine",
            {
                "manifest": sha256_file(split_path),
                "classifier": sha256_file(cls_path),
                "tau": self.cfg.pseudolabels.tau,
            },
            produce,
        )
        return out

    def stage_pseudo(self, split_path: Path, cls_path: Path, mined_path: Path) -> Path:
        store_root = self.root / "labelstore"

        def produce():
            manifest = load_manifest(split_path)
            model = classifier.classifier_from_checkpoint(load_checkpoint(cls_path))
            mined = set(json.loads(mined_path.read_text()))
            entries = [
                e for e in manifest.entries
                if (e.split in ("train", "val") and e.label == POSITIVE) or e.id in mined
            ]
            store = pseudolabels.build_initial_labels(
                model, entries, layer=self.cfg.attribution.layer,
                class_id=self.cfg.attribution.class_id, mined_ids=mined,
            )
            store.save(store_root)
            paths = [store_root / "index.json"]
            for tile_id in store.ids():
                paths.append(store_root / "labels" / f"{tile_id}.png")
                paths.append(store_root / "labels_init" / f"{tile_id}.png")
            return paths

        self._run(
            "pseudo",
            {
                "manifest": sha256_file(split_path),
                "classifier": sha256_file(cls_path),
                "mined": sha256_file(mined_path),
                "attribution": self.cfg.to_dict()["attribution"],
            },
            produce,
        )
        return store_root

    def stage_train_map(self, split_path: Path, store_root: Path) -> Path:
        out = self.root / "checkpoints" / f"mapper_{self.variant}.ntar"
        corrected = self.variant == "ps-cnnlc"

        def produce():
            out.parent.mkdir(parents=True, exist_ok=True)
            manifest = load_manifest(split_path)
            store = LabelStore.load(store_root)
            tiles = {
                e.id: load_tile(e).pixels for e in manifest.entries if e.id in store
            }
            model = mapper.build_mapper(self.cfg.mapper)
            corrector = self.cfg.correction if corrected else None
            ckpt, _ = mapper.train_mapper(model, tiles, store, self.cfg.mapper, corrector=corrector)
            save_checkpoint(ckpt, out)
            final_root = self.root / f"labelstore_final_{self.variant}"
            store.save(final_root)
            outputs = [out, final_root / "index.json"]
            for tile_id in store.ids():
                outputs.append(final_root / "labels" / f"{tile_id}.png")
                outputs.append(final_root / "labels_init" / f"{tile_id}.png")
            return outputs

        self._run(
            f"train-map:{self.variant}",
            {
                "manifest": sha256_file(split_path),
                "store": sha256_file(store_root / "index.json"),
                "mapper": self.cfg.to_dict()["mapper"],
                "correction": self.cfg.to_dict()["correction"] if corrected else None,
                "variant": self.variant,
            },
            produce,
        )
        return out

    def stage_eval(self, split_path: Path, model_path: Path | None, cls_path: Path | None) -> Path:
        out = self.root / "eval" / f"report_{self.variant}.json"
        curves = self.root / "eval" / f"curves_{self.variant}.csv"

        def produce():
            out.parent.mkdir(parents=True, exist_ok=True)
            manifest = load_manifest(split_path)
            entries = manifest.split("test")
            if self.variant.startswith("gradcam"):
                layer = "conv4_3" if self.variant == "gradcam4" else "conv5_3"
                model = classifier.classifier_from_checkpoint(load_checkpoint(cls_path))
                report = evaluate_attribution_maps(
                    model, entries, layer, self.cfg.eval.aggregation,
                    self.cfg.eval.theta_sq, self.cfg.eval.thresholds,
                )
            else:
                model = mapper.mapper_from_checkpoint(load_checkpoint(model_path))
                report = metrics.evaluate_dataset(
                    model, entries, self.cfg.eval.aggregation,
                    self.cfg.eval.theta_sq, self.cfg.eval.thresholds,
                )
            report.save(out, curves)
            return [out, curves]

        model_hash = sha256_file(model_path) if model_path else sha256_file(cls_path)
        self._run(
            f"eval:{self.variant}",
            {
                "manifest": sha256_file(split_path),
                "model": model_hash,
                "eval": self.cfg.to_dict()["eval"],
                "variant": self.variant,
            },
            produce,
        )
        return out

    def stage_report(self, eval_path: Path) -> Path:
        out = self.root / f"report_{self.variant}.md"

        def produce():
            report = json.loads(eval_path.read_text())
            lines = [
                "# Pipeline report",
                "",
                f"Variant: `{self.variant}`  ",
                f"Aggregation: `{report['aggregation']}`",
                "",
                "| Metric | Value |",
                "| --- | --- |",
            ]
            for key in ("AC", "AUC", "P", "R", "F"):
                lines.append(f"| {key} | {report[key]:.4f} |")
            lines.append("")
            lines.append(f"Tiles evaluated: {len(report['per_tile'])}")
            out.write_text("\n".join(lines) + "\n")
            return [out]

        self._run(f"report:{self.variant}", {"eval": sha256_file(eval_path), "variant": self.variant}, produce)
        return out

    # -- full run ------------------------------------------------------------

    def run(self) -> dict:
        manifest_path = self.stage_synth()
        split_path = self.stage_split(manifest_path)
        cls_path = self.stage_train_cls(split_path)
        if self.variant.startswith("gradcam"):
            eval_path = self.stage_eval(split_path, None, cls_path)
        else:
            mined_path = self.stage_mine(split_path, cls_path)
            store_root = self.stage_pseudo(split_path, cls_path, mined_path)
            map_path = self.stage_train_map(split_path, store_root)
            eval_path = self.stage_eval(split_path, map_path, cls_path)
        self.stage_report(eval_path)
        return self.write_run_manifest()

    def write_run_manifest(self) -> dict:
        artifacts = {}
        for stage, rec in sorted(self.state.stages.items()):
            for rel, digest in rec["outputs"].items():
                artifacts[rel] = digest
        manifest = {
            "config_hash": sha256_text(self.cfg.content_hash_payload()),
            "seed": self.cfg.seed,
            "variant": self.variant,
            "stages": {s: self.state.stages[s]["inputs"] for s in self.state.stages},
            "artifacts": artifacts,
        }
        (self.root / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def evaluate_attribution_maps(
    model, entries, layer: str, aggregation: str = "global",
    theta_sq: float = 0.3, thresholds: int = 256,
) -> metrics.Report:
    """Score upsampled attribution maps directly as segmentation predictions
    (the mapper-free ablation arms)."""
    named_scores, named_masks, named_gt = {}, {}, {}
    for entry in entries:
        tile = load_tile(entry)
        if tile.ref_mask is None:
            raise StageError(f"test entry '{entry.id}' has no reference mask")
        amap = attribution.gradcam(model, tile.pixels, layer=layer)
        score = attribution.upsample_map(amap, tile.pixels.shape[:2])
        named_scores[entry.id] = score
        named_masks[entry.id] = binarize(score, otsu_threshold(score))
        named_gt[entry.id] = tile.ref_mask
    return metrics.evaluate_predictions(named_scores, named_masks, named_gt, aggregation, theta_sq, thresholds)


def run_pipeline(cfg: PipelineConfig, variant: str = "ps-cnnlc") -> dict:
    return PipelineRunner(cfg, variant).run()

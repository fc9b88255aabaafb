"""Initial pseudo labels: Otsu binarization of activation maps, mining of
positives from unlabeled tiles, and the persistent per-tile label store.

Label store layout on disk:

    <root>/labels/<id>.png        current label (updated by correction)
    <root>/labels_init/<id>.png   initial label, immutable
    <root>/index.json             {id: {"provenance", "prev_fore"}}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attribution import gradcam, upsample_map
from .classifier import PanelClassifier, classifier_forward
from .data import POSITIVE, ManifestEntry, load_mask_png, load_tile, save_mask_png
from .errors import EmptyMap, MalformedManifest, MissingRecord

log = logging.getLogger(__name__)

OTSU_BINS = 256

PROVENANCE_ORIGINAL = "original_positive"
PROVENANCE_MINED = "mined"


def otsu_threshold(score_map: np.ndarray) -> float:
    """Between-class-variance maximizing threshold over a 256-bin histogram.

    Values must lie in [0,1]. The returned threshold is the upper edge
    (k+1)/256 of the winning split bin; ties break toward the lower
    threshold. Degenerate maps with no valid split (e.g. constant) return
    1.0, which yields an empty foreground under strict-> binarization.
    """
    values = np.asarray(score_map, dtype=np.float64).ravel()
    if values.size == 0:
        raise EmptyMap("cannot threshold an empty map")
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("otsu_threshold expects values in [0, 1]")

    hist, _ = np.histogram(values, bins=OTSU_BINS, range=(0.0, 1.0))
    total = hist.sum()
    levels = np.arange(OTSU_BINS, dtype=np.float64)

    w0 = np.cumsum(hist)  # pixels in bins 0..k
    sum0 = np.cumsum(hist * levels)
    w1 = total - w0
    mu_total = sum0[-1]

    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = np.where(w0 > 0, sum0 / w0, 0.0)
        mu1 = np.where(w1 > 0, (mu_total - sum0) / w1, 0.0)
    sigma_b = (w0 / total) * (w1 / total) * (mu0 - mu1) ** 2
    sigma_b[(w0 == 0) | (w1 == 0)] = 0.0

    best = int(np.argmax(sigma_b))  # argmax takes the lowest index on ties
    if sigma_b[best] <= 0.0:
        return 1.0
    return (best + 1) / OTSU_BINS


def binarize(score_map: np.ndarray, threshold: float) -> np.ndarray:
    """Strict comparison: bit = 1 iff value > threshold."""
    return (np.asarray(score_map) > threshold).astype(np.uint8)


def mine_positives(model: PanelClassifier, entries: list[ManifestEntry], tau: float = 0.5) -> list[str]:
    """Ids of tiles the classifier scores p_pos >= tau, in manifest order."""
    mined = []
    for entry in entries:
        p_pos, _ = classifier_forward(model, load_tile(entry).pixels)
        if p_pos >= tau:
            mined.append(entry.id)
    log.info("mined %d/%d tiles at tau=%.3f", len(mined), len(entries), tau)
    return mined


@dataclass
class LabelRecord:
    tile_id: str
    gt0: np.ndarray  # initial pseudo label, immutable
    gt_current: np.ndarray
    prev_fore: int | None = None
    provenance: str = PROVENANCE_ORIGINAL

    def __post_init__(self):
        self.gt0 = np.asarray(self.gt0, dtype=np.uint8)
        self.gt0.setflags(write=False)
        self.gt_current = np.asarray(self.gt_current, dtype=np.uint8)


class LabelStore:
    """Per-tile label records keyed by tile id."""

    def __init__(self):
        self.records: dict[str, LabelRecord] = {}

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, tile_id: str) -> bool:
        return tile_id in self.records

    def __getitem__(self, tile_id: str) -> LabelRecord:
        if tile_id not in self.records:
            raise MissingRecord(f"no label record for tile '{tile_id}'")
        return self.records[tile_id]

    def add(self, record: LabelRecord) -> None:
        self.records[record.tile_id] = record

    def ids(self) -> list[str]:
        return sorted(self.records)

    def clone(self) -> "LabelStore":
        """Deep copy, so branched training runs cannot share label state."""
        out = LabelStore()
        for rec in self.records.values():
            out.add(
                LabelRecord(
                    tile_id=rec.tile_id,
                    gt0=rec.gt0.copy(),
                    gt_current=rec.gt_current.copy(),
                    prev_fore=rec.prev_fore,
                    provenance=rec.provenance,
                )
            )
        return out

    def save(self, root: Path | str) -> None:
        root = Path(root)
        (root / "labels").mkdir(parents=True, exist_ok=True)
        (root / "labels_init").mkdir(parents=True, exist_ok=True)
        index = {}
        for tile_id in self.ids():
            rec = self.records[tile_id]
            save_mask_png(root / "labels" / f"{tile_id}.png", rec.gt_current)
            save_mask_png(root / "labels_init" / f"{tile_id}.png", rec.gt0)
            index[tile_id] = {"provenance": rec.provenance, "prev_fore": rec.prev_fore}
        (root / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, root: Path | str) -> "LabelStore":
        root = Path(root)
        index_path = root / "index.json"
        if not index_path.is_file():
            raise MalformedManifest(f"label store index not found: {index_path}")
        index = json.loads(index_path.read_text())
        store = cls()
        for tile_id, meta in index.items():
            store.add(
                LabelRecord(
                    tile_id=tile_id,
                    gt0=load_mask_png(root / "labels_init" / f"{tile_id}.png"),
                    gt_current=load_mask_png(root / "labels" / f"{tile_id}.png"),
                    prev_fore=meta["prev_fore"],
                    provenance=meta["provenance"],
                )
            )
        return store


def build_initial_labels(
    model: PanelClassifier,
    entries: list[ManifestEntry],
    layer: str,
    class_id: str = POSITIVE,
    mined_ids: set[str] | None = None,
) -> LabelStore:
    """Attribution -> upsample -> Otsu -> binarize for each tile; the result
    seeds both gt0 and gt_current."""
    mined_ids = mined_ids or set()
    store = LabelStore()
    for entry in entries:
        tile = load_tile(entry)
        amap = gradcam(model, tile.pixels, layer=layer, class_id=class_id)
        score = upsample_map(amap, tile.pixels.shape[:2])
        mask = binarize(score, otsu_threshold(score))
        store.add(
            LabelRecord(
                tile_id=entry.id,
                gt0=mask,
                gt_current=mask.copy(),
                prev_fore=None,
                provenance=PROVENANCE_MINED if entry.id in mined_ids else PROVENANCE_ORIGINAL,
            )
        )
    log.info("built initial labels for %d tiles from layer %s", len(store), layer)
    return store

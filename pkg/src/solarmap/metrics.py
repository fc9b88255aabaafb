"""Pixel-level evaluation: confusion counts, accuracy/precision/recall and the
precision-weighted F-measure, threshold sweeps for ROC/PR curves, trapezoidal
AUC, and dataset-level report assembly.

Degenerate denominators yield 0. Binary operating points use per-map Otsu
thresholds; curve metrics pool pixels globally across the evaluated set.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingMask, ShapeMismatch

log = logging.getLogger(__name__)

DEFAULT_THETA_SQ = 0.3
DEFAULT_THRESHOLDS = 256


@dataclass
class Confusion:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


@dataclass
class CurvePoint:
    threshold: float
    fpr: float
    tpr: float
    precision: float
    recall: float


def confusion(pred: np.ndarray, gt: np.ndarray) -> Confusion:
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    return Confusion(
        tp=int(np.count_nonzero(p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def accuracy(conf: Confusion) -> float:
    return _ratio(conf.tp + conf.tn, conf.total)


def precision(conf: Confusion) -> float:
    return _ratio(conf.tp, conf.tp + conf.fp)


def recall(conf: Confusion) -> float:
    return _ratio(conf.tp, conf.tp + conf.fn)


def false_positive_rate(conf: Confusion) -> float:
    return _ratio(conf.fp, conf.fp + conf.tn)


def f_measure(p: float, r: float, theta_sq: float = DEFAULT_THETA_SQ) -> float:
    den = theta_sq * p + r
    if den <= 0.0:
        return 0.0
    return (1.0 + theta_sq) * p * r / den


def sweep_curves(
    scores: np.ndarray, gt: np.ndarray, thresholds: np.ndarray | int = DEFAULT_THRESHOLDS
) -> list[CurvePoint]:
    """Confusion at every threshold of `scores > t` against `gt`.

    Arrays are flattened, so pooled evaluation is just concatenation before
    the call. Integer `thresholds` means that many uniform levels in [0,1].
    """
    if np.shape(scores) != np.shape(gt):
        raise ShapeMismatch(f"scores {np.shape(scores)} vs gt {np.shape(gt)}")
    if isinstance(thresholds, int):
        thresholds = np.linspace(0.0, 1.0, thresholds)
    s = np.asarray(scores, dtype=np.float64).ravel()
    g = np.asarray(gt).ravel().astype(bool)

    pos = np.sort(s[g])
    neg = np.sort(s[~g])
    n_pos, n_neg = pos.size, neg.size

    points = []
    for t in np.asarray(thresholds, dtype=np.float64):
        tp = n_pos - np.searchsorted(pos, t, side="right")
        fp = n_neg - np.searchsorted(neg, t, side="right")
        fn = n_pos - tp
        tn = n_neg - fp
        points.append(
            CurvePoint(
                threshold=float(t),
                fpr=_ratio(fp, fp + tn),
                tpr=_ratio(tp, tp + fn),
                precision=_ratio(tp, tp + fp),
                recall=_ratio(tp, tp + fn),
            )
        )
    return points


def auc(points: list[CurvePoint] | list[tuple[float, float]]) -> float:
    """Trapezoidal area under the ROC polyline.

    Accepts CurvePoints or raw (fpr, tpr) pairs; anchors (0,0) and (1,1) are
    appended when absent so single-operating-point curves integrate sensibly.
    """
    pairs = [(p.fpr, p.tpr) if isinstance(p, CurvePoint) else (float(p[0]), float(p[1])) for p in points]
    pairs.sort(key=lambda q: (q[0], q[1]))
    if not pairs or pairs[0] != (0.0, 0.0):
        pairs.insert(0, (0.0, 0.0))
    if pairs[-1] != (1.0, 1.0):
        pairs.append((1.0, 1.0))
    x = np.array([q[0] for q in pairs])
    y = np.array([q[1] for q in pairs])
    return float(np.trapezoid(y, x))


# ---------------------------------------------------------------------------
# Dataset-level evaluation


@dataclass
class TileResult:
    tile_id: str
    accuracy: float
    precision: float
    recall: float
    f_measure: float
    threshold: float
    confusion: Confusion


@dataclass
class Report:
    ac: float
    p: float
    r: float
    f: float
    auc_value: float
    aggregation: str
    theta_sq: float
    per_tile: list[TileResult] = field(default_factory=list)
    roc: list[CurvePoint] = field(default_factory=list)
    pr: list[CurvePoint] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "AC": self.ac,
            "P": self.p,
            "R": self.r,
            "F": self.f,
            "AUC": self.auc_value,
            "aggregation": self.aggregation,
            "theta_sq": self.theta_sq,
            "per_tile": [
                {
                    "id": t.tile_id,
                    "AC": t.accuracy,
                    "P": t.precision,
                    "R": t.recall,
                    "F": t.f_measure,
                    "threshold": t.threshold,
                    "tp": t.confusion.tp,
                    "tn": t.confusion.tn,
                    "fp": t.confusion.fp,
                    "fn": t.confusion.fn,
                }
                for t in self.per_tile
            ],
        }

    def save(self, json_path: Path | str, curves_csv_path: Path | str | None = None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        if curves_csv_path is not None:
            with open(curves_csv_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["threshold", "fpr", "tpr", "precision", "recall"])
                for pt in self.roc:
                    writer.writerow([pt.threshold, pt.fpr, pt.tpr, pt.precision, pt.recall])


def evaluate_predictions(
    named_scores: dict[str, np.ndarray],
    named_masks: dict[str, np.ndarray],
    named_gt: dict[str, np.ndarray],
    aggregation: str = "global",
    theta_sq: float = DEFAULT_THETA_SQ,
    thresholds: int = DEFAULT_THRESHOLDS,
) -> Report:
    """Assemble a report from per-tile score maps, binary predictions and
    reference masks. Curve metrics always pool pixels globally."""
    if aggregation not in ("global", "per-image"):
        raise ValueError(f"aggregation must be 'global' or 'per-image', got '{aggregation}'")
    per_tile = []
    pooled = Confusion()
    all_scores, all_gt = [], []
    from .pseudolabels import otsu_threshold  # local import to avoid a cycle

    for tile_id in sorted(named_scores):
        gt = named_gt[tile_id]
        score = named_scores[tile_id]
        pred = named_masks[tile_id]
        conf = confusion(pred, gt)
        pooled = pooled + conf
        p, r = precision(conf), recall(conf)
        per_tile.append(
            TileResult(
                tile_id=tile_id,
                accuracy=accuracy(conf),
                precision=p,
                recall=r,
                f_measure=f_measure(p, r, theta_sq),
                threshold=float(otsu_threshold(score)),
                confusion=conf,
            )
        )
        all_scores.append(np.asarray(score, dtype=np.float32).ravel())
        all_gt.append(np.asarray(gt).ravel())

    scores = np.concatenate(all_scores) if all_scores else np.zeros(0, dtype=np.float32)
    gts = np.concatenate(all_gt) if all_gt else np.zeros(0, dtype=np.uint8)
    roc = sweep_curves(scores, gts, thresholds) if scores.size else []
    auc_value = auc(roc) if roc else 0.0

    if aggregation == "global":
        p, r = precision(pooled), recall(pooled)
        ac = accuracy(pooled)
        f = f_measure(p, r, theta_sq)
    else:
        ac = float(np.mean([t.accuracy for t in per_tile])) if per_tile else 0.0
        p = float(np.mean([t.precision for t in per_tile])) if per_tile else 0.0
        r = float(np.mean([t.recall for t in per_tile])) if per_tile else 0.0
        f = float(np.mean([t.f_measure for t in per_tile])) if per_tile else 0.0

    return Report(
        ac=ac, p=p, r=r, f=f, auc_value=auc_value,
        aggregation=aggregation, theta_sq=theta_sq, per_tile=per_tile, roc=roc,
    )


def evaluate_dataset(
    model,
    entries,
    aggregation: str = "global",
    theta_sq: float = DEFAULT_THETA_SQ,
    thresholds: int = DEFAULT_THRESHOLDS,
) -> Report:
    """Run the mapper on every test tile (reference masks required) and score
    it: binary metrics at per-map Otsu thresholds, curves from the global
    pixel pool."""
    from .data import load_tile
    from .mapper import mapper_forward
    from .pseudolabels import binarize, otsu_threshold

    named_scores, named_masks, named_gt = {}, {}, {}
    for entry in entries:
        tile = load_tile(entry)
        if tile.ref_mask is None:
            raise MissingMask(f"test entry '{entry.id}' has no reference mask")
        pair = mapper_forward(model, tile.pixels)
        named_scores[entry.id] = pair.f0
        named_masks[entry.id] = binarize(pair.f0, otsu_threshold(pair.f0))
        named_gt[entry.id] = tile.ref_mask
    return evaluate_predictions(named_scores, named_masks, named_gt, aggregation, theta_sq, thresholds)

"""Progressive label correction: foreground-count acceptance criteria, the
fallback decision table, and morphological refinement of accepted outputs.

All three criteria are strict open intervals on the foreground pixel count of
the Otsu-binarized network output (before refinement):

    c1: size range        cand in (beta1*N,      beta2*N)
    c2: initial agreement cand in (gamma1*init,  gamma2*init)
    c3: stability         cand in (delta1*prev,  delta2*prev), vacuous on the
                          first check (prev unset)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import BadN, MissingRecord
from .pseudolabels import LabelStore, binarize, otsu_threshold

log = logging.getLogger(__name__)


@dataclass
class CorrectionParams:
    beta1: float = 0.01
    beta2: float = 0.1
    gamma1: float = 0.6
    gamma2: float = 1.4
    delta1: float = 0.8
    delta2: float = 1.2
    se1_size: int = 5  # opening structuring element
    se2_size: int = 3  # completeness dilation
    cadence: int = 2  # epochs between correction checks

    def validate(self) -> None:
        for lo, hi in (("beta1", "beta2"), ("gamma1", "gamma2"), ("delta1", "delta2")):
            if not getattr(self, lo) < getattr(self, hi):
                raise ValueError(f"{lo} must be < {hi}")
        for se in (self.se1_size, self.se2_size):
            if se < 1 or se % 2 == 0:
                raise ValueError(f"structuring elements must be odd and positive, got {se}")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")


@dataclass
class CriteriaVerdict:
    c1: bool  # size range
    c2: bool  # consistency with the initial label
    c3: bool  # stability across successive checks


class LabelDecision(Enum):
    ACCEPT_REFINED = "accept_refined"
    FALLBACK_INITIAL = "fallback_initial"
    KEEP_CURRENT = "keep_current"


def foreground_count(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


def evaluate_criteria(
    cand_fore: int,
    init_fore: int,
    prev_fore: int | None,
    n_pixels: int,
    params: CorrectionParams,
) -> CriteriaVerdict:
    if n_pixels <= 0:
        raise BadN(f"pixel count must be positive, got {n_pixels}")
    c1 = params.beta1 * n_pixels < cand_fore < params.beta2 * n_pixels
    c2 = params.gamma1 * init_fore < cand_fore < params.gamma2 * init_fore
    c3 = prev_fore is None or params.delta1 * prev_fore < cand_fore < params.delta2 * prev_fore
    return CriteriaVerdict(c1=c1, c2=c2, c3=c3)


def decide(verdict: CriteriaVerdict) -> LabelDecision:
    """Total decision table; precedence c1, then c2, then c3."""
    if not verdict.c1:
        return LabelDecision.FALLBACK_INITIAL
    if not verdict.c2:
        return LabelDecision.FALLBACK_INITIAL
    if not verdict.c3:
        return LabelDecision.KEEP_CURRENT
    return LabelDecision.ACCEPT_REFINED


# ---------------------------------------------------------------------------
# Binary morphology with square all-ones structuring elements, zero padding


def _windows(mask: np.ndarray, se_size: int) -> np.ndarray:
    pad = se_size // 2
    padded = np.pad(mask.astype(np.uint8), pad, mode="constant", constant_values=0)
    return np.lib.stride_tricks.sliding_window_view(padded, (se_size, se_size))


def erode(mask: np.ndarray, se_size: int) -> np.ndarray:
    """Minkowski erosion: a pixel survives iff the SE fits entirely inside."""
    return _windows(mask, se_size).min(axis=(2, 3)).astype(np.uint8)


def dilate(mask: np.ndarray, se_size: int) -> np.ndarray:
    """Minkowski dilation: a pixel fires iff the SE touches any foreground."""
    return _windows(mask, se_size).max(axis=(2, 3)).astype(np.uint8)


def opening(mask: np.ndarray, se_size: int) -> np.ndarray:
    """Erode then dilate; removes components smaller than the SE."""
    return dilate(erode(mask, se_size), se_size)


def refine_mask(score: np.ndarray, params: CorrectionParams) -> np.ndarray:
    """Otsu-binarize a foreground score map, open with SE1, dilate with SE2."""
    mask = binarize(score, otsu_threshold(score))
    return dilate(opening(mask, params.se1_size), params.se2_size)


# ---------------------------------------------------------------------------
# Per-batch correction step


@dataclass
class CorrectionReport:
    accepted: int = 0
    fallback: int = 0
    kept: int = 0
    mean_foreground_delta: float = 0.0

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "fallback": self.fallback,
            "kept": self.kept,
            "mean_foreground_delta": self.mean_foreground_delta,
        }


def correction_step(outputs: dict[str, np.ndarray], store: LabelStore, params: CorrectionParams) -> CorrectionReport:
    """Evaluate every tile's foreground score map and update its label.

    `outputs` maps tile id -> foreground score map in [0,1]. The criteria are
    evaluated on the Otsu-binarized output's foreground count; accepted
    outputs are stored in their morphologically refined form.
    """
    params.validate()
    report = CorrectionReport()
    deltas = []
    for tile_id in sorted(outputs):
        if tile_id not in store:
            raise MissingRecord(f"no label record for tile '{tile_id}'")
        rec = store[tile_id]
        score = outputs[tile_id]
        cand_mask = binarize(score, otsu_threshold(score))
        cand_fore = foreground_count(cand_mask)
        verdict = evaluate_criteria(
            cand_fore=cand_fore,
            init_fore=foreground_count(rec.gt0),
            prev_fore=rec.prev_fore,
            n_pixels=int(score.size),
            params=params,
        )
        decision = decide(verdict)
        before = foreground_count(rec.gt_current)
        if decision is LabelDecision.ACCEPT_REFINED:
            rec.gt_current = dilate(opening(cand_mask, params.se1_size), params.se2_size)
            rec.prev_fore = cand_fore
            report.accepted += 1
        elif decision is LabelDecision.FALLBACK_INITIAL:
            rec.gt_current = rec.gt0.copy()
            rec.prev_fore = None
            report.fallback += 1
        else:
            report.kept += 1
        deltas.append(foreground_count(rec.gt_current) - before)
    report.mean_foreground_delta = float(np.mean(deltas)) if deltas else 0.0
    log.info(
        "correction: accepted=%d fallback=%d kept=%d mean_delta=%.1f",
        report.accepted, report.fallback, report.kept, report.mean_foreground_delta,
    )
    return report

"""Pixel metrics and threshold sweeps on toy predictions.

Accuracy, precision, recall and the precision-weighted F-measure come from
exact confusion counts; ROC/PR curves sweep 256 thresholds over the pooled
pixel scores and AUC integrates the ROC trapezoidally.
"""

import numpy as np

from solarmap import (
    accuracy,
    auc,
    confusion,
    evaluate_predictions,
    f_measure,
    precision,
    recall,
    sweep_curves,
)

rng = np.random.default_rng(3)

gt = np.zeros((64, 64), np.uint8)
gt[20:44, 20:44] = 1

# a noisy score map that mostly tracks the truth
score = np.clip(gt * 0.7 + rng.normal(0, 0.15, gt.shape) + 0.1, 0, 1)
pred = (score > 0.5).astype(np.uint8)

conf = confusion(pred, gt)
p, r = precision(conf), recall(conf)
print(f"confusion: tp={conf.tp} tn={conf.tn} fp={conf.fp} fn={conf.fn}")
print(f"AC={accuracy(conf):.4f} P={p:.4f} R={r:.4f} F(theta^2=0.3)={f_measure(p, r):.4f}")
print(f"note F weights precision: f(0.9, 0.6)={f_measure(0.9, 0.6):.4f} "
      f"vs f(0.6, 0.9)={f_measure(0.6, 0.9):.4f}")

points = sweep_curves(score, gt, 256)
print(f"\nROC sweep: {len(points)} thresholds, AUC={auc(points):.4f}")
ideal = sweep_curves(gt.astype(float), gt, 256)
print(f"perfect separator AUC={auc(ideal):.4f}; "
      f"inverted scores AUC={auc(sweep_curves(1 - gt.astype(float), gt, 256)):.4f}")

# dataset-style report over two tiles, both aggregation modes
gt2 = np.roll(gt, 10, axis=0)
score2 = np.clip(gt2 * 0.6 + rng.normal(0, 0.2, gt.shape) + 0.15, 0, 1)
pred2 = (score2 > 0.5).astype(np.uint8)
for agg in ("global", "per-image"):
    report = evaluate_predictions(
        {"a": score, "b": score2}, {"a": pred, "b": pred2}, {"a": gt, "b": gt2}, aggregation=agg
    )
    print(f"{agg:9}: AC={report.ac:.4f} P={report.p:.4f} R={report.r:.4f} "
          f"F={report.f:.4f} AUC={report.auc_value:.4f}")

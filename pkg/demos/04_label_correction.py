"""Walk through the label-correction rules on synthetic score maps.

Every couple of epochs the mapper's own outputs are auditioned as new
labels. Three open-interval checks on the Otsu-binarized foreground count
decide per tile: accept a morphologically refined copy, fall back to the
initial label, or keep the current one.
"""

import numpy as np

from solarmap import (
    CorrectionParams,
    CriteriaVerdict,
    LabelRecord,
    LabelStore,
    correction_step,
    decide,
    dilate,
    erode,
    evaluate_criteria,
    foreground_count,
    opening,
    refine_mask,
)

params = CorrectionParams()  # beta (0.01, 0.1), gamma (0.6, 1.4), delta (0.8, 1.2)
n = 128 * 128

print("decision table (c1=size range, c2=vs initial, c3=stability):")
for c1 in (True, False):
    for c2 in (True, False):
        for c3 in (True, False):
            print(f"  c1={c1!s:5} c2={c2!s:5} c3={c3!s:5} -> {decide(CriteriaVerdict(c1, c2, c3)).value}")

verdict = evaluate_criteria(cand_fore=3000, init_fore=2800, prev_fore=2900, n_pixels=65536, params=params)
print(f"\ncand=3000 init=2800 prev=2900 on 256x256: {verdict} -> {decide(verdict).value}")

# morphology: opening prunes speckle, the final dilation restores coverage
mask = np.zeros((40, 40), np.uint8)
mask[8:24, 8:24] = 1          # a solid 16x16 region
mask[30, 30] = 1              # an isolated false positive
opened = opening(mask, 5)
print(f"\nopening(5x5): {foreground_count(mask)} -> {foreground_count(opened)} px "
      f"(speckle gone: {opened[30, 30] == 0})")
print(f"dilate(3x3) after opening: {foreground_count(dilate(opened, 3))} px")
print(f"erode(3x3) of the block alone: {foreground_count(erode(mask, 3))} px")

# a full correction step over a toy store
score = np.where(mask > 0, 0.9, 0.05).astype(np.float64)
store = LabelStore()
store.add(LabelRecord(tile_id="toy", gt0=mask.copy(), gt_current=mask.copy()))
report = correction_step({"toy": score}, store, params)
print(f"\ncorrection step: accepted={report.accepted} fallback={report.fallback} kept={report.kept}")
print(f"refined label foreground: {foreground_count(store['toy'].gt_current)} px "
      f"(refine_mask agrees: {np.array_equal(store['toy'].gt_current, refine_mask(score, params))})")

"""Train a small tile classifier and look at its attribution maps.

The classifier is a narrow VGG16-style stack (13 conv layers, three fc
layers). Attribution maps are gradient-weighted feature sums from any conv
layer; deeper layers give coarser blobs with better coverage.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from solarmap import (
    ClassifierConfig,
    SynthConfig,
    binarize,
    build_classifier,
    classifier_forward,
    gradcam,
    load_tile,
    otsu_threshold,
    split_dataset,
    synth_generate,
    train_classifier,
    upsample_map,
)

out = Path("demo_out/attribution")
out.mkdir(parents=True, exist_ok=True)

manifest = synth_generate(
    SynthConfig(n_tiles=60, tile_size=64, panel_count_range=(4, 9), panel_cell_size=5, seed=7),
    "demo_out/attribution/data",
)
split = split_dataset(manifest, (0.7, 0.3, 0.0), seed=0)

cfg = ClassifierConfig(width_multiplier=0.125, input_size=64, learning_rate=1e-3,
                       batch_size=8, epochs=8, seed=0)
model = build_classifier(cfg)
_, history = train_classifier(model, split.split("train"), split.split("val"), cfg)
for h in history:
    print(f"epoch {h['epoch']}: loss={h['train_loss']:.4f} val_acc={h['val_acc']:.3f}")

positives = [e for e in split.split("val") if e.label == "positive"]
tile = load_tile(positives[0])
p_pos, p_neg = classifier_forward(model, tile.pixels)
print(f"\ntile {tile.id}: p_pos={p_pos:.3f} p_neg={p_neg:.3f}")

# compare attribution depth: conv3_3 (sharp, partial) vs conv5_3 (coarse, full)
for layer in ("conv3_3", "conv4_3", "conv5_3"):
    amap = gradcam(model, tile.pixels, layer=layer)
    score = upsample_map(amap, tile.pixels.shape[:2])
    mask = binarize(score, otsu_threshold(score))
    Image.fromarray((score * 255).astype(np.uint8), mode="L").save(out / f"{tile.id}_{layer}.png")
    overlap = (mask & tile.ref_mask).sum() / max(tile.ref_mask.sum(), 1)
    print(f"{layer}: map {amap.values.shape}, mask covers {overlap:.0%} of true panels, "
          f"foreground {mask.mean():.1%} of tile")
print(f"\nmap renders written to {out}")

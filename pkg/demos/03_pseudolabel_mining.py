"""Mine positives from unlabeled tiles and build initial pseudo labels.

A trained classifier scores unlabeled tiles; everything at or above tau
joins the training pool. Attribution maps of the positive pool are Otsu
binarized into the initial labels GT0 that seed the mapping network.
"""

from pathlib import Path

from solarmap import (
    ClassifierConfig,
    SynthConfig,
    build_classifier,
    build_initial_labels,
    load_tile,
    mine_positives,
    split_dataset,
    synth_generate,
    train_classifier,
)
from solarmap.metrics import confusion, precision, recall

manifest = synth_generate(
    SynthConfig(n_tiles=60, tile_size=64, panel_count_range=(4, 9), panel_cell_size=5,
                seed=11, unlabeled_count=20),
    "demo_out/mining/data",
)
split = split_dataset(manifest, (0.75, 0.25, 0.0), seed=0)

cfg = ClassifierConfig(width_multiplier=0.125, input_size=64, learning_rate=1e-3,
                       batch_size=8, epochs=8, seed=1)
model = build_classifier(cfg)
train_classifier(model, split.split("train"), split.split("val"), cfg)

unlabeled = split.split("unlabeled")
mined = mine_positives(model, unlabeled, tau=0.5)
truly_positive = {e.id for e in unlabeled if load_tile(e).ref_mask.sum() > 0}
print(f"mined {len(mined)} of {len(unlabeled)} unlabeled tiles "
      f"({len(truly_positive & set(mined))} of {len(truly_positive)} true positives found)")

by_id = {e.id: e for e in split.entries}
originals = [e for e in split.entries if e.split in ("train", "val") and e.label == "positive"]
store = build_initial_labels(model, originals + [by_id[i] for i in mined],
                             layer="conv4_3", mined_ids=set(mined))
store.save("demo_out/mining/labels")
print(f"label store holds {len(store)} records "
      f"({sum(1 for i in store.ids() if store[i].provenance == 'mined')} mined)")

# how good are the initial labels against the synthetic truth?
ps, rs = [], []
for tile_id in store.ids():
    ref = load_tile(by_id[tile_id]).ref_mask
    conf = confusion(store[tile_id].gt0, ref)
    ps.append(precision(conf))
    rs.append(recall(conf))
print(f"initial pseudo labels: mean precision {sum(ps)/len(ps):.3f}, "
      f"mean recall {sum(rs)/len(rs):.3f} (coarse and over-complete, as expected)")

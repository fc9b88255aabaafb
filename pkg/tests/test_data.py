import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from solarmap import (
    SynthConfig,
    load_manifest,
    load_tile,
    split_dataset,
    synth_generate,
)
from solarmap.data import ManifestEntry, save_manifest, save_mask_png, save_tile_png
from solarmap.errors import (
    BadFractions,
    DecodeError,
    DuplicateId,
    MalformedManifest,
    MissingFile,
    ShapeMismatch,
)


def _write_manifest(path, entries):
    path.write_text(json.dumps({"entries": entries}))


def _write_png(path, value=128, size=16, mode="RGB"):
    arr = np.full((size, size, 3), value, dtype=np.uint8)
    if mode == "L":
        arr = arr[:, :, 0]
    Image.fromarray(arr, mode=mode).save(path)


class TestLoadManifest:
    def test_round_trip(self, tmp_path):
        for i in range(3):
            _write_png(tmp_path / f"t{i}.png")
        _write_manifest(
            tmp_path / "m.json",
            [{"id": f"t{i}", "image": f"t{i}.png", "label": "positive", "split": "train"} for i in range(3)],
        )
        manifest = load_manifest(tmp_path / "m.json")
        assert len(manifest.entries) == 3
        assert manifest.counts() == {"train": 3}

    def test_missing_image_names_id(self, tmp_path):
        _write_manifest(
            tmp_path / "m.json",
            [{"id": "ghost", "image": "nope.png", "label": "positive", "split": "train"}],
        )
        with pytest.raises(MissingFile, match="ghost"):
            load_manifest(tmp_path / "m.json")

    def test_duplicate_id(self, tmp_path):
        _write_png(tmp_path / "a.png")
        entries = [
            {"id": "t1", "image": "a.png", "label": "positive", "split": "train"},
            {"id": "t1", "image": "a.png", "label": "negative", "split": "train"},
        ]
        _write_manifest(tmp_path / "m.json", entries)
        with pytest.raises(DuplicateId):
            load_manifest(tmp_path / "m.json")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingFile):
            load_manifest(tmp_path / "absent.json")

    def test_malformed_json(self, tmp_path):
        (tmp_path / "m.json").write_text("{not json")
        with pytest.raises(MalformedManifest):
            load_manifest(tmp_path / "m.json")

    def test_bad_label(self, tmp_path):
        _write_png(tmp_path / "a.png")
        _write_manifest(tmp_path / "m.json", [{"id": "a", "image": "a.png", "label": "maybe", "split": "train"}])
        with pytest.raises(MalformedManifest):
            load_manifest(tmp_path / "m.json")

    def test_labeled_split_requires_label(self, tmp_path):
        _write_png(tmp_path / "a.png")
        _write_manifest(tmp_path / "m.json", [{"id": "a", "image": "a.png", "label": "unlabeled", "split": "train"}])
        with pytest.raises(MalformedManifest):
            load_manifest(tmp_path / "m.json")


class TestLoadTile:
    def test_constant_255_scales_to_one(self, tmp_path):
        _write_png(tmp_path / "a.png", value=255, size=32)
        entry = ManifestEntry("a", tmp_path / "a.png", "positive", "train")
        tile = load_tile(entry)
        assert tile.pixels.shape == (32, 32, 3)
        assert np.all(tile.pixels == 1.0)

    def test_8bit_value_51(self, tmp_path):
        _write_png(tmp_path / "a.png", value=51, size=8)
        tile = load_tile(ManifestEntry("a", tmp_path / "a.png", "positive", "train"))
        assert np.allclose(tile.pixels, 0.2, atol=1 / 255)

    def test_mask_shape_mismatch(self, tmp_path):
        _write_png(tmp_path / "img.png", size=32)
        _write_png(tmp_path / "msk.png", size=16, mode="L")
        entry = ManifestEntry("a", tmp_path / "img.png", "positive", "train", tmp_path / "msk.png")
        with pytest.raises(ShapeMismatch):
            load_tile(entry)

    def test_mask_binarized_any_nonzero(self, tmp_path):
        _write_png(tmp_path / "img.png", size=8)
        arr = np.zeros((8, 8), dtype=np.uint8)
        arr[0, 0] = 1
        arr[1, 1] = 200
        Image.fromarray(arr, mode="L").save(tmp_path / "msk.png")
        tile = load_tile(ManifestEntry("a", tmp_path / "img.png", "positive", "train", tmp_path / "msk.png"))
        assert tile.ref_mask.sum() == 2
        assert set(np.unique(tile.ref_mask)) <= {0, 1}

    def test_undecodable(self, tmp_path):
        (tmp_path / "junk.png").write_bytes(b"this is not a png")
        with pytest.raises(DecodeError):
            load_tile(ManifestEntry("a", tmp_path / "junk.png", "positive", "train"))

    def test_round_trip_lossless(self, tmp_path, rng):
        pixels = rng.random((16, 16, 3)).astype(np.float32)
        save_tile_png(tmp_path / "t.png", pixels)
        tile = load_tile(ManifestEntry("t", tmp_path / "t.png", "positive", "train"))
        assert np.abs(tile.pixels - pixels).max() <= 1 / 255 + 1e-6


class TestSynthGenerate:
    def test_all_positive_have_panels(self, tmp_path):
        cfg = SynthConfig(n_tiles=10, tile_size=64, panel_count_range=(4, 9), panel_cell_size=5,
                          positive_fraction=1.0, seed=3)
        manifest = synth_generate(cfg, tmp_path)
        assert len(manifest.entries) == 10
        for entry in manifest.entries:
            assert entry.label == "positive"
            assert load_tile(entry).ref_mask.sum() > 0

    def test_all_negative_masks_empty(self, tmp_path):
        cfg = SynthConfig(n_tiles=6, tile_size=64, panel_count_range=(4, 9), panel_cell_size=5,
                          positive_fraction=0.0, seed=3)
        manifest = synth_generate(cfg, tmp_path)
        for entry in manifest.entries:
            assert load_tile(entry).ref_mask.sum() == 0

    def test_seeded_rerun_byte_identical(self, tmp_path):
        cfg = SynthConfig(n_tiles=6, tile_size=64, panel_count_range=(4, 9), panel_cell_size=5,
                          positive_fraction=0.5, seed=7, unlabeled_count=2)
        digests = []
        for sub in ("a", "b"):
            manifest = synth_generate(cfg, tmp_path / sub)
            files = sorted((tmp_path / sub).rglob("*.*"))
            digests.append({
                p.relative_to(tmp_path / sub).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
                for p in files
            })
        assert digests[0] == digests[1]

    def test_mask_fraction_within_config_bounds(self, small_dataset):
        cfg, manifest, _ = small_dataset
        n = cfg.tile_size**2
        cell_area = cfg.panel_cell_size**2
        lo = cfg.panel_count_range[0] * cell_area / n
        hi = cfg.panel_count_range[1] * cell_area / n
        for entry in manifest.entries:
            if entry.label != "positive":
                continue
            frac = load_tile(entry).ref_mask.sum() / n
            assert lo <= frac <= hi

    def test_mask_area_is_count_times_cell_area(self, small_dataset):
        cfg, manifest, _ = small_dataset
        cell_area = cfg.panel_cell_size**2
        for entry in manifest.entries:
            fore = int(load_tile(entry).ref_mask.sum())
            assert fore % cell_area == 0


class TestSplitDataset:
    def _manifest(self, n):
        from solarmap import DatasetManifest

        man = DatasetManifest()
        man.entries = [
            ManifestEntry(f"t{i}", f"t{i}.png", "positive" if i % 2 else "negative", "train")
            for i in range(n)
        ]
        return man

    def test_exact_counts(self):
        split = split_dataset(self._manifest(100), (0.8, 0.1, 0.1), seed=1)
        counts = split.counts()
        assert (counts["train"], counts["val"], counts["test"]) == (80, 10, 10)

    def test_deterministic(self):
        a = split_dataset(self._manifest(50), (0.6, 0.2, 0.2), seed=9)
        b = split_dataset(self._manifest(50), (0.6, 0.2, 0.2), seed=9)
        assert [(e.id, e.split) for e in a.entries] == [(e.id, e.split) for e in b.entries]

    def test_bad_fractions(self):
        with pytest.raises(BadFractions):
            split_dataset(self._manifest(10), (0.5, 0.5, 0.5), seed=0)

    def test_partition_exact(self):
        manifest = self._manifest(37)
        split = split_dataset(manifest, (0.5, 0.3, 0.2), seed=4)
        ids = {e.id for e in manifest.entries}
        by_split = [set(e.id for e in split.split(s)) for s in ("train", "val", "test")]
        assert set.union(*by_split) == ids
        assert by_split[0] & by_split[1] == set()
        assert by_split[0] & by_split[2] == set()
        assert by_split[1] & by_split[2] == set()

    def test_unlabeled_pass_through(self, small_dataset):
        _, manifest, _ = small_dataset
        split = split_dataset(manifest, (0.5, 0.25, 0.25), seed=2)
        assert len(split.split("unlabeled")) == len(manifest.split("unlabeled"))


class TestManifestRoundTrip:
    def test_save_load(self, small_dataset, tmp_path):
        _, manifest, root = small_dataset
        out = root / "copy.json"
        save_manifest(manifest, out)
        again = load_manifest(out)
        assert [(e.id, e.label, e.split) for e in again.entries] == [
            (e.id, e.label, e.split) for e in manifest.entries
        ]

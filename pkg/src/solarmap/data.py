"""Dataset representation, on-disk ingestion, deterministic splits, and a
synthetic aerial-tile generator with exact ground truth.

On-disk layout produced by :func:`synth_generate` (and expected by the rest of
the pipeline):

    <root>/images/<id>.png    8-bit RGB tile
    <root>/masks/<id>.png     8-bit single-channel mask, {0, 255}
    <root>/manifest.json      entry list (see docs/formats.md)
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BadFractions,
    DecodeError,
    DuplicateId,
    IoError,
    MalformedManifest,
    MissingFile,
    ShapeMismatch,
)

log = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"
UNLABELED = "unlabeled"
LABELS = (POSITIVE, NEGATIVE, UNLABELED)
SPLITS = ("train", "val", "test", "unlabeled")

# Panel rendering palette (RGB in [0,1]): dark blue-gray cells separated by
# lighter 1-px grid lines on a lighter rooftop; dark distractors carry no grid.
PANEL_COLOR = (0.15, 0.18, 0.30)
GRID_COLOR = (0.50, 0.53, 0.66)


@dataclass
class Tile:
    """One image tile with optional image-level label and reference mask."""

    id: str
    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]
    image_label: str | None = None
    ref_mask: np.ndarray | None = None  # (H, W) uint8 in {0, 1}

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass
class ManifestEntry:
    id: str
    image_path: Path
    label: str
    split: str
    mask_path: Path | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def by_id(self, tile_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == tile_id:
                return e
        raise KeyError(tile_id)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.split] = out.get(e.split, 0) + 1
        return out


@dataclass
class SynthConfig:
    """Knobs for the synthetic aerial-tile generator.

    Panel arrays are grids of dark cells; the union of the cells (grid lines
    excluded) is the reference mask, so mask area == panel_count * cell_area.
    """

    n_tiles: int = 100
    tile_size: int = 256
    panel_count_range: tuple[int, int] = (6, 24)
    panel_cell_size: int = 12
    rooftop_per_tile: tuple[int, int] = (1, 3)
    background_noise: float = 0.03
    positive_fraction: float = 0.5
    seed: int = 0
    unlabeled_count: int = 0  # tail of the set emitted without labels

    def validate(self) -> None:
        lo, hi = self.panel_count_range
        if not (1 <= lo <= hi <= 200):
            raise ValueError(f"panel_count_range must lie within [1, 200], got {self.panel_count_range}")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ValueError(f"positive_fraction must be in [0,1], got {self.positive_fraction}")
        if self.unlabeled_count > self.n_tiles:
            raise ValueError("unlabeled_count cannot exceed n_tiles")


# ---------------------------------------------------------------------------
# PNG round-trip helpers


def save_tile_png(path: Path, pixels: np.ndarray) -> None:
    """Write an (H, W, 3) float array in [0,1] as an 8-bit RGB PNG."""
    arr = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def save_mask_png(path: Path, bits: np.ndarray) -> None:
    """Write an (H, W) {0,1} mask as an 8-bit single-channel {0,255} PNG."""
    Image.fromarray((bits.astype(np.uint8) * 255), mode="L").save(path)


def load_mask_png(path: Path) -> np.ndarray:
    """Read a mask PNG; any nonzero value maps to 1 (tolerates antialiasing)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# Manifest I/O


def _parse_entry(raw: dict, base: Path) -> ManifestEntry:
    for key in ("id", "image", "label", "split"):
        if key not in raw:
            raise MalformedManifest(f"manifest entry missing key '{key}': {raw}")
    if raw["label"] not in LABELS:
        raise MalformedManifest(f"entry '{raw['id']}': unknown label '{raw['label']}'")
    if raw["split"] not in SPLITS:
        raise MalformedManifest(f"entry '{raw['id']}': unknown split '{raw['split']}'")
    if raw["split"] != UNLABELED and raw["label"] == UNLABELED:
        raise MalformedManifest(f"entry '{raw['id']}': labeled split requires a positive/negative label")
    mask = raw.get("mask")
    return ManifestEntry(
        id=str(raw["id"]),
        image_path=base / raw["image"],
        label=raw["label"],
        split=raw["split"],
        mask_path=(base / mask) if mask else None,
    )


def load_manifest(path: Path | str) -> DatasetManifest:
    """Load and validate a manifest JSON document.

    Raises MissingFile (naming the offending id), MalformedManifest or
    DuplicateId. Logs per-split entry counts on success.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise MalformedManifest(f"{path}: expected an object with an 'entries' list")

    base = path.parent
    manifest = DatasetManifest()
    seen: set[str] = set()
    for raw in doc["entries"]:
        entry = _parse_entry(raw, base)
        if entry.id in seen:
            raise DuplicateId(f"duplicate id '{entry.id}' in {path}")
        seen.add(entry.id)
        if not entry.image_path.is_file():
            raise MissingFile(f"entry '{entry.id}': image not found at {entry.image_path}")
        if entry.mask_path is not None and not entry.mask_path.is_file():
            raise MissingFile(f"entry '{entry.id}': mask not found at {entry.mask_path}")
        manifest.entries.append(entry)

    log.info("loaded manifest %s: %s", path, manifest.counts())
    return manifest


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    """Write a manifest with paths stored relative to the manifest location."""
    path = Path(path)
    base = path.parent
    entries = []
    for e in manifest.entries:
        raw = {
            "id": e.id,
            "image": str(e.image_path.relative_to(base)),
            "label": e.label,
            "split": e.split,
        }
        if e.mask_path is not None:
            raw["mask"] = str(e.mask_path.relative_to(base))
        entries.append(raw)
    path.write_text(json.dumps({"entries": entries}, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Tile loading


def load_tile(entry: ManifestEntry) -> Tile:
    """Load one tile; pixels scaled to [0,1], mask binarized if present."""
    try:
        with Image.open(entry.image_path) as im:
            if im.mode != "RGB":
                raise DecodeError(f"entry '{entry.id}': expected 3-channel RGB, got mode '{im.mode}'")
            arr = np.asarray(im)
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"entry '{entry.id}': cannot decode {entry.image_path}: {exc}") from exc

    pixels = arr.astype(np.float32) / 255.0
    ref_mask = None
    if entry.mask_path is not None:
        ref_mask = load_mask_png(entry.mask_path)
        if ref_mask.shape != pixels.shape[:2]:
            raise ShapeMismatch(
                f"entry '{entry.id}': mask {ref_mask.shape} does not match image {pixels.shape[:2]}"
            )
    label = entry.label if entry.label in (POSITIVE, NEGATIVE) else None
    return Tile(id=entry.id, pixels=pixels, image_label=label, ref_mask=ref_mask)


# ---------------------------------------------------------------------------
# Synthetic generator


def _paint_rect(img: np.ndarray, y0: int, x0: int, h: int, w: int, color, jitter, rng) -> None:
    block = np.empty((h, w, 3), dtype=np.float32)
    block[:] = color
    if jitter > 0:
        block += rng.normal(0.0, jitter, size=(h, w, 1)).astype(np.float32)
    img[y0 : y0 + h, x0 : x0 + w] = block


def _render_panel_array(img, mask, y0, x0, rows, cols, cell, rng) -> None:
    """Grid of dark cells with 1-px lighter separators; mask covers cells only."""
    h = rows * cell + (rows - 1)
    w = cols * cell + (cols - 1)
    img[y0 : y0 + h, x0 : x0 + w] = GRID_COLOR
    for r in range(rows):
        for c in range(cols):
            yy = y0 + r * (cell + 1)
            xx = x0 + c * (cell + 1)
            shade = rng.normal(0.0, 0.015)
            col = np.clip(np.asarray(PANEL_COLOR, dtype=np.float32) + shade, 0.0, 1.0)
            img[yy : yy + cell, xx : xx + cell] = col
            mask[yy : yy + cell, xx : xx + cell] = 1


def _draw_roof(img, n, h, w, rng, y0=None, x0=None) -> tuple[int, int, int, int]:
    if y0 is None:
        y0 = int(rng.integers(0, n - h))
    if x0 is None:
        x0 = int(rng.integers(0, n - w))
    shade = 0.55 + 0.25 * rng.random()
    tint = rng.normal(0.0, 0.03, size=3)
    color = np.clip(np.array([shade, shade * 0.97, shade * 0.92]) + tint, 0.0, 1.0)
    _paint_rect(img, y0, x0, h, w, color.astype(np.float32), 0.01, rng)
    return y0, x0, h, w


def _synth_tile(cfg: SynthConfig, positive: bool, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = cfg.tile_size
    img = np.empty((n, n, 3), dtype=np.float32)

    # background: grass or asphalt field
    if rng.random() < 0.5:
        base = np.array([0.30, 0.42, 0.22], dtype=np.float32)
    else:
        base = np.array([0.48, 0.47, 0.45], dtype=np.float32)
    img[:] = base + rng.normal(0.0, 0.02, size=3).astype(np.float32)

    mask = np.zeros((n, n), dtype=np.uint8)
    roof_lo, roof_hi = cfg.rooftop_per_tile
    for _ in range(int(rng.integers(roof_lo, roof_hi + 1))):
        _draw_roof(img, n, int(rng.integers(n // 4, n // 2)), int(rng.integers(n // 4, n // 2)), rng)

    # dark distractors (water / shadow) with no grid texture, on any tile
    for _ in range(int(rng.integers(0, 3))):
        h = int(rng.integers(n // 10, n // 3))
        w = int(rng.integers(n // 10, n // 3))
        y0 = int(rng.integers(0, n - h))
        x0 = int(rng.integers(0, n - w))
        dark = np.array([0.10, 0.12, 0.18], dtype=np.float32) + rng.normal(0.0, 0.02, size=3).astype(np.float32)
        _paint_rect(img, y0, x0, h, w, np.clip(dark, 0.0, 1.0), 0.008, rng)

    if positive:
        # host roof sized to the panel array so the requested count always fits
        count = int(rng.integers(cfg.panel_count_range[0], cfg.panel_count_range[1] + 1))
        cell = cfg.panel_cell_size
        rows = int(math.ceil(math.sqrt(count)))
        cols = int(math.ceil(count / rows))
        full_rows, rem = divmod(count, cols)
        total_rows = full_rows + (1 if rem else 0)
        ah = total_rows * cell + (total_rows - 1)
        aw = cols * cell + (cols - 1)
        margin = int(rng.integers(4, 13))
        rh, rw = ah + 2 * margin, aw + 2 * margin
        if rh >= n or rw >= n:
            raise ValueError(
                f"panel array {ah}x{aw}px plus margin does not fit a {n}px tile; "
                f"reduce panel_cell_size or panel_count_range"
            )
        ry, rx, _, _ = _draw_roof(img, n, rh, rw, rng)
        y0, x0 = ry + margin, rx + margin
        if full_rows:
            _render_panel_array(img, mask, y0, x0, full_rows, cols, cell, rng)
        if rem:
            _render_panel_array(img, mask, y0 + full_rows * (cell + 1), x0, 1, rem, cell, rng)

    if cfg.background_noise > 0:
        img += rng.normal(0.0, cfg.background_noise, size=img.shape).astype(np.float32)
    np.clip(img, 0.0, 1.0, out=img)
    return img, mask


def synth_generate(cfg: SynthConfig, out_dir: Path | str) -> DatasetManifest:
    """Render the synthetic dataset to disk and return its manifest.

    Positive tiles carry >=1 rooftop with a grid of dark panel cells whose
    union is the reference mask; negatives get rooftops and clutter without
    panels. Identical seed => byte-identical files. Masks are written for
    every tile (empty for negatives), including unlabeled ones, so synthetic
    truth stays available for verification.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out_dir}: {exc}") from exc

    rng = np.random.default_rng(cfg.seed)
    n_pos = int(round(cfg.n_tiles * cfg.positive_fraction))
    positives = np.zeros(cfg.n_tiles, dtype=bool)
    positives[rng.permutation(cfg.n_tiles)[:n_pos]] = True

    manifest = DatasetManifest()
    n_labeled = cfg.n_tiles - cfg.unlabeled_count
    for i in range(cfg.n_tiles):
        tile_id = f"t{i:05d}"
        img, mask = _synth_tile(cfg, bool(positives[i]), rng)
        image_path = out_dir / "images" / f"{tile_id}.png"
        mask_path = out_dir / "masks" / f"{tile_id}.png"
        try:
            save_tile_png(image_path, img)
            save_mask_png(mask_path, mask)
        except OSError as exc:
            raise IoError(f"cannot write tile {tile_id}: {exc}") from exc
        unlabeled = i >= n_labeled
        manifest.entries.append(
            ManifestEntry(
                id=tile_id,
                image_path=image_path,
                label=UNLABELED if unlabeled else (POSITIVE if positives[i] else NEGATIVE),
                split=UNLABELED if unlabeled else "train",
                mask_path=mask_path,
            )
        )
    save_manifest(manifest, out_dir / "manifest.json")
    log.info("synthesized %d tiles (%d positive, %d unlabeled) in %s", cfg.n_tiles, n_pos, cfg.unlabeled_count, out_dir)
    return manifest


# ---------------------------------------------------------------------------
# Splits


def split_dataset(
    manifest: DatasetManifest, fractions: tuple[float, float, float], seed: int
) -> DatasetManifest:
    """Deterministically partition the labeled entries into train/val/test.

    Unlabeled entries pass through untouched. Counts follow the largest
    remainder rule so e.g. (0.8, 0.1, 0.1) on 100 entries gives exactly
    80/10/10.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be nonnegative and sum to 1, got {fractions}")

    labeled = [e for e in manifest.entries if e.split != UNLABELED]
    unlabeled = [e for e in manifest.entries if e.split == UNLABELED]
    n = len(labeled)
    raw = [f * n for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    remainder = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(remainder):
        counts[order[i % 3]] += 1

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    result = DatasetManifest()
    names = ("train", "val", "test")
    bounds = np.cumsum([0] + counts)
    assignment = {}
    for si, name in enumerate(names):
        for j in perm[bounds[si] : bounds[si + 1]]:
            assignment[labeled[j].id] = name
    for e in manifest.entries:
        if e.split == UNLABELED:
            continue
        result.entries.append(ManifestEntry(e.id, e.image_path, e.label, assignment[e.id], e.mask_path))
    result.entries.extend(unlabeled)
    return result

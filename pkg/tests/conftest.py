import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from solarmap import SynthConfig, load_manifest, synth_generate


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """16 labeled + 4 unlabeled 64px tiles with known truth."""
    root = tmp_path_factory.mktemp("synth_small")
    cfg = SynthConfig(
        n_tiles=20,
        tile_size=64,
        panel_count_range=(4, 9),
        panel_cell_size=5,
        rooftop_per_tile=(1, 2),
        positive_fraction=0.5,
        seed=123,
        unlabeled_count=4,
    )
    manifest = synth_generate(cfg, root)
    return cfg, manifest, root


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)

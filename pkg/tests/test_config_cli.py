import json
from pathlib import Path

import numpy as np
import pytest

from solarmap import load_config
from solarmap.cli import main
from solarmap.config import build_config
from solarmap.errors import ConfigError
from solarmap.pipeline import PipelineRunner

MICRO_TOML = """
seed = 5

[paths]
artifact_root = "{root}"

[data]
n_tiles = 24
tile_size = 64
panel_count_range = [4, 9]
panel_cell_size = 5
rooftop_per_tile = [1, 2]
background_noise = 0.03
positive_fraction = 0.5
unlabeled_count = 6

[split]
fractions = [0.62, 0.21, 0.17]

[classifier]
width_multiplier = 0.125
input_size = 64
learning_rate = 1e-3
batch_size = 8
epochs = 6

[mapper]
width_multiplier = 0.125
input_size = 64
lr0 = 1e-3
batch_size = 4
epochs_phase1 = 2
epochs_phase2 = 2

[correction]
cadence = 1
"""


def _write_micro(tmp_path: Path) -> Path:
    cfg_path = tmp_path / "micro.toml"
    cfg_path.write_text(MICRO_TOML.format(root=tmp_path / "artifacts"))
    return cfg_path


class TestConfig:
    def test_defaults_file_loads(self):
        cfg = load_config(Path(__file__).parent.parent / "configs" / "default.toml")
        assert cfg.classifier.learning_rate == 1e-4
        assert cfg.classifier.batch_size == 16
        assert cfg.mapper.lr0 == 1e-3
        assert cfg.mapper.lr_decay == 0.8
        assert cfg.mapper.decay_every == 20
        assert cfg.mapper.batch_size == 15
        assert cfg.mapper.epochs_phase1 == 800
        assert cfg.mapper.epochs_phase2 == 40
        assert (cfg.correction.beta1, cfg.correction.beta2) == (0.01, 0.1)
        assert (cfg.correction.gamma1, cfg.correction.gamma2) == (0.6, 1.4)
        assert (cfg.correction.delta1, cfg.correction.delta2) == (0.8, 1.2)
        assert cfg.eval.theta_sq == 0.3
        assert cfg.attribution.layer == "conv4_3"

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown top-level"):
            build_config({"sed": 1})

    def test_unknown_section_key(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            build_config({"mapper": {"lr_zero": 1e-3}})

    def test_type_error(self):
        with pytest.raises(ConfigError, match="expected an integer"):
            build_config({"classifier": {"batch_size": "many"}})

    def test_section_seeds_derive_from_global(self):
        cfg = build_config({"seed": 7})
        assert cfg.classifier.seed == 71
        assert cfg.mapper.seed == 72
        assert cfg.data.seed == 73
        assert cfg.split.seed == 74

    def test_explicit_section_seed_wins(self):
        cfg = build_config({"seed": 7, "mapper": {"seed": 99}})
        assert cfg.mapper.seed == 99

    def test_validation_bubbles_as_config_error(self):
        with pytest.raises(ConfigError):
            build_config({"mapper": {"input_size": 100}})
        with pytest.raises(ConfigError):
            build_config({"correction": {"beta1": 0.5, "beta2": 0.1}})
        with pytest.raises(ConfigError):
            build_config({"pseudolabels": {"tau": 1.5}})

    def test_artifact_root_env_override(self, tmp_path, monkeypatch):
        cfg = build_config({})
        monkeypatch.setenv("SOLARMAP_ARTIFACT_ROOT", str(tmp_path / "elsewhere"))
        assert cfg.artifact_root == tmp_path / "elsewhere"


@pytest.fixture(scope="module")
def micro_run(tmp_path_factory):
    """One full micro pipeline run, shared by the CLI smoke tests."""
    tmp_path = tmp_path_factory.mktemp("micro")
    cfg_path = _write_micro(tmp_path)
    rc = main(["pipeline", "--config", str(cfg_path), "--variant", "ps-cnnlc"])
    assert rc == 0
    return cfg_path, tmp_path / "artifacts"


class TestPipeline:
    def test_artifacts_exist(self, micro_run):
        _, root = micro_run
        assert (root / "manifest_split.json").is_file()
        assert (root / "checkpoints" / "classifier.ntar").is_file()
        assert (root / "checkpoints" / "mapper_ps-cnnlc.ntar").is_file()
        assert (root / "mined_ids.json").is_file()
        assert (root / "labelstore" / "index.json").is_file()
        assert (root / "eval" / "report_ps-cnnlc.json").is_file()
        assert (root / "eval" / "curves_ps-cnnlc.csv").is_file()
        assert (root / "report_ps-cnnlc.md").is_file()
        manifest = json.loads((root / "run_manifest.json").read_text())
        assert manifest["seed"] == 5
        assert len(manifest["artifacts"]) > 10

    def test_rerun_skips_everything(self, micro_run):
        cfg_path, root = micro_run
        before = json.loads((root / "run_manifest.json").read_text())
        cfg = load_config(cfg_path)
        runner = PipelineRunner(cfg, "ps-cnnlc")
        runner.run()
        assert runner.executed == []
        assert set(runner.skipped) >= {"synth", "split", "train-cls", "mine", "pseudo"}
        after = json.loads((root / "run_manifest.json").read_text())
        assert before["artifacts"] == after["artifacts"]

    def test_eval_report_schema(self, micro_run):
        _, root = micro_run
        report = json.loads((root / "eval" / "report_ps-cnnlc.json").read_text())
        for key in ("AC", "AUC", "P", "R", "F", "aggregation", "per_tile"):
            assert key in report
        assert 0.0 <= report["AC"] <= 1.0
        assert report["aggregation"] == "global"

    def test_gradcam_variant(self, micro_run, tmp_path):
        cfg_path, root = micro_run
        rc = main(["pipeline", "--config", str(cfg_path), "--variant", "gradcam5"])
        assert rc == 0
        report = json.loads((root / "eval" / "report_gradcam5.json").read_text())
        assert 0.0 <= report["AUC"] <= 1.0


class TestCliCommands:
    def test_attribute_writes_map(self, micro_run, tmp_path):
        _, root = micro_run
        tile = sorted((root / "data" / "images").glob("*.png"))[0]
        out = tmp_path / "map.png"
        rc = main([
            "attribute", "--model", str(root / "checkpoints" / "classifier.ntar"),
            "--layer", "conv4_3", "--class", "positive",
            "--in", str(tile), "--out", str(out),
        ])
        assert rc == 0
        from PIL import Image

        with Image.open(out) as im:
            assert im.mode == "L"
            assert im.size == (64, 64)

    def test_infer_emits_triplets(self, micro_run, tmp_path):
        _, root = micro_run
        images = root / "data" / "images"
        tile = sorted(images.glob("*.png"))[0]
        out = tmp_path / "infer"
        rc = main([
            "infer", "--model", str(root / "checkpoints" / "mapper_ps-cnnlc.ntar"),
            "--in", str(tile), "--out", str(out), "--masks", str(root / "data" / "masks"),
        ])
        assert rc == 0
        stem = tile.stem
        assert (out / f"{stem}_score.png").is_file()
        assert (out / f"{stem}_mask.png").is_file()
        assert (out / f"{stem}_overlay.png").is_file()

    def test_overlay_palette(self, micro_run, tmp_path):
        _, root = micro_run
        out = tmp_path / "infer2"
        rc = main([
            "infer", "--model", str(root / "checkpoints" / "mapper_ps-cnnlc.ntar"),
            "--in", str(root / "data" / "images"), "--out", str(out),
            "--masks", str(root / "data" / "masks"),
        ])
        assert rc == 0
        from PIL import Image

        palette = {(255, 255, 0), (0, 0, 0), (0, 255, 0), (255, 0, 0)}
        overlays = sorted(out.glob("*_overlay.png"))
        assert overlays
        arr = np.asarray(Image.open(overlays[0]))
        colors = {tuple(c) for c in arr.reshape(-1, 3)}
        assert colors <= palette

    def test_infer_without_mask_no_overlay(self, micro_run, tmp_path):
        _, root = micro_run
        tile = sorted((root / "data" / "images").glob("*.png"))[0]
        out = tmp_path / "infer3"
        rc = main([
            "infer", "--model", str(root / "checkpoints" / "mapper_ps-cnnlc.ntar"),
            "--in", str(tile), "--out", str(out),
        ])
        assert rc == 0
        assert (out / f"{tile.stem}_score.png").is_file()
        assert not (out / f"{tile.stem}_overlay.png").exists()

    def test_report_command(self, micro_run, capsys):
        cfg_path, _ = micro_run
        rc = main(["report", "--config", str(cfg_path), "--variant", "ps-cnnlc"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "| Metric | Value |" in out

    def test_config_error_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[mapper]\nlr_zero = 1.0\n")
        rc = main(["pipeline", "--config", str(bad)])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "config"

    def test_missing_artifact_exit_1(self, tmp_path, capsys):
        cfg_path = _write_micro(tmp_path)  # fresh root, nothing trained
        rc = main(["eval", "--config", str(cfg_path)])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "stage"

    def test_synth_command(self, tmp_path):
        cfg_path = _write_micro(tmp_path)
        rc = main(["synth", "--config", str(cfg_path), "--out", str(tmp_path / "ds")])
        assert rc == 0
        assert (tmp_path / "ds" / "manifest.json").is_file()
        assert len(list((tmp_path / "ds" / "images").glob("*.png"))) == 24

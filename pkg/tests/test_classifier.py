import numpy as np
import pytest
import torch

from oracles import central_diff_param, fd_close
from solarmap import (
    ClassifierConfig,
    ModelCheckpoint,
    build_classifier,
    classifier_forward,
    classifier_forward_with_features,
    classifier_from_checkpoint,
    train_classifier,
)
from solarmap.classifier import BLOCKS, _load_split
from solarmap.data import ManifestEntry, save_mask_png, save_tile_png
from solarmap.errors import EmptyDataset, ImportShapeMismatch, ShapeMismatch, UnknownLayer, UnlabeledSample

TINY = ClassifierConfig(width_multiplier=1 / 16, input_size=32, seed=5)


@pytest.fixture(scope="module")
def tiny_model():
    return build_classifier(TINY)


class TestArchitecture:
    def test_thirteen_conv_layers(self, tiny_model):
        assert len(tiny_model.layer_names) == 13
        assert sum(n for n, _ in BLOCKS) == 13

    def test_block_channel_doubling(self, tiny_model):
        for bi, (_, base) in enumerate(BLOCKS, start=1):
            for name in tiny_model.layer_names:
                if name.startswith(f"conv{bi}_"):
                    assert tiny_model.feature_channels(name) == max(1, round(base / 16))

    def test_conv4_3_shape_full_width(self):
        model = build_classifier(ClassifierConfig(width_multiplier=1.0, input_size=256, seed=0))
        px = np.zeros((256, 256, 3), dtype=np.float32)
        _, feat = classifier_forward_with_features(model, px, "conv4_3")
        assert feat.shape == (512, 32, 32)
        _, feat5 = classifier_forward_with_features(model, px, "conv5_3")
        assert feat5.shape == (512, 16, 16)

    def test_quarter_width_channels(self):
        model = build_classifier(ClassifierConfig(width_multiplier=0.25, input_size=128, seed=0))
        assert model.feature_channels("conv4_3") == 128

    def test_unknown_layer(self, tiny_model):
        with pytest.raises(UnknownLayer):
            classifier_forward_with_features(tiny_model, np.zeros((32, 32, 3), np.float32), "conv9_9")


class TestForward:
    def test_softmax_normalization_many_tiles(self, tiny_model, rng):
        for _ in range(100):
            px = rng.random((32, 32, 3)).astype(np.float32)
            p_pos, p_neg = classifier_forward(tiny_model, px)
            assert p_pos >= 0 and p_neg >= 0
            assert abs(p_pos + p_neg - 1.0) <= 1e-5

    def test_deterministic(self, tiny_model, rng):
        px = rng.random((32, 32, 3)).astype(np.float32)
        assert classifier_forward(tiny_model, px) == classifier_forward(tiny_model, px)

    def test_probs_match_with_features_variant(self, tiny_model, rng):
        px = rng.random((32, 32, 3)).astype(np.float32)
        probs = classifier_forward(tiny_model, px)
        (p_pos, p_neg), feat = classifier_forward_with_features(tiny_model, px, "conv3_3")
        assert probs == (p_pos, p_neg)
        assert feat.min() >= 0.0  # post-rectification

    def test_shape_mismatch(self, tiny_model):
        with pytest.raises(ShapeMismatch):
            classifier_forward(tiny_model, np.zeros((64, 64, 3), np.float32))


class TestImportExport:
    def test_round_trip_through_checkpoint(self, tiny_model, rng):
        ckpt = ModelCheckpoint(tensors=tiny_model.named_tensors(), metadata={"config": {
            "width_multiplier": TINY.width_multiplier, "input_size": TINY.input_size, "seed": TINY.seed,
        }})
        again = classifier_from_checkpoint(ckpt)
        px = rng.random((32, 32, 3)).astype(np.float32)
        assert classifier_forward(again, px) == classifier_forward(tiny_model, px)

    def test_import_missing_tensor(self, tiny_model):
        tensors = tiny_model.named_tensors()
        tensors.pop("conv3_2.weight")
        with pytest.raises(ImportShapeMismatch, match="conv3_2"):
            build_classifier(ClassifierConfig(width_multiplier=1 / 16, input_size=32)).load_named_tensors(tensors)

    def test_import_wrong_shape(self, tiny_model):
        tensors = tiny_model.named_tensors()
        tensors["fc3.weight"] = np.zeros((3, 3), dtype=np.float32)
        with pytest.raises(ImportShapeMismatch, match="fc3.weight"):
            build_classifier(ClassifierConfig(width_multiplier=1 / 16, input_size=32)).load_named_tensors(tensors)

    def test_seeded_build_reproducible(self):
        a = build_classifier(TINY).named_tensors()
        b = build_classifier(TINY).named_tensors()
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestGradientCheck:
    def test_positive_logit_grad_matches_central_differences(self, tiny_model, rng):
        """Analytic d logit_pos / d theta vs central differences (eps=1e-3,
        32-bit arithmetic): rel err <= 1e-2 plus a 1e-3 absolute term for
        gradients below the float32 FD noise floor."""
        px = rng.random((32, 32, 3)).astype(np.float32)
        x = torch.from_numpy(px).permute(2, 0, 1).unsqueeze(0)

        tiny_model.zero_grad(set_to_none=True)
        logit = tiny_model(x)[0, 0]
        logit.backward()

        params = dict(tiny_model.named_parameters())
        names = sorted(params)
        picks = []
        while len(picks) < 10:
            name = names[int(rng.integers(len(names)))]
            flat = int(rng.integers(params[name].numel()))
            if (name, flat) not in picks:
                picks.append((name, flat))

        for name, flat in picks:
            param = params[name]
            index = np.unravel_index(flat, param.shape)
            analytic = float(param.grad[index])
            numeric = central_diff_param(lambda: tiny_model(x)[0, 0], param.data, index, eps=1e-3)
            assert fd_close(analytic, numeric, rtol=1e-2, atol=1e-3), (name, flat, analytic, numeric)


def _write_tile(path, rng, dark_block: bool):
    px = rng.random((32, 32, 3)).astype(np.float32) * 0.2 + 0.6
    if dark_block:
        px[8:24, 8:24] = 0.1
    save_tile_png(path, px)


class TestTraining:
    def _entries(self, tmp_path, rng, n_pos=1, n_neg=1):
        entries = []
        for i in range(n_pos + n_neg):
            positive = i < n_pos
            path = tmp_path / f"t{i}.png"
            _write_tile(path, rng, dark_block=positive)
            entries.append(ManifestEntry(f"t{i}", path, "positive" if positive else "negative", "train"))
        return entries

    def test_empty_dataset(self, tiny_model):
        with pytest.raises(EmptyDataset):
            train_classifier(tiny_model, [], [], TINY)

    def test_unlabeled_sample(self, tmp_path, rng, tiny_model):
        entries = self._entries(tmp_path, rng)
        entries[0].label = "unlabeled"
        with pytest.raises(UnlabeledSample):
            _load_split(entries, 32)

    def test_perfect_prediction_loss_near_zero(self):
        from solarmap.classifier import clamped_ce

        logits = torch.tensor([[30.0, -30.0], [-30.0, 30.0]])
        target = torch.tensor([0, 1])
        assert float(clamped_ce(logits, target)) <= 1e-5

    def test_two_tile_overfit(self, tmp_path, rng):
        cfg = ClassifierConfig(width_multiplier=1 / 16, input_size=32, learning_rate=1e-3,
                               batch_size=2, epochs=200, seed=1)
        model = build_classifier(cfg)
        entries = self._entries(tmp_path, rng)
        _, history = train_classifier(model, entries, [], cfg)
        assert min(h["train_loss"] for h in history) < 0.01

    def test_seeded_training_reproducible(self, tmp_path, rng):
        entries = self._entries(tmp_path, rng, n_pos=2, n_neg=2)
        cfg = ClassifierConfig(width_multiplier=1 / 16, input_size=32, learning_rate=1e-4,
                               batch_size=2, epochs=3, seed=9)
        histories = []
        for _ in range(2):
            model = build_classifier(cfg)
            _, history = train_classifier(model, entries, entries[:2], cfg)
            histories.append([(h["train_loss"], h["val_acc"]) for h in history])
        assert histories[0] == histories[1]

    def test_best_val_checkpoint_metadata(self, tmp_path, rng):
        entries = self._entries(tmp_path, rng, n_pos=2, n_neg=2)
        cfg = ClassifierConfig(width_multiplier=1 / 16, input_size=32, epochs=2, batch_size=2, seed=3)
        model = build_classifier(cfg)
        ckpt, history = train_classifier(model, entries, entries, cfg)
        assert ckpt.metadata["kind"] == "classifier"
        assert len(ckpt.metadata["history"]) == 2
        assert ckpt.metadata["epoch"] in (0, 1)

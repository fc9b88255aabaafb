"""Image-level binary classifier: VGG16-like topology (13 conv layers in five
blocks, three fc layers, softmax head) with feature/gradient exposure for
attribution.

Class index 0 is "positive" (contains panels), index 1 is "negative".
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import ModelCheckpoint, load_checkpoint
from .data import NEGATIVE, POSITIVE, ManifestEntry, load_tile
from .errors import (
    BadConfig,
    EmptyDataset,
    ImportShapeMismatch,
    ShapeMismatch,
    UnknownLayer,
    UnlabeledSample,
)

log = logging.getLogger(__name__)

CLASS_INDEX = {POSITIVE: 0, NEGATIVE: 1}

# (conv layers, base channels) per block; pooled 2x2/stride2 after each block
BLOCKS = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))
PROB_EPS = 1e-7


@dataclass
class ClassifierConfig:
    width_multiplier: float = 1.0
    input_size: int = 256
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    init: str = "random"  # "random" or "import"
    init_path: Path | None = None

    def validate(self) -> None:
        if self.width_multiplier * 64 < 1 or self.width_multiplier > 1:
            raise BadConfig(f"width_multiplier must be in [1/64, 1], got {self.width_multiplier}")
        if self.input_size % 32 != 0:
            raise BadConfig(f"input_size must be divisible by 32, got {self.input_size}")

    def channels(self, base: int) -> int:
        return max(1, int(round(base * self.width_multiplier)))


class PanelClassifier(nn.Module):
    """VGG16-like stack; conv layers addressable as conv{block}_{idx}."""

    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.convs = nn.ModuleDict()
        # ops is a flat program: ("conv", name) applies conv+relu, ("pool",) pools
        self.ops: list[tuple] = []
        in_ch = 3
        for bi, (n_layers, base) in enumerate(BLOCKS, start=1):
            out_ch = cfg.channels(base)
            for li in range(1, n_layers + 1):
                name = f"conv{bi}_{li}"
                self.convs[name] = nn.Conv2d(in_ch, out_ch, 3, stride=1, padding=1)
                self.ops.append(("conv", name))
                in_ch = out_ch
            self.ops.append(("pool",))
        self.pool = nn.MaxPool2d(2, stride=2)

        spatial = cfg.input_size // 32
        self.flat_dim = in_ch * spatial * spatial
        self.fc1 = nn.Linear(self.flat_dim, 256)
        self.fc2 = nn.Linear(256, 256)
        self.fc3 = nn.Linear(256, 2)
        self.relu = nn.ReLU()

    @property
    def layer_names(self) -> list[str]:
        return list(self.convs.keys())

    def feature_channels(self, layer: str) -> int:
        if layer not in self.convs:
            raise UnknownLayer(f"no conv layer named '{layer}'")
        return self.convs[layer].out_channels

    def _head(self, x: torch.Tensor) -> torch.Tensor:
        x = torch.flatten(x, 1)
        x = self.relu(self.fc1(x))
        x = self.relu(self.fc2(x))
        return self.fc3(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-softmax logits, shape (B, 2)."""
        for op in self.ops:
            x = self.pool(x) if op[0] == "pool" else self.relu(self.convs[op[1]](x))
        return self._head(x)

    def forward_with_features(self, x: torch.Tensor, layer: str):
        """Logits plus the post-rectification activation of `layer`."""
        if layer not in self.convs:
            raise UnknownLayer(f"no conv layer named '{layer}'")
        feat = None
        for op in self.ops:
            x = self.pool(x) if op[0] == "pool" else self.relu(self.convs[op[1]](x))
            if op[0] == "conv" and op[1] == layer:
                feat = x
        return self._head(x), feat

    def forward_from(self, layer: str, feat: torch.Tensor) -> torch.Tensor:
        """Resume the forward pass from the post-ReLU activation of `layer`.

        Used by finite-difference oracles that perturb a feature map.
        """
        if layer not in self.convs:
            raise UnknownLayer(f"no conv layer named '{layer}'")
        idx = self.ops.index(("conv", layer))
        x = feat
        for op in self.ops[idx + 1 :]:
            x = self.pool(x) if op[0] == "pool" else self.relu(self.convs[op[1]](x))
        return self._head(x)

    # -- checkpoint interop ------------------------------------------------

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name, conv in self.convs.items():
            out[f"{name}.weight"] = conv.weight.detach().numpy().copy()
            out[f"{name}.bias"] = conv.bias.detach().numpy().copy()
        for name in ("fc1", "fc2", "fc3"):
            fc = getattr(self, name)
            out[f"{name}.weight"] = fc.weight.detach().numpy().copy()
            out[f"{name}.bias"] = fc.bias.detach().numpy().copy()
        return out

    def load_named_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        own = self.named_tensors()
        missing = sorted(set(own) - set(tensors))
        if missing:
            raise ImportShapeMismatch(f"archive missing tensors: {missing}")
        with torch.no_grad():
            for name, conv in self.convs.items():
                _copy_param(conv.weight, tensors[f"{name}.weight"], f"{name}.weight")
                _copy_param(conv.bias, tensors[f"{name}.bias"], f"{name}.bias")
            for name in ("fc1", "fc2", "fc3"):
                fc = getattr(self, name)
                _copy_param(fc.weight, tensors[f"{name}.weight"], f"{name}.weight")
                _copy_param(fc.bias, tensors[f"{name}.bias"], f"{name}.bias")


def _copy_param(param: torch.nn.Parameter, value: np.ndarray, name: str) -> None:
    if tuple(param.shape) != tuple(value.shape):
        raise ImportShapeMismatch(f"tensor '{name}': expected {tuple(param.shape)}, archive has {tuple(value.shape)}")
    param.copy_(torch.from_numpy(np.ascontiguousarray(value, dtype=np.float32)))


def build_classifier(cfg: ClassifierConfig) -> PanelClassifier:
    """Allocate the network with seeded variance-scaled init (convs) and
    normal(0, 0.01) fc layers, or import weights from a named-tensor archive.
    """
    torch.manual_seed(cfg.seed)
    model = PanelClassifier(cfg)
    with torch.no_grad():
        for conv in model.convs.values():
            nn.init.kaiming_normal_(conv.weight, nonlinearity="relu")
            nn.init.zeros_(conv.bias)
        for fc in (model.fc1, model.fc2, model.fc3):
            nn.init.normal_(fc.weight, mean=0.0, std=0.01)
            nn.init.zeros_(fc.bias)
    if cfg.init == "import":
        if cfg.init_path is None:
            raise BadConfig("init='import' requires init_path")
        model.load_named_tensors(load_checkpoint(cfg.init_path).tensors)
    elif cfg.init != "random":
        raise BadConfig(f"init must be 'random' or 'import', got '{cfg.init}'")
    model.eval()
    return model


def classifier_from_checkpoint(ckpt: ModelCheckpoint) -> PanelClassifier:
    cfg_dict = dict(ckpt.metadata.get("config", {}))
    cfg_dict.pop("init", None)
    cfg_dict.pop("init_path", None)
    cfg = ClassifierConfig(**cfg_dict)
    model = PanelClassifier(cfg)
    model.load_named_tensors(ckpt.tensors)
    model.eval()
    return model


def to_input(pixels: np.ndarray, input_size: int | None = None) -> torch.Tensor:
    """(H, W, 3) [0,1] float array -> (1, 3, H, W) float32 tensor."""
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeMismatch(f"expected (H, W, 3) pixels, got {pixels.shape}")
    if input_size is not None and pixels.shape[:2] != (input_size, input_size):
        raise ShapeMismatch(f"expected {input_size}x{input_size} tile, got {pixels.shape[:2]}")
    return torch.from_numpy(np.ascontiguousarray(pixels, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)


def classifier_forward(model: PanelClassifier, pixels: np.ndarray) -> tuple[float, float]:
    """(p_pos, p_neg); components are nonnegative and sum to 1."""
    model.eval()
    with torch.no_grad():
        probs = torch.softmax(model(to_input(pixels, model.cfg.input_size)), dim=1)[0]
    return float(probs[0]), float(probs[1])


def classifier_forward_with_features(model: PanelClassifier, pixels: np.ndarray, layer: str):
    """Probabilities plus the named layer's post-ReLU feature map (C, h, w)."""
    model.eval()
    with torch.no_grad():
        logits, feat = model.forward_with_features(to_input(pixels, model.cfg.input_size), layer)
        probs = torch.softmax(logits, dim=1)[0]
    return (float(probs[0]), float(probs[1])), feat[0].numpy().copy()


def clamped_ce(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Cross entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    probs = torch.softmax(logits, dim=1).clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -torch.log(probs.gather(1, target.unsqueeze(1))).mean()


def _load_split(entries: list[ManifestEntry], input_size: int):
    if not entries:
        raise EmptyDataset("no entries to train on")
    xs, ys = [], []
    for e in entries:
        if e.label not in CLASS_INDEX:
            raise UnlabeledSample(f"entry '{e.id}' has no positive/negative label")
        tile = load_tile(e)
        if tile.pixels.shape[:2] != (input_size, input_size):
            raise ShapeMismatch(f"entry '{e.id}': tile {tile.pixels.shape[:2]} != input_size {input_size}")
        xs.append(np.transpose(tile.pixels, (2, 0, 1)))
        ys.append(CLASS_INDEX[e.label])
    return torch.from_numpy(np.stack(xs)), torch.tensor(ys, dtype=torch.int64)


def train_classifier(
    model: PanelClassifier,
    train_entries: list[ManifestEntry],
    val_entries: list[ManifestEntry],
    cfg: ClassifierConfig,
) -> tuple[ModelCheckpoint, list[dict]]:
    """RMSprop training with per-epoch loss/val-accuracy history; the best
    validation checkpoint is the one returned.
    """
    x_train, y_train = _load_split(train_entries, cfg.input_size)
    x_val, y_val = _load_split(val_entries, cfg.input_size) if val_entries else (None, None)

    optimizer = torch.optim.RMSprop(model.parameters(), lr=cfg.learning_rate)
    history: list[dict] = []
    best = {"val_acc": -1.0, "epoch": -1, "state": copy.deepcopy(model.state_dict())}
    n = x_train.shape[0]
    for epoch in range(cfg.epochs):
        model.train()
        rng = np.random.default_rng((cfg.seed, 1009, epoch))
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            optimizer.zero_grad()
            loss = clamped_ce(model(x_train[idx]), y_train[idx])
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
        train_loss = total / n

        val_acc = float("nan")
        if x_val is not None:
            model.eval()
            with torch.no_grad():
                preds = model(x_val).argmax(dim=1)
            val_acc = float((preds == y_val).float().mean())
            if val_acc > best["val_acc"]:
                best = {"val_acc": val_acc, "epoch": epoch, "state": copy.deepcopy(model.state_dict())}
        history.append({"epoch": epoch, "train_loss": train_loss, "val_acc": val_acc, "lr": cfg.learning_rate})
        log.info("classifier epoch %d: loss=%.4f val_acc=%.4f", epoch, train_loss, val_acc)

    if x_val is not None:
        model.load_state_dict(best["state"])
    model.eval()
    ckpt = ModelCheckpoint(
        tensors=model.named_tensors(),
        metadata={
            "kind": "classifier",
            "config": _config_meta(cfg),
            "epoch": best["epoch"] if x_val is not None else cfg.epochs - 1,
            "history": history,
        },
    )
    return ckpt, history


def _config_meta(cfg: ClassifierConfig) -> dict:
    meta = {
        "width_multiplier": cfg.width_multiplier,
        "input_size": cfg.input_size,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
    }
    return meta

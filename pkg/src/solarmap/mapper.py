"""Fully supervised target mapping network: four-block encoder-decoder with
skip connections, per-pixel two-channel softmax head, foreground-weighted
cross entropy, stepped learning-rate schedule, and the two-phase training
loop with optional label correction.

Channel 0 of the output is the foreground score, channel 1 the background.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import ModelCheckpoint
from .classifier import PROB_EPS, to_input
from .correction import CorrectionParams, CorrectionReport, correction_step
from .errors import BadConfig, MissingLabel, ShapeMismatch
from .pseudolabels import LabelStore

log = logging.getLogger(__name__)

ENCODER_BASE = (64, 128, 256, 512)
BOTTLENECK_BASE = 1024


@dataclass
class MapperConfig:
    width_multiplier: float = 1.0
    input_size: int = 256
    lr0: float = 1e-3
    lr_decay: float = 0.8
    decay_every: int = 20
    batch_size: int = 15
    epochs_phase1: int = 800
    epochs_phase2: int = 40
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.lr_decay <= 1.0:
            raise BadConfig(f"lr_decay must be in (0,1], got {self.lr_decay}")
        if self.input_size % 16 != 0:
            raise BadConfig(f"input_size must be divisible by 16, got {self.input_size}")
        if self.width_multiplier <= 0:
            raise BadConfig("width_multiplier must be positive")

    def channels(self, base: int) -> int:
        return max(1, int(round(base * self.width_multiplier)))


@dataclass
class ScoreMapPair:
    """Per-pixel foreground/background probabilities; f0 + f1 == 1."""

    f0: np.ndarray
    f1: np.ndarray


class _TwoConvs(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=1, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, stride=1, padding=1)
        self.relu = nn.ReLU()

    def forward(self, x):
        return self.relu(self.conv2(self.relu(self.conv1(x))))


class MapperModel(nn.Module):
    """Encoder blocks E1..E4 (two 3x3 convs then 2x2 max-pool), bottleneck to
    1024*m channels, decoder blocks with channel-halving 3x3 transpose convs
    and skip concatenation, 1x1 conv to 2 channels."""

    def __init__(self, cfg: MapperConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        ch = [cfg.channels(c) for c in ENCODER_BASE]
        cb = cfg.channels(BOTTLENECK_BASE)

        self.encoders = nn.ModuleList()
        c_in = 3
        for c in ch:
            self.encoders.append(_TwoConvs(c_in, c))
            c_in = c
        self.pool = nn.MaxPool2d(2, stride=2)
        self.bottleneck = _TwoConvs(ch[-1], cb)

        self.upconvs = nn.ModuleList()
        self.decoders = nn.ModuleList()
        c_prev = cb
        for c_skip in reversed(ch):  # 512m, 256m, 128m, 64m
            self.upconvs.append(nn.ConvTranspose2d(c_prev, c_prev // 2, 3, stride=2, padding=1, output_padding=1))
            self.decoders.append(_TwoConvs(c_prev // 2 + c_skip, c_skip))
            c_prev = c_skip
        self.head = nn.Conv2d(ch[0], 2, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Per-pixel logits, shape (B, 2, H, W)."""
        skips = []
        for enc in self.encoders:
            g = enc(x)
            skips.append(g)
            x = self.pool(g)
        x = self.bottleneck(x)
        for up, dec, g in zip(self.upconvs, self.decoders, reversed(skips)):
            x = dec(torch.cat([up(x), g], dim=1))
        return self.head(x)

    def intermediate_shapes(self, input_size: int | None = None) -> dict[str, tuple]:
        """Spatial/channel sizes of G1..G4, E4, B, D1..D4 for a given input."""
        n = input_size or self.cfg.input_size
        with torch.no_grad():
            x = torch.zeros(1, 3, n, n)
            shapes: dict[str, tuple] = {}
            skips = []
            for i, enc in enumerate(self.encoders, start=1):
                g = enc(x)
                shapes[f"G{i}"] = tuple(g.shape[1:])
                skips.append(g)
                x = self.pool(g)
            shapes["E4"] = tuple(x.shape[1:])
            x = self.bottleneck(x)
            shapes["B"] = tuple(x.shape[1:])
            for j, (up, dec, g) in enumerate(zip(self.upconvs, self.decoders, reversed(skips)), start=1):
                x = dec(torch.cat([up(x), g], dim=1))
                shapes[f"D{j}"] = tuple(x.shape[1:])
            shapes["head"] = tuple(self.head(x).shape[1:])
        return shapes

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self.state_dict().items()}

    def load_named_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in tensors.items()}
        self.load_state_dict(state)


def build_mapper(cfg: MapperConfig) -> MapperModel:
    torch.manual_seed(cfg.seed)
    model = MapperModel(cfg)
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.kaiming_normal_(mod.weight, nonlinearity="relu")
                nn.init.zeros_(mod.bias)
    model.eval()
    return model


def mapper_from_checkpoint(ckpt: ModelCheckpoint) -> MapperModel:
    cfg = MapperConfig(**ckpt.metadata.get("config", {}))
    model = MapperModel(cfg)
    model.load_named_tensors(ckpt.tensors)
    model.eval()
    return model


def mapper_forward(model: MapperModel, pixels: np.ndarray) -> ScoreMapPair:
    model.eval()
    with torch.no_grad():
        probs = torch.softmax(model(to_input(pixels, model.cfg.input_size)), dim=1)[0]
    return ScoreMapPair(f0=probs[0].numpy().copy(), f1=probs[1].numpy().copy())


def foreground_weight(gt: np.ndarray) -> float:
    """alpha = (N - N_fore) / N for one label mask."""
    n = gt.size
    return (n - int(np.count_nonzero(gt))) / n


def weighted_ce_loss(probs: torch.Tensor, gt: torch.Tensor, alpha: float | torch.Tensor | None = None) -> torch.Tensor:
    """Foreground-weighted cross entropy for (2, H, W) probabilities, summed
    over pixels. Batched (B, 2, H, W) inputs return the mean of per-sample
    sums. alpha defaults to the per-sample background fraction."""
    if probs.dim() == 3:
        probs = probs.unsqueeze(0)
        gt = gt.unsqueeze(0)
    if probs.shape[0] != gt.shape[0] or probs.shape[2:] != gt.shape[1:]:
        raise ShapeMismatch(f"probs {tuple(probs.shape)} vs gt {tuple(gt.shape)}")
    gt = gt.to(probs.dtype)
    if alpha is None:
        n = gt[0].numel()
        alpha = (n - gt.sum(dim=(1, 2))) / n
    elif not torch.is_tensor(alpha):
        alpha = torch.full((probs.shape[0],), float(alpha), dtype=probs.dtype)
    a = alpha.view(-1, 1, 1)
    f0 = probs[:, 0].clamp(PROB_EPS, 1.0 - PROB_EPS)
    f1 = probs[:, 1].clamp(PROB_EPS, 1.0 - PROB_EPS)
    per_sample = -(a * gt * torch.log(f0) + (1.0 - a) * (1.0 - gt) * torch.log(f1)).sum(dim=(1, 2))
    return per_sample.mean()


def lr_schedule(epoch: int, cfg: MapperConfig) -> float:
    """lr0 * decay^(epoch // decay_every); piecewise constant, non-increasing."""
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.decay_every)


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def train_epochs(
    model: MapperModel,
    optimizer: torch.optim.Optimizer,
    tiles: dict[str, np.ndarray],
    store: LabelStore,
    cfg: MapperConfig,
    n_epochs: int,
    start_epoch: int = 0,
    corrector: CorrectionParams | None = None,
) -> list[dict]:
    """Train for `n_epochs` epochs starting at global epoch `start_epoch`
    (the schedule key). With a corrector, labels are re-examined every
    `corrector.cadence` epochs from the model's own outputs.
    """
    ids = sorted(tiles)
    for tile_id in ids:
        if tile_id not in store:
            raise MissingLabel(f"training tile '{tile_id}' has no label record")
    x_all = torch.from_numpy(
        np.stack([np.transpose(tiles[i], (2, 0, 1)) for i in ids]).astype(np.float32)
    )

    history: list[dict] = []
    for local in range(n_epochs):
        epoch = start_epoch + local
        lr = lr_schedule(epoch, cfg)
        _set_lr(optimizer, lr)

        labels = {i: torch.from_numpy(store[i].gt_current.astype(np.float32)) for i in ids}
        active = [k for k, i in enumerate(ids) if store[i].gt_current.any()]
        skipped = len(ids) - len(active)
        if skipped:
            log.warning("epoch %d: skipping %d all-background labels (alpha=1 gives zero loss)", epoch, skipped)

        model.train()
        rng = np.random.default_rng((cfg.seed, 7919, epoch))
        perm = rng.permutation(len(active))
        total, seen = 0.0, 0
        for start in range(0, len(active), cfg.batch_size):
            sel = [active[j] for j in perm[start : start + cfg.batch_size]]
            if not sel:
                continue
            batch_x = x_all[sel]
            batch_y = torch.stack([labels[ids[k]] for k in sel])
            optimizer.zero_grad()
            probs = torch.softmax(model(batch_x), dim=1)
            loss = weighted_ce_loss(probs, batch_y)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(sel)
            seen += len(sel)
        epoch_loss = total / max(seen, 1)

        record = {"epoch": epoch, "loss": epoch_loss, "lr": lr, "correction": None}
        if corrector is not None and (local + 1) % corrector.cadence == 0:
            outputs = {}
            model.eval()
            with torch.no_grad():
                for start in range(0, len(ids), cfg.batch_size):
                    chunk = ids[start : start + cfg.batch_size]
                    probs = torch.softmax(model(x_all[start : start + cfg.batch_size]), dim=1)
                    for k, tile_id in enumerate(chunk):
                        outputs[tile_id] = probs[k, 0].numpy().copy()
            report: CorrectionReport = correction_step(outputs, store, corrector)
            record["correction"] = report.to_dict()
        history.append(record)
        log.info("mapper epoch %d: loss=%.3f lr=%.2e", epoch, epoch_loss, lr)
    return history


def train_mapper(
    model: MapperModel,
    tiles: dict[str, np.ndarray],
    store: LabelStore,
    cfg: MapperConfig,
    corrector: CorrectionParams | None = None,
) -> tuple[ModelCheckpoint, list[dict]]:
    """Phase 1 (`epochs_phase1`, labels fixed at gt_current) then phase 2
    (`epochs_phase2`) with the correction strategy when a corrector is given.
    Without one, phase-2 epochs continue plain training so ablation arms see
    the same total budget.
    """
    cfg.validate()
    optimizer = torch.optim.RMSprop(model.parameters(), lr=cfg.lr0)
    history = train_epochs(model, optimizer, tiles, store, cfg, cfg.epochs_phase1, start_epoch=0)
    if cfg.epochs_phase2 > 0:
        history += train_epochs(
            model, optimizer, tiles, store, cfg, cfg.epochs_phase2,
            start_epoch=cfg.epochs_phase1, corrector=corrector,
        )
    ckpt = ModelCheckpoint(
        tensors=model.named_tensors(),
        metadata={
            "kind": "mapper",
            "config": copy.deepcopy(vars(cfg)),
            "epoch": cfg.epochs_phase1 + cfg.epochs_phase2 - 1,
            "history": history,
            "corrected": corrector is not None,
        },
    )
    return ckpt, history

"""Gradient-weighted activation maps from any registered conv layer, plus
bilinear upsampling to input resolution.

The class score differentiated is the pre-softmax logit (standard practice;
avoids vanishing gradients at saturated softmax). Channel weights are the
spatial means of the logit's gradient with respect to the feature map; the
map is the rectified weighted channel sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .classifier import CLASS_INDEX, PanelClassifier, to_input
from .data import POSITIVE
from .errors import BadTarget, NonFiniteGradient, UnknownLayer

DEFAULT_LAYER = "conv4_3"


@dataclass
class ActivationMap:
    values: np.ndarray  # (h, w) nonnegative float32
    source_layer: str
    class_id: str


@dataclass
class GradWeights:
    w_hat: np.ndarray  # (C,) spatially averaged gradients
    source_layer: str
    class_id: str


def grad_weights(model: PanelClassifier, pixels: np.ndarray, layer: str, class_id: str = POSITIVE):
    """Per-channel weights (spatial mean of d logit_c / d feature) and the
    feature map they pair with."""
    if layer not in model.convs:
        raise UnknownLayer(f"no conv layer named '{layer}'")
    model.eval()
    model.zero_grad(set_to_none=True)
    x = to_input(pixels, model.cfg.input_size).to(next(model.parameters()).dtype)
    logits, feat = model.forward_with_features(x, layer)
    feat.retain_grad()
    score = logits[0, CLASS_INDEX[class_id]]
    score.backward()
    grad = feat.grad[0]  # (C, h, w)
    if not torch.isfinite(grad).all():
        raise NonFiniteGradient(f"gradient at layer '{layer}' is not finite")
    w_hat = grad.mean(dim=(1, 2)).numpy().copy()
    return GradWeights(w_hat=w_hat, source_layer=layer, class_id=class_id), feat[0].detach().numpy().copy()


def gradcam(model: PanelClassifier, pixels: np.ndarray, layer: str = DEFAULT_LAYER, class_id: str = POSITIVE) -> ActivationMap:
    """Rectified weighted channel sum of the named layer's feature map."""
    weights, feat = grad_weights(model, pixels, layer, class_id)
    combined = np.einsum("c,chw->hw", weights.w_hat, feat)
    values = np.maximum(combined, 0.0).astype(np.float32)
    return ActivationMap(values=values, source_layer=layer, class_id=class_id)


def upsample_map(amap: ActivationMap | np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear upsample to `target` (H, W), then min-max normalize to [0,1].

    Interpolation samples the source on the align-corners grid
    linspace(0, h-1, H), so outputs never leave [min, max] of the source.
    Constant maps normalize to all zeros.
    """
    values = amap.values if isinstance(amap, ActivationMap) else amap
    h, w = values.shape
    H, W = target
    if H < h or W < w:
        raise BadTarget(f"target {target} smaller than source {values.shape}")

    rows = np.linspace(0.0, h - 1.0, H) if h > 1 else np.zeros(H)
    cols = np.linspace(0.0, w - 1.0, W) if w > 1 else np.zeros(W)
    src = values.astype(np.float64)
    # separable linear interpolation: rows first, then columns
    tmp = np.empty((H, w))
    for j in range(w):
        tmp[:, j] = np.interp(rows, np.arange(h), src[:, j])
    out = np.empty((H, W))
    for i in range(H):
        out[i, :] = np.interp(cols, np.arange(w), tmp[i, :])

    lo, hi = out.min(), out.max()
    if hi - lo <= 0:
        return np.zeros((H, W), dtype=np.float32)
    return ((out - lo) / (hi - lo)).astype(np.float32)

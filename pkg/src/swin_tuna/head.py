"""Lightweight multi-scale segmentation head and pixel-wise cross-entropy.

The head projects each stage to a common width, upsamples everything to the
stage-0 grid, fuses, classifies and upsamples the logits to image size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig, StageFeatures
from .errors import ConfigError, ContractError, DataError
from .params import ParamInfo
from .tensor import Tensor


@dataclass
class HeadConfig:
    channels: int = 64
    num_classes: int = 3

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError(f"head.channels must be positive, got {self.channels}")
        if self.num_classes < 2:
            raise ConfigError(f"head.num_classes must be >= 2, got {self.num_classes}")


def head_layout(backbone: BackboneConfig, cfg: HeadConfig) -> list[ParamInfo]:
    F, K = cfg.channels, cfg.num_classes
    out = []
    for i, c in enumerate(backbone.embed_dims):
        out.append(ParamInfo(f"head.lateral.{i}.w", (c, F), "head", True, "trunc_normal"))
        out.append(ParamInfo(f"head.lateral.{i}.b", (F,), "head", True, "zeros"))
    out.append(ParamInfo("head.fuse.w", (4 * F, F), "head", True, "trunc_normal"))
    out.append(ParamInfo("head.fuse.b", (F,), "head", True, "zeros"))
    out.append(ParamInfo("head.cls.w", (F, K), "head", True, "trunc_normal"))
    out.append(ParamInfo("head.cls.b", (K,), "head", True, "zeros"))
    return out


def _to_grid(tokens: Tensor, spatial) -> Tensor:
    B, L, C = tokens.shape
    H, W = spatial
    return tokens.reshape(B, H, W, C).transpose(0, 3, 1, 2)


def head_forward(features: StageFeatures, params: dict, out_size: tuple[int, int]) -> Tensor:
    """Logits [B, K, H, W] at ``out_size`` (no softmax)."""
    if features is None or len(features) == 0:
        raise ContractError("head_forward needs stage features, got none")
    base = features.spatial[0]
    B = features[0].shape[0]
    lat = []
    for i, (x, hw) in enumerate(zip(features.features, features.spatial)):
        y = T.linear(x, params[f"lateral.{i}.w"], params[f"lateral.{i}.b"])
        lat.append(T.resize_bilinear(_to_grid(y, hw), base))
    fused = T.concat(lat, axis=1)  # [B, 4F, h0, w0]
    F4 = fused.shape[1]
    tok = fused.transpose(0, 2, 3, 1).reshape(B, base[0] * base[1], F4)
    tok = T.linear(tok, params["fuse.w"], params["fuse.b"])
    logits = T.linear(tok, params["cls.w"], params["cls.b"])
    logits = _to_grid(logits, base)
    # the stage-0 grid covers the zero-padded input; map to it, crop, then resize
    padded = features.padded_size
    logits = T.resize_bilinear(logits, padded)
    H, W = features.input_size
    if padded != (H, W):
        logits = logits[:, :, :H, :W]
    return T.resize_bilinear(logits, tuple(out_size))


def cross_entropy_loss(logits: Tensor, target: np.ndarray, ignore_index: int = 255) -> Tensor:
    """Mean of -log softmax(logits)[target] over non-ignored pixels."""
    target = np.asarray(target)
    B, K, H, W = logits.shape
    if target.shape != (B, H, W):
        raise DataError(f"target shape {target.shape} does not match logits {logits.shape}")
    valid = target != ignore_index
    bad = valid & ((target < 0) | (target >= K))
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"class id {int(target[pos])} at pixel {pos} outside [0, {K})")
    n = int(valid.sum())
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    safe = np.where(valid, target, 0).astype(np.int64)
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    loss = -(picked * valid).sum() / n if n else 0.0

    def back(g):
        if not n:
            return (np.zeros_like(logits.data),)
        grad = np.exp(logp)
        onehot = np.zeros_like(grad)
        np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
        grad = (grad - onehot) * valid[:, None] / n
        return (grad * g,)

    return Tensor.from_op(np.asarray(loss, dtype=np.float64), (logits,), back, "cross_entropy")

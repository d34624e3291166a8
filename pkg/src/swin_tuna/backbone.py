"""Hierarchical windowed-attention backbone (Swin-style).

Tokens are kept as [B, L, C] with L = H*W in row-major (H, W) order. Every
block records its input, post-attention and output activations in a
:class:`BlockState`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .params import ParamInfo, ParamStore
from .tensor import Tensor

if TYPE_CHECKING:
    from .tuna import TunaConfig


@dataclass
class BackboneConfig:
    patch_size: int = 4
    embed_dims: list[int] = field(default_factory=lambda: [96, 192, 384, 768])
    depths: list[int] = field(default_factory=lambda: [2, 2, 6, 2])
    num_heads: list[int] = field(default_factory=lambda: [3, 6, 12, 24])
    window_size: int = 7
    mlp_ratio: float = 4.0
    dropout_p: float = 0.1
    in_chans: int = 3
    ln_eps: float = 1e-5

    def __post_init__(self):
        self.embed_dims = [int(d) for d in self.embed_dims]
        self.depths = [int(d) for d in self.depths]
        self.num_heads = [int(h) for h in self.num_heads]
        for name in ("embed_dims", "depths", "num_heads"):
            if len(getattr(self, name)) != 4:
                raise ConfigError(f"backbone.{name} needs 4 entries, got {getattr(self, name)}")
        for i in range(3):
            if self.embed_dims[i + 1] != 2 * self.embed_dims[i]:
                raise ConfigError(f"backbone.embed_dims must double per stage, got {self.embed_dims}")
        if min(self.depths) < 1:
            raise ConfigError(f"backbone.depths must all be >= 1, got {self.depths}")
        if self.window_size < 2:
            raise ConfigError(f"backbone.window_size must be >= 2, got {self.window_size}")
        if self.patch_size < 1:
            raise ConfigError(f"backbone.patch_size must be >= 1, got {self.patch_size}")
        for c, h in zip(self.embed_dims, self.num_heads):
            if h < 1 or c % h:
                raise ConfigError(f"{h} heads do not divide {c} channels")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"backbone.dropout_p must lie in [0, 1), got {self.dropout_p}")

    def hidden_dim(self, stage: int) -> int:
        return int(self.embed_dims[stage] * self.mlp_ratio)


def swin_large() -> BackboneConfig:
    """Swin-L widths and depths, used for parameter accounting."""
    return BackboneConfig(
        embed_dims=[192, 384, 768, 1536], depths=[2, 2, 18, 2], num_heads=[6, 12, 24, 48]
    )


def toy_config(**overrides) -> BackboneConfig:
    kw = dict(embed_dims=[8, 16, 32, 64], depths=[1, 1, 2, 1], num_heads=[1, 2, 4, 8], window_size=4)
    kw.update(overrides)
    return BackboneConfig(**kw)


@dataclass
class BlockState:
    z_prev: Tensor
    z_hat: Tensor
    z_out: Tensor
    spatial: tuple[int, int]


@dataclass
class StageFeatures:
    features: list[Tensor]
    spatial: list[tuple[int, int]]
    input_size: tuple[int, int]
    padded_size: tuple[int, int]

    def __len__(self):
        return len(self.features)

    def __getitem__(self, i):
        return self.features[i]


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------

def block_prefix(stage: int, block: int) -> str:
    return f"backbone.stages.{stage}.blocks.{block}"


def backbone_layout(cfg: BackboneConfig) -> list[ParamInfo]:
    """Names, shapes and init schemes of every backbone parameter (all frozen)."""
    out: list[ParamInfo] = []

    def add(name, shape, init):
        out.append(ParamInfo(name, tuple(shape), "backbone", False, init))

    c0, p = cfg.embed_dims[0], cfg.patch_size
    add("backbone.patch_embed.w", (cfg.in_chans * p * p, c0), "trunc_normal")
    add("backbone.patch_embed.b", (c0,), "zeros")
    add("backbone.patch_embed.norm.gamma", (c0,), "ones")
    add("backbone.patch_embed.norm.beta", (c0,), "zeros")
    w = cfg.window_size
    for i in range(4):
        c, h, hid = cfg.embed_dims[i], cfg.num_heads[i], cfg.hidden_dim(i)
        for j in range(cfg.depths[i]):
            b = block_prefix(i, j)
            add(f"{b}.norm1.gamma", (c,), "ones")
            add(f"{b}.norm1.beta", (c,), "zeros")
            add(f"{b}.attn.qkv.w", (c, 3 * c), "trunc_normal")
            add(f"{b}.attn.qkv.b", (3 * c,), "zeros")
            add(f"{b}.attn.rel_bias", ((2 * w - 1) ** 2, h), "trunc_normal")
            add(f"{b}.attn.proj.w", (c, c), "trunc_normal")
            add(f"{b}.attn.proj.b", (c,), "zeros")
            add(f"{b}.norm2.gamma", (c,), "ones")
            add(f"{b}.norm2.beta", (c,), "zeros")
            add(f"{b}.mlp.fc1.w", (c, hid), "trunc_normal")
            add(f"{b}.mlp.fc1.b", (hid,), "zeros")
            add(f"{b}.mlp.fc2.w", (hid, c), "trunc_normal")
            add(f"{b}.mlp.fc2.b", (c,), "zeros")
        if i < 3:
            m = f"backbone.stages.{i}.merge"
            add(f"{m}.norm.gamma", (4 * c,), "ones")
            add(f"{m}.norm.beta", (4 * c,), "zeros")
            add(f"{m}.reduction.w", (4 * c, 2 * c), "trunc_normal")
    return out


# ---------------------------------------------------------------------------
# patch embedding and merging
# ---------------------------------------------------------------------------

def _pad_hw(x: Tensor, mult: int, axes: tuple[int, int]) -> Tensor:
    widths = [(0, 0)] * x.ndim
    for ax in axes:
        widths[ax] = (0, (-x.shape[ax]) % mult)
    return T.pad(x, widths)


def patch_embed(image: Tensor, params: dict, patch_size: int, eps: float = 1e-5):
    """Project non-overlapping p x p patches; returns (tokens [B,L,C0], (H', W'))."""
    if image.ndim != 4 or image.shape[1] != 3:
        raise DimensionError(f"patch_embed expects [B,3,H,W] images, got {image.shape}")
    p = patch_size
    x = _pad_hw(image, p, (2, 3))
    B, C, H, W = x.shape
    gh, gw = H // p, W // p
    x = x.reshape(B, C, gh, p, gw, p).transpose(0, 2, 4, 1, 3, 5).reshape(B, gh * gw, C * p * p)
    x = T.linear(x, params["w"], params["b"])
    x = T.layer_norm(x, params["norm.gamma"], params["norm.beta"], eps)
    return x, (gh, gw)


def patch_merging(x: Tensor, params: dict, spatial: tuple[int, int], eps: float = 1e-5):
    """Concatenate 2x2 neighbourhoods, normalise, project 4C -> 2C."""
    B, L, C = x.shape
    H, W = spatial
    if L != H * W:
        raise ContractError(f"patch_merging: {L} tokens but spatial {H}x{W}")
    x = _pad_hw(x.reshape(B, H, W, C), 2, (1, 2))
    x0 = x[:, 0::2, 0::2, :]
    x1 = x[:, 1::2, 0::2, :]
    x2 = x[:, 0::2, 1::2, :]
    x3 = x[:, 1::2, 1::2, :]
    h2, w2 = x0.shape[1], x0.shape[2]
    x = T.concat([x0, x1, x2, x3], axis=-1).reshape(B, h2 * w2, 4 * C)
    x = T.layer_norm(x, params["norm.gamma"], params["norm.beta"], eps)
    return T.linear(x, params["reduction.w"]), (h2, w2)


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

def window_partition(x: Tensor, w: int) -> Tensor:
    """[B,H,W,C] -> [B*nW, w*w, C], windows in row-major order."""
    B, H, W, C = x.shape
    if H % w or W % w:
        raise ContractError(f"window_partition: {H}x{W} not divisible by window {w}")
    x = x.reshape(B, H // w, w, W // w, w, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B * (H // w) * (W // w), w * w, C)


def window_reverse(windows: Tensor, w: int, H: int, W: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    nh, nw = H // w, W // w
    C = windows.shape[-1]
    B = windows.shape[0] // (nh * nw)
    x = windows.reshape(B, nh, nw, w, w, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, H, W, C)


def relative_position_index(w: int) -> np.ndarray:
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (w - 1)
    return rel[0] * (2 * w - 1) + rel[1]


def shift_region_ids(H: int, W: int, w: int, shift: int) -> np.ndarray:
    """Label each position of the (padded) grid by its pre-shift region."""
    img = np.zeros((H, W), dtype=np.int64)
    cnt = 0
    bands = (slice(0, -w), slice(-w, -shift), slice(-shift, None))
    for hs in bands:
        for ws in bands:
            img[hs, ws] = cnt
            cnt += 1
    return img


def shift_attention_mask(H: int, W: int, w: int, shift: int) -> np.ndarray:
    """[nW, w*w, w*w] additive mask: 0 within a region, -inf across regions."""
    ids = shift_region_ids(H, W, w, shift)
    win = ids.reshape(H // w, w, W // w, w).transpose(0, 2, 1, 3).reshape(-1, w * w)
    same = win[:, :, None] == win[:, None, :]
    return np.where(same, 0.0, -np.inf)


def effective_window(spatial: tuple[int, int], window: int, shifted: bool) -> tuple[int, int]:
    """Window and shift actually used on a grid; small grids fall back to one window, no shift."""
    H, W = spatial
    if min(H, W) <= window:
        return min(H, W), 0
    return window, (window // 2 if shifted else 0)


def window_attention(
    tokens: Tensor,
    params: dict,
    num_heads: int,
    window: int,
    mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Multi-head self-attention inside each window, with relative-position bias.

    ``tokens`` is [B*nW, N, C] with N = window**2; ``mask`` is [nW, N, N].
    """
    Bw, N, C = tokens.shape
    if C % num_heads:
        raise ConfigError(f"{num_heads} heads do not divide {C} channels")
    if N != window * window:
        raise DimensionError(f"window_attention: {N} tokens per window, expected {window}x{window}")
    dh = C // num_heads
    qkv = T.linear(tokens, params["qkv.w"], params["qkv.b"])
    qkv = qkv.reshape(Bw, N, 3, num_heads, dh).transpose(2, 0, 3, 1, 4)
    q = T.scale(qkv[0], dh ** -0.5)
    k, v = qkv[1], qkv[2]
    logits = q @ k.transpose(0, 1, 3, 2)  # [Bw, h, N, N]
    idx = relative_position_index(window).reshape(-1)
    table = params["rel_bias"]
    if table.shape[0] < (2 * window - 1) ** 2:
        raise DimensionError(f"relative bias table {table.shape} too small for window {window}")
    if table.shape[0] != (2 * window - 1) ** 2:
        # degenerate windows on small grids reuse the central part of the table
        full = int(round(np.sqrt(table.shape[0]))) // 2 + 1
        rel = np.stack(np.divmod(idx, 2 * window - 1))
        idx = (rel[0] + full - window) * (2 * full - 1) + (rel[1] + full - window)
    bias = T.take(table, idx).reshape(N, N, num_heads).transpose(2, 0, 1)
    logits = logits + bias
    if mask is not None:
        nW = mask.shape[0]
        logits = logits.reshape(Bw // nW, nW, num_heads, N, N) + Tensor(mask[None, :, None])
        logits = logits.reshape(Bw, num_heads, N, N)
    attn = T.softmax(logits, axis=-1)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(Bw, N, C)
    out = T.linear(out, params["proj.w"], params["proj.b"])
    return (out, attn) if return_weights else out


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

def attention_branch(
    z_prev: Tensor, params: dict, spatial, num_heads: int, window: int, shift: bool, eps: float = 1e-5
) -> Tensor:
    """z_hat = (S)W-MSA(LN(z_prev)) + z_prev."""
    B, L, C = z_prev.shape
    H, W = spatial
    if L != H * W:
        raise ContractError(f"block: {L} tokens but spatial {H}x{W}")
    w, s = effective_window(spatial, window, shift)
    x = T.layer_norm(z_prev, params["norm1.gamma"], params["norm1.beta"], eps).reshape(B, H, W, C)
    x = _pad_hw(x, w, (1, 2))
    Hp, Wp = x.shape[1], x.shape[2]
    mask = None
    if s:
        x = T.roll(x, (-s, -s), (1, 2))
        mask = shift_attention_mask(Hp, Wp, w, s)
    attn_params = {k[5:]: v for k, v in params.items() if k.startswith("attn.")}
    x = window_attention(window_partition(x, w), attn_params, num_heads, w, mask)
    x = window_reverse(x, w, Hp, Wp)
    if s:
        x = T.roll(x, (s, s), (1, 2))
    if (Hp, Wp) != (H, W):
        x = x[:, :H, :W, :]
    return x.reshape(B, L, C) + z_prev


def mlp_branch(z_hat: Tensor, params: dict, dropout_p: float, training: bool, rng, eps: float = 1e-5) -> Tensor:
    """MLP(LN(z_hat)): linear -> GeLU -> dropout -> linear -> dropout (no residual)."""
    x = T.layer_norm(z_hat, params["norm2.gamma"], params["norm2.beta"], eps)
    x = T.gelu(T.linear(x, params["mlp.fc1.w"], params["mlp.fc1.b"]))
    x = T.dropout(x, dropout_p, training, rng)
    x = T.linear(x, params["mlp.fc2.w"], params["mlp.fc2.b"])
    return T.dropout(x, dropout_p, training, rng)


def swin_block_vanilla(
    z_prev: Tensor,
    params: dict,
    spatial,
    num_heads: int,
    window: int,
    shift: bool,
    dropout_p: float = 0.0,
    training: bool = False,
    rng=None,
    eps: float = 1e-5,
) -> BlockState:
    z_hat = attention_branch(z_prev, params, spatial, num_heads, window, shift, eps)
    z = mlp_branch(z_hat, params, dropout_p, training, rng, eps) + z_hat
    return BlockState(z_prev, z_hat, z, tuple(spatial))


# ---------------------------------------------------------------------------
# full forward
# ---------------------------------------------------------------------------

def backbone_forward(
    image: Tensor,
    store: ParamStore,
    cfg: BackboneConfig,
    tuna: "TunaConfig | None" = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> StageFeatures:
    """Four-stage forward. With ``tuna`` set, every block is routed through the
    adapter-injected block; the adapter parameters must already be in ``store``."""
    if tuna is not None:
        from .tuna import block_forward

    input_size = tuple(image.shape[2:])
    x, spatial = patch_embed(image, store.group("backbone.patch_embed"), cfg.patch_size, cfg.ln_eps)
    padded = (spatial[0] * cfg.patch_size, spatial[1] * cfg.patch_size)
    feats, sizes = [], []
    for i in range(4):
        for j in range(cfg.depths[i]):
            prefix = block_prefix(i, j)
            host = store.group(prefix)
            shift = j % 2 == 1
            if tuna is None:
                x = swin_block_vanilla(
                    x, host, spatial, cfg.num_heads[i], cfg.window_size, shift,
                    cfg.dropout_p, training, rng, cfg.ln_eps,
                ).z_out
            else:
                x = block_forward(
                    x, host, store.group(prefix.replace("backbone.", "tuna.", 1)), tuna,
                    spatial, cfg.num_heads[i], cfg.window_size, shift,
                    cfg.dropout_p, training, rng, cfg.ln_eps,
                )
        feats.append(x)
        sizes.append(spatial)
        if i < 3:
            x, spatial = patch_merging(x, store.group(f"backbone.stages.{i}.merge"), spatial, cfg.ln_eps)
    return StageFeatures(feats, sizes, input_size, padded)

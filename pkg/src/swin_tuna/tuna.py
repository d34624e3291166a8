"""The TUNA adapter: bottleneck projection, depthwise + pointwise convolution
with an inner residual, GeLU, dropout and an outer residual.

Adapters are injected into every transformer block, sized per stage, and
blended with the frozen branch by a per-channel vector ``s1`` and a scalar
``s2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import (
    BackboneConfig,
    attention_branch,
    backbone_layout,
    block_prefix,
    mlp_branch,
)
from .errors import ConfigError, ContractError
from .params import ParamInfo, ParamStore, init_array
from .tensor import Tensor

STRUCTURES = ("parallel", "sequential")
PRESETS = ("tuna", "linear_probe", "full_ft")
COUNT_FILTERS = ("all", "trainable", "adapters_only")


@dataclass
class TunaConfig:
    kernel_sizes: list[int] = field(default_factory=lambda: [7, 5, 5, 3])
    bottleneck_dims: list[int] = field(default_factory=lambda: [64, 64, 96, 192])
    structure: str = "parallel"
    s1_init: float = 1e-6
    s2_init: float = 0.0
    dropout_p: float = 0.1
    adaptive_convolution: bool = True
    adaptive_embedding: bool = True

    def __post_init__(self):
        self.kernel_sizes = [int(k) for k in self.kernel_sizes]
        self.bottleneck_dims = [int(d) for d in self.bottleneck_dims]
        if len(self.kernel_sizes) != 4 or len(self.bottleneck_dims) != 4:
            raise ConfigError("tuna.kernel_sizes and tuna.bottleneck_dims need 4 entries each")
        for k in self.kernel_sizes:
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"tuna.kernel_sizes must be odd and >= 1, got {self.kernel_sizes}")
        if min(self.bottleneck_dims) < 1:
            raise ConfigError(f"tuna.bottleneck_dims must be positive, got {self.bottleneck_dims}")
        if self.structure not in STRUCTURES:
            raise ConfigError(f"tuna.structure must be one of {STRUCTURES}, got {self.structure!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"tuna.dropout_p must lie in [0, 1), got {self.dropout_p}")

    def kernel_size(self, stage: int) -> int:
        return self.kernel_sizes[stage] if self.adaptive_convolution else self.kernel_sizes[3]

    def bottleneck_dim(self, stage: int) -> int:
        return self.bottleneck_dims[stage] if self.adaptive_embedding else self.bottleneck_dims[0]


def ablation_arms(base: TunaConfig | None = None) -> dict[str, TunaConfig]:
    """The four hierarchical-adaptation arms (adaptive conv x adaptive embedding)."""
    base = base or TunaConfig()
    arms = {}
    for conv in (False, True):
        for emb in (False, True):
            name = f"conv={'adaptive' if conv else 'fixed'},dim={'adaptive' if emb else 'fixed'}"
            arms[name] = TunaConfig(
                kernel_sizes=list(base.kernel_sizes),
                bottleneck_dims=list(base.bottleneck_dims),
                structure=base.structure,
                s1_init=base.s1_init,
                s2_init=base.s2_init,
                dropout_p=base.dropout_p,
                adaptive_convolution=conv,
                adaptive_embedding=emb,
            )
    return arms


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------

def tuna_block_layout(prefix: str, scale_prefix: str, channels: int, dim: int, kernel: int,
                      cfg: TunaConfig, trainable: bool = True) -> list[ParamInfo]:
    def p(name, shape, init, comp="tuna", pre=prefix):
        return ParamInfo(f"{pre}.{name}", tuple(shape), comp, trainable, init)

    return [
        p("down_w", (channels, dim), "trunc_normal"),
        p("down_b", (dim,), "zeros"),
        p("dw_w", (dim, 1, kernel, kernel), "trunc_normal"),
        p("dw_b", (dim,), "zeros"),
        p("pw_w", (dim, dim, 1, 1), "trunc_normal"),
        p("pw_b", (dim,), "zeros"),
        p("up_w", (dim, channels), "trunc_normal"),
        p("up_b", (channels,), "zeros"),
        p("s1", (channels,), f"const:{cfg.s1_init!r}", "scales", scale_prefix),
        p("s2", (), f"const:{cfg.s2_init!r}", "scales", scale_prefix),
    ]


def tuna_layout(backbone: BackboneConfig, cfg: TunaConfig) -> list[ParamInfo]:
    out = []
    for i in range(4):
        for j in range(backbone.depths[i]):
            host = block_prefix(i, j)
            out += tuna_block_layout(
                host.replace("backbone.", "tuna.", 1), host, backbone.embed_dims[i],
                cfg.bottleneck_dim(i), cfg.kernel_size(i), cfg,
            )
    return out


def model_layout(backbone: BackboneConfig, tuna: TunaConfig | None, head_layout=(),
                 preset: str = "tuna") -> list[ParamInfo]:
    """Full parameter layout with the freeze mask for ``preset``.

    ``tuna``: backbone frozen; adapters, scales and head trainable.
    ``linear_probe``: only the head trains (``tuna`` should be None).
    ``full_ft``: backbone and head train.
    """
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}, got {preset!r}")
    layout = []
    for info in backbone_layout(backbone):
        layout.append(_with_trainable(info, preset == "full_ft"))
    if tuna is not None:
        for info in tuna_layout(backbone, tuna):
            layout.append(_with_trainable(info, preset != "linear_probe"))
    for info in head_layout:
        layout.append(_with_trainable(info, True))
    return layout


def _with_trainable(info: ParamInfo, flag: bool) -> ParamInfo:
    return ParamInfo(info.name, info.shape, info.component, flag, info.init)


def inject(store: ParamStore, backbone: BackboneConfig, cfg: TunaConfig,
           rng: np.random.Generator) -> ParamStore:
    """Add one trainable TUNA parameter set (plus s1, s2) per block and freeze the backbone.

    Head parameters already in ``store`` stay trainable.
    """
    for name in store.names(component="backbone"):
        store.set_trainable(name, False)
    for info in tuna_layout(backbone, cfg):
        store.add(info, init_array(info, rng))
    return store


def count_params(model, filter: str = "all") -> int:
    """Exact scalar parameter count of a ParamStore or layout under ``filter``."""
    if filter not in COUNT_FILTERS:
        raise ConfigError(f"filter must be one of {COUNT_FILTERS}, got {filter!r}")
    infos = model.infos() if isinstance(model, ParamStore) else list(model)
    if filter == "trainable":
        infos = [i for i in infos if i.trainable]
    elif filter == "adapters_only":
        infos = [i for i in infos if i.component in ("tuna", "scales")]
    return sum(i.numel for i in infos)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def tuna_delta(x_in: Tensor, p: dict, spatial, training: bool = False, rng=None,
               dropout_p: float = 0.0) -> Tensor:
    """Dropout(GeLU(X_up)): the adapter output before its outer residual."""
    B, L, C = x_in.shape
    H, W = spatial
    if L != H * W:
        raise ContractError(f"tuna_forward: {L} tokens but spatial {H}x{W}")
    d = p["down_w"].shape[1]
    x_down = T.linear(x_in, p["down_w"], p["down_b"])  # [B, L, d]
    grid = x_down.reshape(B, H, W, d).transpose(0, 3, 1, 2)  # [B, d, H, W]
    conv = T.conv2d_pointwise(T.conv2d_depthwise(grid, p["dw_w"], p["dw_b"]), p["pw_w"], p["pw_b"])
    mixed = (conv + grid).transpose(0, 2, 3, 1).reshape(B, L, d)
    x_up = T.linear(mixed, p["up_w"], p["up_b"])
    return T.dropout(T.gelu(x_up), dropout_p, training, rng)


def tuna_forward(x_in: Tensor, p: dict, spatial, training: bool = False, rng=None,
                 dropout_p: float = 0.0) -> Tensor:
    return tuna_delta(x_in, p, spatial, training, rng, dropout_p) + x_in


def block_forward(
    z_prev: Tensor,
    host: dict,
    adapter: dict,
    cfg: TunaConfig,
    spatial,
    num_heads: int,
    window: int,
    shift: bool,
    dropout_p: float = 0.0,
    training: bool = False,
    rng=None,
    eps: float = 1e-5,
) -> Tensor:
    """Transformer block with an injected adapter.

    parallel:   z = s1 * (MLP(LN(z_hat)) + z_hat) + s2 * TUNA(z_prev)
    sequential: v = s1 * (MLP(LN(z_hat)) + z_hat);  z = v + s2 * delta(v)
    """
    s1, s2 = host["s1"], host["s2"]
    z_hat = attention_branch(z_prev, host, spatial, num_heads, window, shift, eps)
    frozen = mlp_branch(z_hat, host, dropout_p, training, rng, eps) + z_hat
    frozen = frozen * s1
    if cfg.structure == "parallel":
        return frozen + tuna_forward(z_prev, adapter, spatial, training, rng, cfg.dropout_p) * s2
    return frozen + tuna_delta(frozen, adapter, spatial, training, rng, cfg.dropout_p) * s2

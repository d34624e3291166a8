"""Backbone + optional adapters + head, bundled with their parameter store."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import BackboneConfig, backbone_forward, backbone_layout
from .errors import ConfigError
from .head import HeadConfig, head_forward, head_layout
from .params import ParamStore, init_array
from .tensor import Tensor
from .tuna import PRESETS, TunaConfig, model_layout


@dataclass
class SegModel:
    backbone: BackboneConfig
    head: HeadConfig
    store: ParamStore
    tuna: TunaConfig | None = None
    preset: str = "tuna"

    def features(self, images, training: bool = False, rng=None):
        x = images if isinstance(images, Tensor) else Tensor(images)
        return backbone_forward(x, self.store, self.backbone, self.tuna, training, rng)

    def __call__(self, images, training: bool = False, rng=None, out_size=None) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(images)
        feats = self.features(x, training, rng)
        size = tuple(out_size) if out_size is not None else tuple(x.shape[2:])
        return head_forward(feats, self.store.group("head"), size)

    def layout(self):
        return self.store.infos()


def build_model(
    backbone: BackboneConfig,
    head: HeadConfig,
    tuna: TunaConfig | None = None,
    preset: str = "tuna",
    backbone_seed: int = 0,
    seed: int = 0,
    backbone_weights: dict[str, np.ndarray] | None = None,
) -> SegModel:
    """Materialise a model.

    The frozen backbone is drawn from its own generator (``backbone_seed``) so
    that its fingerprint does not depend on the training seed. Externally
    converted weights, when given, override the seeded initialisation.
    """
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}, got {preset!r}")
    if preset == "tuna" and tuna is None:
        tuna = TunaConfig()
    if preset != "tuna":
        tuna = None
    layout = model_layout(backbone, tuna, head_layout(backbone, head), preset)
    bb_rng = np.random.default_rng(backbone_seed)
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for info in layout:
        if info.component == "backbone":
            data = init_array(info, bb_rng)
            if backbone_weights is not None and info.name in backbone_weights:
                data = backbone_weights[info.name]
        else:
            data = init_array(info, rng)
        store.add(info, data)
    return SegModel(backbone, head, store, tuna, preset)


def full_layout(backbone: BackboneConfig, head: HeadConfig, tuna: TunaConfig | None, preset: str):
    """Layout without allocation (parameter accounting for large configs)."""
    if preset != "tuna":
        tuna = None
    elif tuna is None:
        tuna = TunaConfig()
    return model_layout(backbone, tuna, head_layout(backbone, head), preset)


__all__ = ["SegModel", "build_model", "full_layout", "backbone_layout"]

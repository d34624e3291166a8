"""
Injecting adapters into a frozen backbone
=========================================

A small four-stage backbone is built from a seed, adapters are added to every
block, and we confirm two facts: the backbone is frozen, and with s1 = 1 and
s2 = 0 the injected model computes exactly the vanilla features.
"""

import numpy as np

from swin_tuna.backbone import backbone_forward, swin_large, toy_config
from swin_tuna.head import HeadConfig
from swin_tuna.model import build_model, full_layout
from swin_tuna.tensor import Tensor
from swin_tuna.tuna import TunaConfig, count_params

# Toy widths [8, 16, 32, 64], one window of 4x4 tokens.
backbone = toy_config()
tuna = TunaConfig(bottleneck_dims=[16, 16, 24, 48], s1_init=1.0, s2_init=0.0)
model = build_model(backbone, HeadConfig(32, 3), tuna, "tuna", seed=0)

# Trainable parameters: adapters, the two scales of each block, and the head.
for component in ("backbone", "scales", "tuna", "head"):
    names = model.store.names(component=component)
    trainable = sum(model.store.info(n).trainable for n in names)
    print(f"{component:8s} tensors={len(names):3d} trainable={trainable}")

# The injected and vanilla forwards agree bit for bit while s2 is zero.
image = Tensor(np.random.default_rng(1).random((1, 3, 32, 32)))
injected = backbone_forward(image, model.store, backbone, tuna)
vanilla = backbone_forward(image, model.store, backbone, None)
for i, (a, b) in enumerate(zip(injected.features, vanilla.features)):
    print(f"stage {i} shape {a.shape} identical={a.data.tobytes() == b.data.tobytes()}")

# Parameter accounting at the Swin-L reference widths, without allocating weights.
layout = full_layout(swin_large(), HeadConfig(num_classes=104), TunaConfig(), "tuna")
print("adapters_only", count_params(layout, "adapters_only"))
print("trainable    ", count_params(layout, "trainable"))
print("total        ", count_params(layout, "all"))

"""AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .params import ParamStore


@dataclass
class OptimState:
    base_lr: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParamStore, **kw) -> "OptimState":
        st = cls(**kw)
        for n in store.trainable_names():
            st.m[n] = np.zeros_like(store[n].data)
            st.v[n] = np.zeros_like(store[n].data)
        return st


def adamw_step(store: ParamStore, grads: dict[str, np.ndarray], opt: OptimState, lr: float) -> None:
    """One in-place AdamW update of every trainable parameter.

    Trainable parameters without an entry in ``grads`` are treated as having
    zero gradient. A gradient addressed to a frozen parameter is a freeze-mask
    violation and aborts before anything is written.
    """
    for name in grads:
        if name not in store:
            raise ContractError(f"gradient for unknown parameter {name!r}")
        if not store.info(name).trainable:
            raise ContractError(f"gradient arrived at frozen parameter {name!r}")
    b1, b2 = opt.betas
    opt.step += 1
    c1 = 1.0 - b1 ** opt.step
    c2 = 1.0 - b2 ** opt.step
    for name in store.trainable_names():
        p = store[name].data
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if name not in opt.m:
            opt.m[name] = np.zeros_like(p)
            opt.v[name] = np.zeros_like(p)
        m, v = opt.m[name], opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p *= 1.0 - lr * opt.weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


@dataclass
class Schedule:
    total_iters: int
    warmup_iters: int = 100
    min_lr_ratio: float = 0.0
    base_lr: float = 1e-4

    def __post_init__(self):
        if self.total_iters < 0 or self.warmup_iters < 0:
            raise ConfigError("schedule iteration counts must be non-negative")
        if not 0.0 <= self.min_lr_ratio <= 1.0:
            raise ConfigError(f"min_lr_ratio must lie in [0, 1], got {self.min_lr_ratio}")


def cosine_lr(it: int, s: Schedule) -> float:
    """Linear warmup to ``base_lr`` then cosine decay to ``base_lr * min_lr_ratio``."""
    if not 0 <= it <= s.total_iters:
        raise ContractError(f"iteration {it} outside [0, {s.total_iters}]")
    if it < s.warmup_iters:
        return s.base_lr * it / s.warmup_iters
    span = s.total_iters - s.warmup_iters
    t = (it - s.warmup_iters) / span if span > 0 else 1.0
    return s.base_lr * (s.min_lr_ratio + (1.0 - s.min_lr_ratio) * (1.0 + math.cos(math.pi * t)) / 2.0)

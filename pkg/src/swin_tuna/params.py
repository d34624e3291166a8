"""Named parameter registry with a per-tensor trainable flag (the freeze mask)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import ContractError
from .tensor import Tensor

COMPONENTS = ("backbone", "tuna", "scales", "head")


@dataclass(frozen=True)
class ParamInfo:
    name: str
    shape: tuple[int, ...]
    component: str
    trainable: bool = False
    init: str = "zeros"  # zeros | ones | trunc_normal | const:<value>

    @property
    def numel(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) truncated to +-bound*std by resampling."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def init_array(info: ParamInfo, rng: np.random.Generator) -> np.ndarray:
    if info.init == "zeros":
        return np.zeros(info.shape)
    if info.init == "ones":
        return np.ones(info.shape)
    if info.init == "trunc_normal":
        return trunc_normal(rng, info.shape)
    if info.init.startswith("const:"):
        return np.full(info.shape, float(info.init[6:]))
    raise ContractError(f"unknown init scheme {info.init!r} for {info.name}")


def fnv1a64(chunks: Iterable[bytes]) -> int:
    h = 0xCBF29CE484222325
    prime = 0x100000001B3
    for chunk in chunks:
        for byte in chunk:
            h ^= byte
            h = (h * prime) & 0xFFFFFFFFFFFFFFFF
    return h


class ParamStore:
    """Ordered map ``name -> (Tensor, trainable, component)``.

    A tensor's ``requires_grad`` always mirrors its trainable flag, so frozen
    parameters never enter the gradient tape.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._infos: dict[str, ParamInfo] = {}

    @classmethod
    def from_layout(cls, layout: Iterable[ParamInfo], rng: np.random.Generator) -> "ParamStore":
        store = cls()
        for info in layout:
            store.add(info, init_array(info, rng))
        return store

    def add(self, info: ParamInfo, data: np.ndarray) -> Tensor:
        if info.name in self._tensors:
            raise ContractError(f"duplicate parameter name {info.name!r}")
        data = np.asarray(data, dtype=np.float64)
        if data.shape != tuple(info.shape):
            raise ContractError(f"{info.name}: data shape {data.shape} != declared {info.shape}")
        t = Tensor(data.copy(), requires_grad=info.trainable, name=info.name)
        self._tensors[info.name] = t
        self._infos[info.name] = info
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def info(self, name: str) -> ParamInfo:
        return self._infos[name]

    def infos(self) -> list[ParamInfo]:
        return list(self._infos.values())

    def group(self, prefix: str) -> dict[str, Tensor]:
        """Tensors under ``prefix.``, keyed by the remaining suffix."""
        p = prefix + "."
        return {n[len(p):]: t for n, t in self._tensors.items() if n.startswith(p)}

    def names(self, trainable: bool | None = None, component: str | None = None) -> list[str]:
        return [
            n
            for n, i in self._infos.items()
            if (trainable is None or i.trainable == trainable)
            and (component is None or i.component == component)
        ]

    def trainable_names(self) -> list[str]:
        return self.names(trainable=True)

    def frozen_names(self) -> list[str]:
        return self.names(trainable=False)

    def set_trainable(self, name: str, flag: bool) -> None:
        info = self._infos[name]
        self._infos[name] = ParamInfo(info.name, info.shape, info.component, bool(flag), info.init)
        self._tensors[name].requires_grad = bool(flag)

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def fingerprint(self) -> int:
        """64-bit FNV-1a over the bytes of every frozen tensor, in name order."""
        names = sorted(self.frozen_names())
        return fnv1a64(self._tensors[n].data.astype("<f8").tobytes() for n in names)

    def state(self, names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
        names = list(self._tensors) if names is None else names
        return {n: self._tensors[n].data.copy() for n in names}

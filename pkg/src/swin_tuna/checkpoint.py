"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"TUNA"  u32 version  u32 entry_count
    entry_count x { u32 name_len, name (UTF-8), u32 rank, rank x u64 dim, f64 data... }
    u64 config_len, config text (UTF-8, one ``key = value`` per line)
    u64 backbone fingerprint (FNV-1a 64 over frozen tensors)

The whole file is parsed and validated before anything is returned.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, FormatError
from .params import ParamStore

MAGIC = b"TUNA"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: str = ""
    fingerprint: int = 0
    version: int = VERSION
    extra: dict = field(default_factory=dict)


def encode(tensors: dict[str, np.ndarray], config: str = "", fingerprint: int = 0) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    cfg = config.encode("utf-8")
    parts.append(struct.pack("<Q", len(cfg)))
    parts.append(cfg)
    parts.append(struct.pack("<Q", fingerprint))
    return b"".join(parts)


def encoded_size(entries, config: str = "") -> int:
    """Byte size :func:`encode` would produce for ``(name, shape)`` pairs, without allocating."""
    size = 4 + 8 + 8 + len(config.encode("utf-8")) + 8
    for name, shape in entries:
        numel = int(np.prod(shape, dtype=np.int64)) if len(shape) else 1
        size += 4 + len(name.encode("utf-8")) + 4 + 8 * len(shape) + 8 * numel
    return size


def decode(buf: bytes) -> Checkpoint:
    pos = 0

    def read(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated checkpoint at byte {pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if read(4) != MAGIC:
        raise FormatError("bad magic bytes; not a TUNA checkpoint")
    version, count = struct.unpack("<II", read(8))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", read(4))
        try:
            name = read(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not valid UTF-8") from exc
        (rank,) = struct.unpack("<I", read(4))
        shape = struct.unpack(f"<{rank}Q", read(8 * rank))
        numel = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(read(8 * numel), dtype="<f8").astype(np.float64).reshape(shape)
        if name in tensors:
            raise FormatError(f"duplicate tensor {name!r}")
        tensors[name] = data
    (clen,) = struct.unpack("<Q", read(8))
    config = read(clen).decode("utf-8")
    (fp,) = struct.unpack("<Q", read(8))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after checkpoint")
    return Checkpoint(tensors, config, fp, version)


def save_checkpoint(store: ParamStore, path, config: str = "", names=None) -> int:
    """Write the trainable tensors of ``store``; returns the file size in bytes."""
    names = store.trainable_names() if names is None else list(names)
    buf = encode(store.state(names), config, store.fingerprint())
    Path(path).write_bytes(buf)
    return len(buf)


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def apply_checkpoint(store: ParamStore, ckpt: Checkpoint, force: bool = False) -> None:
    """Copy checkpoint tensors into ``store`` after checking compatibility."""
    if not force and ckpt.fingerprint != store.fingerprint():
        raise CompatibilityError(
            f"backbone fingerprint mismatch: checkpoint {ckpt.fingerprint:016x}, "
            f"model {store.fingerprint():016x}"
        )
    for name, arr in ckpt.tensors.items():
        if name not in store:
            raise CompatibilityError(f"checkpoint tensor {name!r} not present in model")
        if store[name].shape != arr.shape:
            raise CompatibilityError(f"{name}: checkpoint shape {arr.shape} != model {store[name].shape}")
    for name, arr in ckpt.tensors.items():
        store[name].data[...] = arr

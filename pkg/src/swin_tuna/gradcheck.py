"""Finite-difference verification of every differentiable op and of the
composed adapter, block and head paths."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .backbone import (
    StageFeatures,
    patch_embed,
    patch_merging,
    shift_attention_mask,
    swin_block_vanilla,
    window_attention,
)
from .head import cross_entropy_loss, head_forward
from .tensor import Tensor, no_grad
from .tuna import TunaConfig, block_forward, tuna_forward

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"op={self.name} max_rel_err={self.max_rel_err:.3e} {status}"


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||); 0 when both vanish."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def numerical_grad(fn: Callable[..., Tensor], arrays: list[np.ndarray], k: int, h: float = STEP) -> np.ndarray:
    x = arrays[k]
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = fn(*[Tensor(a) for a in arrays]).item()
            flat[i] = old - h
            fm = fn(*[Tensor(a) for a in arrays]).item()
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
    return g


def check(fn: Callable[..., Tensor], arrays: list[np.ndarray], perturb: bool = False, h: float = STEP) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    fn(*leaves).backward()
    worst = 0.0
    for k, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[k])
        if perturb:
            analytic = analytic * 1.01 + 1e-3
        worst = max(worst, relative_error(analytic, numerical_grad(fn, arrays, k, h)))
    return worst


def _proj(out: Tensor, seed: int = 99) -> Tensor:
    """Random linear functional so that every output element matters."""
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return T.tsum(T.mul(out, Tensor(r)))


def _block_params(rng, C, heads, window, hidden):
    n = lambda *s: 0.3 * rng.standard_normal(s)
    return {
        "norm1.gamma": 1 + n(C), "norm1.beta": n(C),
        "attn.qkv.w": n(C, 3 * C), "attn.qkv.b": n(3 * C),
        "attn.rel_bias": n((2 * window - 1) ** 2, heads),
        "attn.proj.w": n(C, C), "attn.proj.b": n(C),
        "norm2.gamma": 1 + n(C), "norm2.beta": n(C),
        "mlp.fc1.w": n(C, hidden), "mlp.fc1.b": n(hidden),
        "mlp.fc2.w": n(hidden, C), "mlp.fc2.b": n(C),
    }


def _tuna_params(rng, C, d, k):
    n = lambda *s: 0.3 * rng.standard_normal(s)
    return {
        "down_w": n(C, d), "down_b": n(d), "dw_w": n(d, 1, k, k), "dw_b": n(d),
        "pw_w": n(d, d, 1, 1), "pw_b": n(d), "up_w": n(d, C), "up_b": n(C),
    }


def _dict_fn(keys, body):
    """Adapt ``body(x, params_dict)`` to positional tensors (x first)."""
    def fn(x, *ps):
        return body(x, dict(zip(keys, ps)))
    return fn


def build_checks() -> dict[str, tuple[Callable, list[np.ndarray]]]:
    rng = np.random.default_rng(0)
    r = lambda *s: rng.standard_normal(s)
    checks: dict[str, tuple[Callable, list[np.ndarray]]] = {}

    checks["add"] = (lambda a, b: _proj(T.add(a, b)), [r(2, 3), r(3)])
    checks["sub"] = (lambda a, b: _proj(T.sub(a, b)), [r(2, 3), r(1, 3)])
    checks["mul"] = (lambda a, b: _proj(T.mul(a, b)), [r(2, 3), r(2, 1)])
    checks["scale"] = (lambda a: _proj(T.scale(a, -1.7)), [r(3, 2)])
    checks["exp"] = (lambda a: _proj(T.exp(a)), [r(4)])
    checks["log"] = (lambda a: _proj(T.log(a)), [np.abs(r(4)) + 0.5])
    checks["matmul"] = (lambda a, b: _proj(T.matmul(a, b)), [r(2, 3, 4), r(4, 5)])
    checks["linear"] = (lambda x, w, b: _proj(T.linear(x, w, b)), [r(2, 3, 4), r(4, 5), r(5)])
    checks["reshape"] = (lambda a: _proj(T.reshape(a, (3, 4))), [r(2, 6)])
    checks["transpose"] = (lambda a: _proj(T.transpose(a, (2, 0, 1))), [r(2, 3, 4)])
    checks["getitem"] = (lambda a: _proj(a[:, 1::2]), [r(3, 5)])
    checks["concat"] = (lambda a, b: _proj(T.concat([a, b], axis=1)), [r(2, 3), r(2, 2)])
    checks["roll"] = (lambda a: _proj(T.roll(a, (-1, 2), (0, 1))), [r(3, 4)])
    checks["pad"] = (lambda a: _proj(T.pad(a, [(0, 1), (2, 0)])), [r(2, 3)])
    idx = np.array([[0, 2], [2, 1]])
    checks["take"] = (lambda t: _proj(T.take(t, idx)), [r(3, 2)])
    checks["sum"] = (lambda a: _proj(T.tsum(a, axis=1)), [r(2, 3)])
    checks["mean"] = (lambda a: _proj(T.tmean(a, axis=0, keepdims=True)), [r(2, 3)])
    checks["gelu"] = (lambda a: _proj(T.gelu(a)), [np.array([-2.0, -0.5, 0.3, 4.0])])
    checks["softmax"] = (lambda a: _proj(T.softmax(a, axis=-1)), [r(3, 4)])
    checks["layer_norm"] = (lambda x, g, b: _proj(T.layer_norm(x, g, b)), [r(2, 3, 5), r(5), r(5)])
    checks["dropout"] = (
        lambda a: _proj(T.dropout(a, 0.3, True, np.random.default_rng(7))),
        [r(4, 5)],
    )
    checks["conv2d_depthwise"] = (
        lambda x, w, b: _proj(T.conv2d_depthwise(x, w, b)), [r(2, 3, 5, 4), r(3, 1, 3, 3), r(3)]
    )
    checks["conv2d_pointwise"] = (
        lambda x, w, b: _proj(T.conv2d_pointwise(x, w, b)), [r(2, 3, 4, 4), r(2, 3, 1, 1), r(2)]
    )
    checks["resize_bilinear"] = (lambda x: _proj(T.resize_bilinear(x, (5, 7))), [r(1, 2, 3, 4)])
    tgt = np.array([[[0, 2], [255, 1]]])
    checks["cross_entropy"] = (lambda z: cross_entropy_loss(z, tgt, 255), [r(1, 3, 2, 2)])

    # composed paths
    checks["conv_gelu_sum"] = (
        lambda x, w, b: T.tsum(T.gelu(T.conv2d_depthwise(x, w, b))), [r(1, 2, 4, 4), r(2, 1, 3, 3), r(2)]
    )

    pe_keys = ["w", "b", "norm.gamma", "norm.beta"]
    checks["patch_embed"] = (
        _dict_fn(pe_keys, lambda x, p: _proj(patch_embed(x, p, 2)[0])),
        [r(1, 3, 4, 6), 0.3 * r(12, 4), r(4), 1 + 0.3 * r(4), r(4)],
    )
    pm_keys = ["norm.gamma", "norm.beta", "reduction.w"]
    checks["patch_merging"] = (
        _dict_fn(pm_keys, lambda x, p: _proj(patch_merging(x, p, (2, 4))[0])),
        [r(1, 8, 3), 1 + 0.3 * r(12), r(12), 0.3 * r(12, 6)],
    )

    C, heads, w = 8, 2, 2
    bp = _block_params(rng, C, heads, w, 16)
    attn_keys = [k for k in bp if k.startswith("attn.")]
    mask = shift_attention_mask(4, 4, w, 1)
    checks["window_attention"] = (
        _dict_fn(attn_keys, lambda x, p: _proj(window_attention(
            x, {k[5:]: v for k, v in p.items()}, heads, w, mask))),
        [r(4, 4, C)] + [bp[k] for k in attn_keys],
    )
    bkeys = list(bp)
    checks["swin_block_vanilla"] = (
        _dict_fn(bkeys, lambda x, p: _proj(swin_block_vanilla(x, p, (4, 4), heads, w, True).z_out)),
        [r(1, 16, C)] + [bp[k] for k in bkeys],
    )

    tp = _tuna_params(rng, C, 4, 3)
    tkeys = list(tp)
    checks["tuna_forward"] = (
        _dict_fn(tkeys, lambda x, p: _proj(tuna_forward(x, p, (4, 4)))),
        [r(1, 16, C)] + [tp[k] for k in tkeys],
    )
    for structure in ("parallel", "sequential"):
        cfg = TunaConfig(kernel_sizes=[3, 3, 3, 3], bottleneck_dims=[4] * 4, structure=structure, dropout_p=0.0)
        keys = bkeys + ["s1", "s2"] + ["tuna." + k for k in tkeys]

        def body(x, p, cfg=cfg):
            host = {k: v for k, v in p.items() if not k.startswith("tuna.")}
            adapter = {k[5:]: v for k, v in p.items() if k.startswith("tuna.")}
            return _proj(block_forward(x, host, adapter, cfg, (4, 4), heads, w, True))

        checks[f"tuna_block_{structure}"] = (
            _dict_fn(keys, body),
            [r(1, 16, C)] + [bp[k] for k in bkeys] + [1 + 0.3 * r(C), np.array(0.7)] + [tp[k] for k in tkeys],
        )

    dims = [2, 4, 8, 16]
    spatial = [(4, 4), (2, 2), (1, 1), (1, 1)]
    hkeys = [f"lateral.{i}.{s}" for i in range(4) for s in ("w", "b")] + ["fuse.w", "fuse.b", "cls.w", "cls.b"]
    F, K = 3, 3
    hvals = []
    for i in range(4):
        hvals += [0.3 * r(dims[i], F), r(F)]
    hvals += [0.3 * r(4 * F, F), r(F), 0.3 * r(F, K), r(K)]
    target = rng.integers(0, K, size=(1, 8, 8))
    target[0, 0, :3] = 255

    def head_loss(f0, f1, f2, f3, *ps):
        feats = StageFeatures([f0, f1, f2, f3], spatial, (8, 8), (8, 8))
        return cross_entropy_loss(head_forward(feats, dict(zip(hkeys, ps)), (8, 8)), target, 255)

    checks["head_loss"] = (
        head_loss,
        [r(1, h * ww, c) for (h, ww), c in zip(spatial, dims)] + hvals,
    )
    return checks


def run_gradcheck(names=None, perturb: str | None = None) -> list[CheckResult]:
    checks = build_checks()
    if names:
        unknown = set(names) - set(checks)
        if unknown:
            raise KeyError(f"unknown gradcheck targets: {sorted(unknown)}")
    results = []
    for name, (fn, arrays) in checks.items():
        if names and name not in names:
            continue
        t0 = time.perf_counter()
        err = check(fn, arrays, perturb=(name == perturb))
        results.append(CheckResult(name, err, time.perf_counter() - t0))
    return results

"""PEFT training loop and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .data import Dataset, make_batch
from .errors import ContractError, NumericalError
from .head import cross_entropy_loss
from .metrics import ConfusionMatrix
from .model import SegModel
from .optim import OptimState, Schedule, adamw_step, cosine_lr
from .tensor import Tensor, no_grad, topological_order

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iters: int = 1000
    batch: int = 4
    crop: int = 32
    seed: int = 0
    lr: float = 1e-4
    wd: float = 0.01
    warmup: int = 100
    min_lr_ratio: float = 0.0
    eval_interval: int = 0  # 0: evaluate only at the end
    ignore_index: int = 255


@dataclass
class TrainResult:
    log: list[str] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    fingerprint_before: int = 0
    fingerprint_after: int = 0
    checkpoint_bytes: int = 0

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    def log_text(self) -> str:
        return "".join(line + "\n" for line in self.log)


def _fmt(x: float) -> str:
    return f"{x:.8g}"


def format_record(it: int, lr: float, loss: float, metrics: dict | None = None) -> str:
    line = f"iter={it} lr={_fmt(lr)} loss={_fmt(loss)}"
    if metrics:
        line += f" mIoU={_fmt(metrics['mIoU'])} mAcc={_fmt(metrics['mAcc'])} aAcc={_fmt(metrics['aAcc'])}"
    return line


def first_nonfinite(loss: Tensor) -> str:
    """Name of the earliest recorded tensor holding a NaN or inf."""
    for node in topological_order(loss):
        if not np.all(np.isfinite(node.data)):
            return node.name or f"<{node.op} output, shape {node.shape}>"
    return "<none>"


def evaluate(model: SegModel, dataset: Dataset, ignore_index: int = 255) -> dict:
    """Whole-image inference (dropout off) accumulated into one confusion matrix."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    K = model.head.num_classes
    cm = ConfusionMatrix(K, ignore_index)
    losses = []
    with no_grad():
        for s in dataset:
            logits = model(s.image[None], training=False, out_size=s.mask.shape)
            if (s.mask != ignore_index).any():
                losses.append(cross_entropy_loss(logits, s.mask[None], ignore_index).item())
            cm.update(logits.data[0].argmax(axis=0), s.mask)
    out = cm.summary()
    out["loss"] = float(np.mean(losses)) if losses else 0.0
    out["confusion"] = cm
    return out


def _batches(n: int, batch: int, rng: np.random.Generator):
    """Endless stream of index batches drawn from reshuffled epochs."""
    order: list[int] = []
    while True:
        while len(order) < batch:
            order.extend(rng.permutation(n).tolist())
        yield order[:batch]
        order = order[batch:]


def train(
    model: SegModel,
    dataset: Dataset,
    cfg: TrainConfig,
    eval_dataset: Dataset | None = None,
    checkpoint_path=None,
    config_text: str = "",
) -> TrainResult:
    """forward -> loss -> backward -> AdamW -> schedule, dropout active everywhere.

    Only trainable tensors are written to the checkpoint. A gradient that
    reaches a frozen tensor, or any change of the frozen fingerprint, aborts.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    store = model.store
    eval_ds = eval_dataset if eval_dataset is not None else dataset
    rng = np.random.default_rng(cfg.seed)
    opt = OptimState.for_store(store, base_lr=cfg.lr, weight_decay=cfg.wd)
    sched = Schedule(cfg.iters, min(cfg.warmup, cfg.iters), cfg.min_lr_ratio, cfg.lr)
    res = TrainResult(fingerprint_before=store.fingerprint())
    frozen = [store[n] for n in store.frozen_names()]
    batches = _batches(len(dataset), min(cfg.batch, len(dataset)), rng)

    for it in range(cfg.iters):
        idx = next(batches)
        images, masks = make_batch([dataset[i] for i in idx], cfg.crop, cfg.ignore_index)
        store.zero_grad()
        logits = model(images, training=True, rng=rng)
        loss = cross_entropy_loss(logits, masks, cfg.ignore_index)
        if not np.isfinite(loss.data).all():
            raise NumericalError(f"non-finite loss at iteration {it + 1}; first bad tensor: {first_nonfinite(loss)}")
        loss.backward()
        for t in frozen:
            if t.grad is not None:
                raise ContractError(f"gradient arrived at frozen parameter {t.name!r}")
        grads = {n: store[n].grad for n in store.trainable_names() if store[n].grad is not None}
        lr = cosine_lr(it + 1, sched)
        adamw_step(store, grads, opt, lr)
        value = loss.item()
        res.losses.append(value)
        metrics = None
        if (cfg.eval_interval and (it + 1) % cfg.eval_interval == 0) or it + 1 == cfg.iters:
            metrics = evaluate(model, eval_ds, cfg.ignore_index)
            res.metrics = metrics
        res.log.append(format_record(it + 1, lr, value, metrics))

    if cfg.iters == 0:
        metrics = evaluate(model, eval_ds, cfg.ignore_index)
        res.metrics = metrics
        res.log.append(format_record(0, cosine_lr(0, sched), metrics["loss"], metrics))

    res.fingerprint_after = store.fingerprint()
    if res.fingerprint_after != res.fingerprint_before:
        raise ContractError("frozen backbone tensors changed during training")
    if checkpoint_path is not None:
        res.checkpoint_bytes = save_checkpoint(store, checkpoint_path, config_text)
    return res

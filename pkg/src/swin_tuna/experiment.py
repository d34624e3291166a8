"""Glue between a RunConfig and the library: data, model, training run."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, apply_checkpoint, load_checkpoint
from .config import RunConfig
from .data import Dataset, generate_synthetic, load_dataset
from .model import SegModel, build_model, full_layout
from .train import TrainResult, evaluate, train

CHECKPOINT_NAME = "checkpoint.tuna"
LOG_NAME = "metrics.log"
CONFIG_NAME = "config.cfg"


def load_data(cfg: RunConfig, which: str = "train") -> Dataset:
    path = cfg["data.eval_path"] if which == "eval" and cfg["data.eval_path"] else cfg["data.path"]
    K = cfg["head.num_classes"]
    if path:
        return load_dataset(path, K, cfg["loss.ignore_index"])
    return generate_synthetic(
        cfg["data.synthetic.num_images"],
        cfg["data.synthetic.size"],
        K,
        np.random.default_rng(cfg["data.synthetic.seed"]),
        noise=cfg["data.synthetic.noise"],
    )


def backbone_weights(cfg: RunConfig) -> dict | None:
    path = cfg["backbone.weights"]
    return load_checkpoint(path).tensors if path else None


def model_from_config(cfg: RunConfig, seed: int | None = None) -> SegModel:
    if seed is None:
        seed = cfg.train(require_seed=False).seed
    return build_model(
        cfg.backbone(), cfg.head(), cfg.tuna(), cfg["preset"],
        backbone_seed=cfg["backbone.init_seed"], seed=seed,
        backbone_weights=backbone_weights(cfg),
    )


def layout_from_config(cfg: RunConfig):
    return full_layout(cfg.backbone(), cfg.head(), cfg.tuna(), cfg["preset"])


@dataclass
class RunArtifacts:
    result: TrainResult
    model: SegModel
    checkpoint: Path
    log: Path


def run_training(cfg: RunConfig, out_dir) -> RunArtifacts:
    tcfg = cfg.train(require_seed=True)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = model_from_config(cfg, tcfg.seed)
    data = load_data(cfg, "train")
    eval_data = load_data(cfg, "eval") if cfg["data.eval_path"] else None
    (out / CONFIG_NAME).write_text(cfg.dump(), encoding="utf-8")
    ckpt = out / CHECKPOINT_NAME
    result = train(model, data, tcfg, eval_data, ckpt, cfg.dump())
    log = out / LOG_NAME
    log.write_text(result.log_text(), encoding="utf-8")
    return RunArtifacts(result, model, ckpt, log)


def restore(ckpt_path, force: bool = False) -> tuple[SegModel, RunConfig, Checkpoint]:
    """Rebuild the model recorded in a checkpoint and load its trained tensors."""
    ckpt = load_checkpoint(ckpt_path)
    cfg = RunConfig.from_text(ckpt.config)
    model = model_from_config(cfg)
    apply_checkpoint(model.store, ckpt, force=force)
    return model, cfg, ckpt


def evaluate_checkpoint(ckpt_path, data_dir=None, force: bool = False) -> dict:
    model, cfg, _ = restore(ckpt_path, force)
    if data_dir:
        data = load_dataset(data_dir, cfg["head.num_classes"], cfg["loss.ignore_index"])
    else:
        data = load_data(cfg, "eval")
    return evaluate(model, data, cfg["loss.ignore_index"])

"""Flat ``section.key = value`` run configuration.

Every key has a default; unknown keys are rejected. Lists are written as
``[7, 5, 5, 3]``, booleans as ``true``/``false``.
"""

from __future__ import annotations

import ast
import os
from importlib import resources
from pathlib import Path

from .backbone import BackboneConfig
from .errors import ConfigError
from .head import HeadConfig
from .train import TrainConfig
from .tuna import PRESETS, TunaConfig

# defaults describe the desk-scale toy backbone; reference optimiser settings
DEFAULTS: dict[str, object] = {
    "preset": "tuna",
    "backbone.patch_size": 4,
    "backbone.embed_dims": [8, 16, 32, 64],
    "backbone.depths": [1, 1, 2, 1],
    "backbone.num_heads": [1, 2, 4, 8],
    "backbone.window_size": 4,
    "backbone.mlp_ratio": 4.0,
    "backbone.dropout_p": 0.1,
    "backbone.init_seed": 0,
    "backbone.weights": "",
    "tuna.kernel_sizes": [7, 5, 5, 3],
    "tuna.bottleneck_dims": [64, 64, 96, 192],
    "tuna.structure": "parallel",
    "tuna.s1_init": 1e-6,
    "tuna.s2_init": 0.0,
    "tuna.dropout_p": 0.1,
    "tuna.adaptive_convolution": True,
    "tuna.adaptive_embedding": True,
    "head.channels": 64,
    "head.num_classes": 3,
    "loss.ignore_index": 255,
    "train.iters": 1000,
    "train.batch": 4,
    "train.crop": 32,
    "train.seed": None,
    "train.lr": 1e-4,
    "train.wd": 0.01,
    "train.warmup": 100,
    "train.min_lr_ratio": 0.0,
    "train.eval_interval": 0,
    "data.path": "",
    "data.eval_path": "",
    "data.synthetic.num_images": 16,
    "data.synthetic.size": 32,
    "data.synthetic.noise": 0.1,
    "data.synthetic.seed": 1,
}

_INT_OR_NONE = {"train.seed"}


def parse_value(key: str, raw: str):
    """Convert text to the type of ``key``'s default."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    text = raw.strip()
    try:
        if key in _INT_OR_NONE:
            return None if text.lower() in ("", "none") else int(text)
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            value = ast.literal_eval(text)
            if not isinstance(value, (list, tuple)):
                raise ValueError(text)
            return [int(v) for v in value]
        return text.strip("\"'")
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, list):
        return "[" + ", ".join(str(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    # -- parsing ----------------------------------------------------------
    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        cfg.update_text(text)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(read_config_text(path))

    def update_text(self, text: str) -> None:
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, raw = line.split("=", 1)
            self.set(key.strip(), parse_value(key.strip(), raw))

    def override(self, assignment: str) -> None:
        if "=" not in assignment:
            raise ConfigError(f"--set expects key=value, got {assignment!r}")
        key, raw = assignment.split("=", 1)
        key = key.strip()
        self.set(key, parse_value(key, raw))

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "preset" and value not in PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}, got {value!r}")
        self.values[key] = value

    def __getitem__(self, key: str):
        return self.values[key]

    def dump(self) -> str:
        return "".join(f"{k} = {format_value(self.values[k])}\n" for k in DEFAULTS)

    # -- typed views ------------------------------------------------------
    def _section(self, prefix: str) -> dict:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p) and "." not in k[len(p):]}

    def backbone(self) -> BackboneConfig:
        kw = self._section("backbone")
        kw.pop("init_seed")
        kw.pop("weights")
        return BackboneConfig(**kw)

    def tuna(self) -> TunaConfig | None:
        if self["preset"] != "tuna":
            return None
        return TunaConfig(**self._section("tuna"))

    def head(self) -> HeadConfig:
        return HeadConfig(**self._section("head"))

    def train(self, require_seed: bool = True) -> TrainConfig:
        seed = self["train.seed"]
        if seed is None and os.environ.get("TUNA_SEED"):
            try:
                seed = int(os.environ["TUNA_SEED"])
            except ValueError as exc:
                raise ConfigError(f"TUNA_SEED is not an integer: {os.environ['TUNA_SEED']!r}") from exc
            self.values["train.seed"] = seed
        if seed is None:
            if require_seed:
                raise ConfigError("train.seed is required (set it or export TUNA_SEED)")
            seed = 0
        kw = self._section("train")
        kw["seed"] = seed
        kw["ignore_index"] = self["loss.ignore_index"]
        return TrainConfig(**kw)


def bundled_configs() -> list[str]:
    root = resources.files("swin_tuna") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def read_config_text(path_or_name) -> str:
    """Read a config file, falling back to a bundled config of that name."""
    p = Path(path_or_name)
    if p.is_file():
        return p.read_text(encoding="utf-8")
    name = p.name[:-4] if p.name.endswith(".cfg") else p.name
    bundled = resources.files("swin_tuna") / "configs" / f"{name}.cfg"
    if bundled.is_file():
        return bundled.read_text(encoding="utf-8")
    raise ConfigError(f"config {path_or_name!s} not found (bundled: {', '.join(bundled_configs())})")

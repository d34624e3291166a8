"""Parameter-efficient fine-tuning of a windowed-attention backbone with TUNA adapters.

A from-scratch float64 implementation: a small reverse-mode autodiff core,
a Swin-style backbone, the TUNA adapter and its injection, a light
segmentation head, AdamW training and segmentation metrics.
"""

from .backbone import BackboneConfig, StageFeatures, backbone_forward, swin_large, toy_config
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Dataset,
    SampleRecord,
    generate_synthetic,
    gini_coefficient,
    load_dataset,
    resolution_range_ratio,
)
from .head import HeadConfig, cross_entropy_loss, head_forward
from .metrics import ConfusionMatrix
from .model import SegModel, build_model
from .optim import OptimState, Schedule, adamw_step, cosine_lr
from .params import ParamStore
from .tensor import Tensor, no_grad
from .train import TrainConfig, evaluate, train
from .tuna import TunaConfig, block_forward, count_params, inject, tuna_forward

__version__ = "0.1.0"

from .config import VARIANTS, ModelConfig
from .params import ModelParams, init_params
from .loss import composite_loss
from .network import (
    TokenSequence,
    WindowBatch,
    forward,
    loss_and_gradients,
    normalize_context,
    normalize_batch,
    tokenize,
)

__all__ = [
    "VARIANTS",
    "ModelConfig",
    "ModelParams",
    "init_params",
    "composite_loss",
    "TokenSequence",
    "WindowBatch",
    "forward",
    "loss_and_gradients",
    "normalize_context",
    "normalize_batch",
    "tokenize",
]

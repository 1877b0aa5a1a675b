from . import tensor
from .nn import DiscHead, EmaState, Generator, Mlp, ema_update, frozen, time_features
from .optim import AdamW, OptimConfig, clip_by_global_norm
from .tensor import ShapeError, Tape, Tensor, backward, grad, no_grad, stop_grad

__all__ = [
    "AdamW", "DiscHead", "EmaState", "Generator", "Mlp", "OptimConfig", "ShapeError", "Tape",
    "Tensor", "backward", "clip_by_global_norm", "ema_update", "frozen", "grad", "no_grad",
    "stop_grad", "tensor", "time_features",
]

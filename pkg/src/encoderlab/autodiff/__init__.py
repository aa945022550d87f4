from . import functional
from .checkpoint import CheckpointError
from .functional import (
    Categorical,
    adaptive_avg_pool,
    adaptive_max_pool,
    conv2d,
    flatten,
    linear,
    log_softmax,
    maxpool2d,
    relu,
    softmax,
)
from .optim import Adam, Parameter, adam_step, clip_grad_global_norm, global_grad_norm
from .tensor import NonFiniteError, Tensor, no_grad

__all__ = [
    "Adam",
    "Categorical",
    "CheckpointError",
    "NonFiniteError",
    "Parameter",
    "Tensor",
    "adam_step",
    "adaptive_avg_pool",
    "adaptive_max_pool",
    "clip_grad_global_norm",
    "conv2d",
    "flatten",
    "functional",
    "global_grad_norm",
    "linear",
    "log_softmax",
    "maxpool2d",
    "no_grad",
    "relu",
    "softmax",
]

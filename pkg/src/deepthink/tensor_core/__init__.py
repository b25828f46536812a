from .ops import (
    add,
    concat_channels,
    conv,
    cross_entropy_per_position,
    mul,
    relu,
    scale,
    slice_channels,
    sum_all,
)
from .optim import LrSchedule, OptimizerState, clip_grad_norm, global_grad_norm, optimizer_step
from .tensor import Tensor, backward, detach, is_grad_enabled, no_grad

__all__ = [
    "LrSchedule",
    "OptimizerState",
    "Tensor",
    "add",
    "backward",
    "clip_grad_norm",
    "concat_channels",
    "conv",
    "cross_entropy_per_position",
    "detach",
    "global_grad_norm",
    "is_grad_enabled",
    "mul",
    "no_grad",
    "optimizer_step",
    "relu",
    "scale",
    "slice_channels",
    "sum_all",
]

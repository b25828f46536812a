"""Optimizers, gradient clipping and the epoch-indexed learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

WARMUP_START = 0.01


@dataclass
class LrSchedule:
    """Exponential warm-up followed by step decay.

    During the first ``warmup_epochs`` epochs the multiplier grows
    geometrically from 0.01 at epoch 0 to exactly 1.0 at epoch
    ``warmup_epochs - 1``. Afterwards the rate is multiplied by
    ``decay_factor`` once for every entry of ``decay_epochs`` already reached.
    """

    base_lr: float
    warmup_epochs: int = 0
    decay_epochs: tuple[int, ...] = ()
    decay_factor: float = 1.0

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ValueError(f"decay epochs must be strictly increasing: {self.decay_epochs}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError(f"decay factor must lie in (0, 1], got {self.decay_factor}")
        if self.warmup_epochs < 0:
            raise ValueError("warmup epochs must be non-negative")

    def warmup_multiplier(self, epoch: int) -> float:
        w = self.warmup_epochs
        if w <= 1 or epoch >= w - 1:
            return 1.0
        return WARMUP_START ** ((w - 1 - epoch) / (w - 1))

    def __call__(self, epoch: int) -> float:
        decays = sum(1 for e in self.decay_epochs if epoch >= e)
        return self.base_lr * self.warmup_multiplier(epoch) * self.decay_factor**decays


def global_grad_norm(params: list[Tensor]) -> float:
    total = 0.0
    for p in params:
        g = p.grad.astype(np.float64)
        total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def clip_grad_norm(params: list[Tensor], max_norm: float | None) -> float:
    """Rescale gradients in place so their global norm is at most ``max_norm``.

    Returns the norm before clipping. ``None`` or ``inf`` leaves grads untouched.
    """
    norm = global_grad_norm(params)
    if max_norm is None or math.isinf(max_norm):
        return norm
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            p.grad *= p.grad.dtype.type(factor)
    return norm


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    momentum: float = 0.9
    weight_decay: float = 2e-4
    clip: float | None = None
    step_count: int = 0
    moments: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def optimizer_step(state: OptimizerState, params: dict[str, Tensor], schedule: LrSchedule | None = None, epoch: int = 0) -> float:
    """Apply one update to ``params`` in place; returns the pre-clip gradient norm.

    Weight decay is decoupled: parameters shrink by ``lr * weight_decay``
    before the gradient step and never pass through the moment estimates.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"optimizer_step: parameters without gradients: {missing}")
    plist = list(params.values())
    norm = clip_grad_norm(plist, state.clip)
    lr = schedule(epoch) if schedule is not None else state.lr
    state.step_count += 1
    t = state.step_count
    for name, p in params.items():
        g = p.grad
        if state.weight_decay:
            p.data *= p.data.dtype.type(1.0 - lr * state.weight_decay)
        if state.kind == "adam":
            b1, b2 = state.betas
            if name not in state.moments:
                state.moments[name] = [np.zeros_like(p.data), np.zeros_like(p.data)]
            m, v = state.moments[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            bias1 = 1 - b1**t
            bias2 = 1 - b2**t
            step_size = lr / bias1
            denom = np.sqrt(v) / math.sqrt(bias2) + state.eps
            p.data -= (step_size * m / denom).astype(p.data.dtype)
        else:
            if name not in state.moments:
                state.moments[name] = [g.copy()]
            else:
                buf = state.moments[name][0]
                buf *= state.momentum
                buf += g
            p.data -= (lr * state.moments[name][0]).astype(p.data.dtype)
    return norm

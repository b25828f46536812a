"""Differentiable operations.

Layout convention is channels-last: a batch of 1D signals is
``(batch, length, channels)`` and a batch of images is
``(batch, height, width, channels)``. Convolution weights are stored as
``(3, in_channels, filters)`` in 1D and ``(3, 3, in_channels, filters)`` in
2D; ``weights[k]`` (or ``weights[ky, kx]``) is the matrix for one kernel tap.
"""

from __future__ import annotations

import itertools

import numpy as np

from .tensor import Tensor, make_result

KERNEL = 3


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def grad_fn(g):
        return g, g

    return make_result(a.data + b.data, "add", (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return g * bd, g * ad

    return make_result(ad * bd, "mul", (a, b), grad_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    f = a.data.dtype.type(factor)

    def grad_fn(g):
        return (g * f,)

    return make_result(a.data * f, "scale", (a,), grad_fn)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def grad_fn(g):
        return (np.broadcast_to(g.reshape(()), shape).copy(),)

    return make_result(np.asarray(a.data.sum(), dtype=a.dtype), "sum", (a,), grad_fn)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def grad_fn(g):
        return (g * mask,)

    return make_result(np.maximum(a.data, a.data.dtype.type(0)), "relu", (a,), grad_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Join along the trailing channel axis."""
    if a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"concat_channels: spatial/batch extents differ, {a.shape[:-1]} vs {b.shape[:-1]}")
    ca = a.shape[-1]

    def grad_fn(g):
        return g[..., :ca], g[..., ca:]

    return make_result(np.concatenate([a.data, b.data], axis=-1), "concat", (a, b), grad_fn)


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return make_result(a.data[..., start:stop].copy(), "slice", (a,), grad_fn)


class _PaddedGeometry:
    """Flat zero-padded layout shared by the forward and backward convolution passes.

    The padded batch is stored as a 2D ``(rows, channels)`` array with a
    margin of zero rows at both ends, so the input seen by kernel tap
    ``off`` is the contiguous row block starting at ``margin + delta(off)``.
    Every tap becomes one matmul over a view, with no copy.
    """

    def __init__(self, batch: int, spatial: tuple[int, ...]):
        self.batch = batch
        self.spatial = spatial
        self.padded = tuple(n + 2 for n in spatial)
        self.rows = batch * int(np.prod(self.padded))
        strides = [int(np.prod(self.padded[i + 1 :])) for i in range(len(spatial))]
        self.margin = sum(strides)
        self.deltas = [
            sum((o - 1) * st for o, st in zip(off, strides))
            for off in itertools.product(range(KERNEL), repeat=len(spatial))
        ]
        self.interior = (slice(None),) + (slice(1, -1),) * len(spatial) + (slice(None),)

    def pad(self, a: np.ndarray) -> np.ndarray:
        buf = np.zeros((self.rows + 2 * self.margin, a.shape[-1]), dtype=a.dtype)
        self.body(buf)[self.interior] = a
        return buf

    def body(self, buf: np.ndarray) -> np.ndarray:
        """View of the non-margin rows shaped as (batch, *padded, channels)."""
        return buf[self.margin : self.margin + self.rows].reshape((self.batch,) + self.padded + (buf.shape[-1],))

    def tap(self, buf: np.ndarray, i: int) -> np.ndarray:
        start = self.margin + self.deltas[i]
        return buf[start : start + self.rows]

    def crop(self, flat: np.ndarray) -> np.ndarray:
        """(rows, channels) over padded positions -> contiguous (batch, *spatial, channels)."""
        full = flat.reshape((self.batch,) + self.padded + (flat.shape[-1],))
        return np.ascontiguousarray(full[self.interior])


def conv(x: Tensor, weights: Tensor, bias: Tensor, dims: int) -> Tensor:
    """Stride-1, pad-1 convolution with kernel extent 3 along each spatial axis.

    Output has the same spatial extents as ``x`` and ``weights.shape[-1]``
    channels. The padded input is rebuilt in the backward pass rather than
    kept alive, which keeps long unrolls within memory.
    """
    if dims not in (1, 2):
        raise ValueError(f"conv: dims must be 1 or 2, got {dims}")
    if x.data.ndim != dims + 2:
        raise ValueError(f"conv: input rank {x.data.ndim} does not match dims={dims} (expected batch, spatial..., channels)")
    expected_w = (KERNEL,) * dims
    if weights.data.ndim != dims + 2 or weights.shape[:dims] != expected_w:
        raise ValueError(f"conv: weights shape {weights.shape} is not {expected_w} + (in_channels, filters)")
    in_ch = x.shape[-1]
    if weights.shape[dims] != in_ch:
        raise ValueError(
            f"conv: channel axis mismatch, input has {in_ch} channels but weights expect {weights.shape[dims]}"
        )
    filters = weights.shape[-1]
    if bias.shape != (filters,):
        raise ValueError(f"conv: bias axis mismatch, expected ({filters},) got {bias.shape}")

    geo = _PaddedGeometry(x.shape[0], x.shape[1:-1])
    xd = x.data
    taps = weights.data.reshape(-1, in_ch, filters)
    buf = geo.pad(xd)
    acc = geo.tap(buf, 0) @ taps[0]
    for i in range(1, len(taps)):
        acc += geo.tap(buf, i) @ taps[i]
    del buf
    out = geo.crop(acc)
    out += bias.data

    def grad_fn(g):
        gx = gw = gb = None
        if bias.requires_grad:
            gb = g.reshape(-1, filters).sum(axis=0)
        gp = geo.pad(g)[geo.margin : geo.margin + geo.rows]
        if weights.requires_grad:
            xbuf = geo.pad(xd)
            gw = np.stack([geo.tap(xbuf, i).T @ gp for i in range(len(taps))]).reshape(weights.shape)
        if x.requires_grad:
            gbuf = np.zeros((geo.rows + 2 * geo.margin, in_ch), dtype=g.dtype)
            for i in range(len(taps)):
                geo.tap(gbuf, i)[...] += gp @ taps[i].T
            gx = np.ascontiguousarray(geo.body(gbuf)[geo.interior])
        return gx, gw, gb

    return make_result(out, "conv", (x, weights, bias), grad_fn)


def log_softmax2(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy_per_position(logits: Tensor, target) -> Tensor:
    """Mean over batch and positions of ``-log softmax(logits)[target]``.

    ``logits`` has a trailing class axis of size 2; ``target`` matches the
    remaining axes and holds 0/1 labels.
    """
    t = np.asarray(target)
    if logits.shape[-1] != 2:
        raise ValueError(f"cross_entropy_per_position: expected 2 classes on the last axis, got {logits.shape[-1]}")
    if t.shape != logits.shape[:-1]:
        raise ValueError(f"cross_entropy_per_position: target shape {t.shape} vs logits {logits.shape[:-1]}")
    if t.size and not np.isin(t, (0, 1)).all():
        raise ValueError("cross_entropy_per_position: target values must be in {0, 1}")
    t = t.astype(np.intp)
    logp = log_softmax2(logits.data)
    picked = np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    count = t.size
    loss = np.asarray(-picked.mean(), dtype=logits.dtype)

    def grad_fn(g):
        probs = np.exp(logp)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, t[..., None], 1.0, axis=-1)
        return ((probs - onehot) * (g.reshape(()) / count),)

    return make_result(loss, "cross_entropy", (logits,), grad_fn)

"""Feed-forward, Deep Thinking and DT-Recall architectures.

A DT model is ``head(block^T(project(x)))`` where the residual ``block`` is
shared across iterations. With recall the block sees ``[phi, x]`` through a
one-layer adapter at every iteration. The feed-forward baseline stacks
``ff_depth`` residual blocks with distinct parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .tensor_core import Tensor, add, concat_channels, conv, no_grad, relu
from .tensor_core.ops import log_softmax2

TASK_GEOMETRY = {"prefix": (1, 1), "maze": (2, 3)}  # task -> (spatial dims, input channels)
CHECKPOINT_MAGIC = b"DTCK"
CHECKPOINT_VERSION = 1
BLOCK_CONVS = 4


def default_head(task: str, width: int) -> tuple[int, int, int]:
    if task == "prefix":
        return (width, max(width // 2, 1), 2)
    return (32, 8, 2)


@dataclass(frozen=True)
class ModelSpec:
    task: str
    width: int
    recall: bool = True
    max_iters: int = 30
    head_channels: tuple[int, ...] = ()
    feedforward: bool = False
    ff_depth: int = 30

    def __post_init__(self):
        if self.task not in TASK_GEOMETRY:
            raise ValueError(f"unknown task {self.task!r}")
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.feedforward and self.recall:
            raise ValueError("feed-forward models cannot use recall")
        if not self.head_channels:
            object.__setattr__(self, "head_channels", default_head(self.task, self.width))
        object.__setattr__(self, "head_channels", tuple(int(c) for c in self.head_channels))
        if len(self.head_channels) != 3 or self.head_channels[-1] != 2:
            raise ValueError(f"head plan must be three layers ending in 2 channels, got {self.head_channels}")

    @property
    def dims(self) -> int:
        return TASK_GEOMETRY[self.task][0]

    @property
    def in_channels(self) -> int:
        return TASK_GEOMETRY[self.task][1]

    @property
    def kind(self) -> str:
        if self.feedforward:
            return "ff"
        return "dt_recall" if self.recall else "dt"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_channels"] = list(self.head_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["head_channels"] = tuple(d.get("head_channels", ()))
        return cls(**d)


def _conv_shape(dims: int, cin: int, cout: int) -> tuple[int, ...]:
    return (3,) * dims + (cin, cout)


def parameter_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Every learnable array, in a fixed order, fully determined by ``spec``."""
    d, w = spec.dims, spec.width
    shapes: dict[str, tuple[int, ...]] = {}

    def add_conv(name, cin, cout):
        shapes[f"{name}.w"] = _conv_shape(d, cin, cout)
        shapes[f"{name}.b"] = (cout,)

    add_conv("project", spec.in_channels, w)
    if spec.recall:
        add_conv("recall", w + spec.in_channels, w)
    blocks = spec.ff_depth if spec.feedforward else 1
    for j in range(blocks):
        prefix = f"block{j}" if spec.feedforward else "block"
        for i in range(BLOCK_CONVS):
            add_conv(f"{prefix}.{i}", w, w)
    cin = w
    for i, cout in enumerate(spec.head_channels):
        add_conv(f"head.{i}", cin, cout)
        cin = cout
    return shapes


def init_parameters(spec: ModelSpec, seed: int) -> dict[str, Tensor]:
    """Uniform init scaled by fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = np.random.default_rng(seed)
    shapes = parameter_shapes(spec)
    params = {}
    for name, shape in shapes.items():
        layer = name.rsplit(".", 1)[0]
        fan_in = int(np.prod(shapes[f"{layer}.w"][:-1]))
        bound = 1.0 / np.sqrt(fan_in)
        data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


@dataclass
class ModelState:
    spec: ModelSpec
    params: dict[str, Tensor]
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, spec: ModelSpec, seed: int = 0) -> "ModelState":
        return cls(spec, init_parameters(spec, seed))

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for k, arr in snap.items():
            self.params[k].data = np.array(arr, dtype=np.float32, copy=True)


@dataclass
class IterationTrace:
    """Per-iteration features, logits and confidence scores (iterations 1..T)."""

    features: list[np.ndarray] = field(default_factory=list)
    logits: list[np.ndarray] = field(default_factory=list)
    confidences: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.logits)

    def predictions(self, t: int) -> np.ndarray:
        """Decoded labels after iteration ``t`` (1-based)."""
        return decode(self.logits[t - 1])


def as_input(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


def _conv_layer(state: ModelState, name: str, x: Tensor) -> Tensor:
    p = state.params
    return conv(x, p[f"{name}.w"], p[f"{name}.b"], state.spec.dims)


def _check_input(state: ModelState, x: Tensor) -> None:
    spec = state.spec
    if x.data.ndim != spec.dims + 2:
        raise ValueError(f"input rank {x.data.ndim}, expected batch + {spec.dims} spatial + channels")
    if x.shape[-1] != spec.in_channels:
        raise ValueError(f"input has {x.shape[-1]} channels, {spec.task} models take {spec.in_channels}")


def _check_features(state: ModelState, phi: Tensor, x: Tensor) -> None:
    if phi.shape[-1] != state.spec.width:
        raise ValueError(f"features have {phi.shape[-1]} channels, model width is {state.spec.width}")
    if phi.shape[:-1] != x.shape[:-1]:
        raise ValueError(f"feature extents {phi.shape[:-1]} do not match input extents {x.shape[:-1]}")


def project(state: ModelState, x) -> Tensor:
    x = as_input(x)
    _check_input(state, x)
    return relu(_conv_layer(state, "project", x))


def residual_block(state: ModelState, phi: Tensor, prefix: str = "block") -> Tensor:
    h = relu(_conv_layer(state, f"{prefix}.0", phi))
    h = relu(add(_conv_layer(state, f"{prefix}.1", h), phi))
    g = relu(_conv_layer(state, f"{prefix}.2", h))
    return relu(add(_conv_layer(state, f"{prefix}.3", g), h))


def recur_step(state: ModelState, phi: Tensor, x, block: str = "block") -> Tensor:
    """One application of the recurrent module (with recall if the spec has it)."""
    x = as_input(x)
    _check_features(state, phi, x)
    if state.spec.recall:
        phi = relu(_conv_layer(state, "recall", concat_channels(phi, x)))
    return residual_block(state, phi, block)


def head(state: ModelState, phi: Tensor) -> Tensor:
    h = relu(_conv_layer(state, "head.0", phi))
    h = relu(_conv_layer(state, "head.1", h))
    return _conv_layer(state, "head.2", h)


def iterate(state: ModelState, phi: Tensor, x, iters: int) -> Iterator[Tensor]:
    """Yield features after each of ``iters`` further recurrent applications."""
    x = as_input(x)
    if iters < 1:
        raise ValueError(f"iteration count must be >= 1, got {iters}")
    if state.spec.feedforward:
        if iters != state.spec.ff_depth:
            raise ValueError(f"feed-forward models run exactly {state.spec.ff_depth} blocks")
        for j in range(iters):
            phi = recur_step(state, phi, x, block=f"block{j}")
            yield phi
        return
    for _ in range(iters):
        phi = recur_step(state, phi, x)
        yield phi


def decode(logits: np.ndarray) -> np.ndarray:
    return (logits[..., 1] > logits[..., 0]).astype(np.uint8)


def confidence(logits) -> np.ndarray:
    """Mean over positions of the softmax probability of the argmax class, per example."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    probs = np.exp(log_softmax2(arr.astype(np.float64)))
    top = probs.max(axis=-1)
    return top.reshape(top.shape[0], -1).mean(axis=1)


def _record(state: ModelState, phis: Iterator[Tensor], keep_features: bool) -> IterationTrace:
    trace = IterationTrace()
    for phi in phis:
        logits = head(state, phi).data
        if keep_features:
            trace.features.append(phi.data)
        trace.logits.append(logits)
        trace.confidences.append(confidence(logits))
    return trace


def forward_from(state: ModelState, phi_start: Tensor, x, iters: int, keep_features: bool = True) -> IterationTrace:
    """Resume the recurrence from arbitrary features, recording every iteration."""
    x = as_input(x)
    _check_features(state, phi_start, x)
    if iters < 1:
        raise ValueError(f"iteration count must be >= 1, got {iters}")
    return _record(state, iterate(state, phi_start, x, iters), keep_features)


def forward(state: ModelState, x, iters: int | None = None, record: bool = False, keep_features: bool = True):
    """Run the model for ``iters`` iterations.

    With ``record`` the head is applied after every iteration and an
    ``IterationTrace`` is returned; otherwise only the final logits Tensor
    (still attached to the graph when gradients are enabled).
    """
    spec = state.spec
    if iters is None:
        iters = spec.ff_depth if spec.feedforward else spec.max_iters
    if iters < 1:
        raise ValueError(f"iteration count must be >= 1, got {iters}")
    x = as_input(x)
    phi = project(state, x)
    if record:
        return _record(state, iterate(state, phi, x, iters), keep_features)
    for phi in iterate(state, phi, x, iters):
        pass
    return head(state, phi)


def stream_predictions(state: ModelState, x, iters: int, phi: Tensor | None = None,
                       on_features: Callable[[int, np.ndarray], None] | None = None) -> Iterator[np.ndarray]:
    """Gradient-free generator of decoded outputs after each iteration.

    Memory stays constant in ``iters``; ``on_features`` sees every phi_t.
    """
    x = as_input(x)
    with no_grad():
        if phi is None:
            phi = project(state, x)
        for t, phi_t in enumerate(iterate(state, phi, x, iters), start=1):
            if on_features is not None:
                on_features(t, phi_t.data)
            yield decode(head(state, phi_t).data)


def save_checkpoint(state: ModelState, path) -> None:
    blob = json.dumps({"spec": state.spec.to_dict(), "meta": state.meta}, sort_keys=True).encode()
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<HI", CHECKPOINT_VERSION, len(blob))
    out += blob
    for name, p in state.params.items():
        nb = name.encode()
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        out += struct.pack("<HB", len(nb), arr.ndim) + nb
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> ModelState:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    version, blen = struct.unpack_from("<HI", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    pos = 10
    header = json.loads(raw[pos : pos + blen].decode())
    pos += blen
    spec = ModelSpec.from_dict(header["spec"])
    expected = parameter_shapes(spec)
    params = {}
    while pos < len(raw):
        nlen, rank = struct.unpack_from("<HB", raw, pos)
        pos += 3
        name = raw[pos : pos + nlen].decode()
        pos += nlen
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        size = int(np.prod(shape)) * 4
        if pos + size > len(raw):
            raise ValueError(f"{path}: truncated parameter {name}")
        data = np.frombuffer(raw, dtype="<f4", count=size // 4, offset=pos).reshape(shape)
        pos += size
        params[name] = Tensor(data.astype(np.float32), requires_grad=True, name=name)
    if {k: v.shape for k, v in params.items()} != expected:
        raise ValueError(f"{path}: parameter set does not match the stored model spec")
    return ModelState(spec, {k: params[k] for k in expected}, header.get("meta", {}))

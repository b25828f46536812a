"""Extrapolation sweeps, test-time interventions and convergence diagnostics.

Every intervention follows the same recipe: run the clean input for ``t``
iterations, edit the features and/or the input, then resume the recurrence
and score each further iteration against the post-intervention target.
Offsets are counted from the intervention: ``j = 0`` scores the head applied
to the (edited) iteration-``t`` features, ``j`` scores iteration ``t + j``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .models import IterationTrace, ModelState, as_input, decode, head, iterate, project
from .problems import MazeInstance, encode_bits, move_end_toward_start, prefix_sum_target
from .tensor_core import Tensor, no_grad

RECOVERY_CAP = 500
NOT_RECOVERED = "did not recover"
SUMMARY_FORMAT_VERSION = 1
NOISE_STREAM = 0x5EED


@dataclass
class SweepResult:
    model_id: str
    difficulty: int | None
    curve: np.ndarray
    peak_acc: float = field(init=False)
    peak_iter: int = field(init=False)

    def __post_init__(self):
        self.curve = np.asarray(self.curve, dtype=np.float64)
        if self.curve.size == 0:
            raise ValueError("empty accuracy curve")
        i = int(np.argmax(self.curve))
        self.peak_acc = float(self.curve[i])
        self.peak_iter = i + 1

    def at(self, t: int) -> float:
        return float(self.curve[t - 1])

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "difficulty": self.difficulty,
            "peak_acc": self.peak_acc,
            "peak_iter": self.peak_iter,
            "final_acc": float(self.curve[-1]),
            "iterations": len(self.curve),
        }


@dataclass
class PerturbationReport:
    """Accuracy at offsets 0..len(curve)-1 after the intervention at iteration ``t``.

    ``recovery[i]`` is the first offset at which example ``i`` is exactly
    right, or None when it never is within the budget.
    """

    kind: str
    t: int
    curve: np.ndarray
    recovery: list[int | None]
    note: str = ""
    logits: list[np.ndarray] | None = None

    @property
    def recovered_fraction(self) -> float:
        return sum(r is not None for r in self.recovery) / max(len(self.recovery), 1)

    @property
    def peak_acc(self) -> float:
        return float(np.max(self.curve))

    @property
    def final_acc(self) -> float:
        return float(self.curve[-1])

    def recovery_times(self) -> list[int | str]:
        return [NOT_RECOVERED if r is None else r for r in self.recovery]

    def summary(self) -> dict:
        done = [r for r in self.recovery if r is not None]
        return {
            "kind": self.kind,
            "t": self.t,
            "peak_acc": self.peak_acc,
            "final_acc": self.final_acc,
            "recovered_fraction": self.recovered_fraction,
            "median_recovery": float(np.median(done)) if done else NOT_RECOVERED,
            "note": self.note,
        }


def _batches(n: int, size: int):
    for i in range(0, n, size):
        yield slice(i, min(i + size, n))


def _matches(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    pred = decode(logits).reshape(len(logits), -1)
    return np.all(pred == targets.reshape(len(targets), -1), axis=1)


def iteration_sweep(state: ModelState, inputs, targets, t_max: int, model_id: str = "",
                    difficulty: int | None = None, batch_size: int = 250) -> SweepResult:
    """Exact-match accuracy after every iteration 1..t_max."""
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    hits = np.zeros(t_max, dtype=np.int64)
    with no_grad():
        for sl in _batches(len(inputs), batch_size):
            x = as_input(inputs[sl])
            y = targets[sl]
            phi = project(state, x)
            for t, phi in enumerate(iterate(state, phi, x, t_max)):
                hits[t] += int(_matches(head(state, phi).data, y).sum())
    return SweepResult(model_id, difficulty, hits / max(len(inputs), 1))


def max_confidence_exit(trace: IterationTrace) -> tuple[np.ndarray, np.ndarray]:
    """Per example, the 1-based iteration of highest confidence and its decoded output."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    conf = np.stack(trace.confidences)
    best = np.argmax(conf, axis=0)
    logits = np.stack(trace.logits)
    chosen = logits[best, np.arange(logits.shape[1])]
    return best + 1, decode(chosen)


def run_features(state: ModelState, x, t: int) -> Tensor:
    """phi_t for a clean input (phi_0 is the projection)."""
    x = as_input(x)
    with no_grad():
        phi = project(state, x)
        if t > 0:
            for phi in iterate(state, phi, x, t):
                pass
    return phi


def intervene(state: ModelState, x_before, t: int, x_after, targets_after, kind: str,
              edit: Callable[[np.ndarray], np.ndarray] | None = None, extra: int = RECOVERY_CAP,
              stop_when_recovered: bool = False, keep_logits: bool = False, note: str = "") -> PerturbationReport:
    """Generic intervention: phi_t from ``x_before``, edit it, resume on ``x_after``."""
    if t < 0:
        raise ValueError("intervention iteration must be >= 0")
    if extra < 0:
        raise ValueError("extra iterations must be >= 0")
    x_after = as_input(x_after)
    phi = run_features(state, x_before, t)
    if edit is not None:
        phi = Tensor(edit(phi.data.copy()))
    targets_after = np.asarray(targets_after)
    recovery = np.full(len(targets_after), -1, dtype=np.int64)
    curve, kept = [], []

    def score(j, logits):
        ok = _matches(logits, targets_after)
        recovery[ok & (recovery < 0)] = j
        curve.append(float(ok.mean()))
        if keep_logits:
            kept.append(logits)

    with no_grad():
        score(0, head(state, phi).data)
        if extra > 0 and not (stop_when_recovered and np.all(recovery >= 0)):
            for j, phi in enumerate(iterate(state, phi, x_after, extra), start=1):
                score(j, head(state, phi).data)
                if stop_when_recovered and np.all(recovery >= 0):
                    break
    return PerturbationReport(
        kind, t, np.asarray(curve), [None if r < 0 else int(r) for r in recovery], note,
        kept if keep_logits else None,
    )


def _input_note(state: ModelState) -> str:
    return "" if state.spec.recall else "input unused after projection in a non-recall model"


def perturb_features_noise(state: ModelState, x, targets, t: int, sigma: float = 1.0, mu: float = 0.0,
                           seed: int = 0, **kw) -> PerturbationReport:
    """Add i.i.d. N(mu, sigma^2) to phi_t; the noise stream depends only on ``seed``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    rng = np.random.default_rng([NOISE_STREAM, seed])

    def edit(phi):
        return phi + rng.normal(mu, sigma, size=phi.shape).astype(phi.dtype)

    return intervene(state, x, t, x, targets, "noise", edit, **kw)


def perturb_features_zero(state: ModelState, x, targets, t: int, **kw) -> PerturbationReport:
    if t < 1:
        raise ValueError("t must be >= 1")
    return intervene(state, x, t, x, targets, "zeros", np.zeros_like, **kw)


def perturb_input_bitflip(state: ModelState, bits, index, t: int, **kw) -> PerturbationReport:
    """Flip ``bits[:, index]`` (scalar or one index per example) after t iterations."""
    bits = np.asarray(bits, dtype=np.uint8)
    idx = np.broadcast_to(np.asarray(index), (len(bits),))
    if np.any(idx < 0) or np.any(idx >= bits.shape[1]):
        raise ValueError(f"flip index out of range for length {bits.shape[1]}")
    flipped = bits.copy()
    flipped[np.arange(len(bits)), idx] ^= 1
    return intervene(state, encode_bits(bits), t, encode_bits(flipped), prefix_sum_target(flipped),
                     "bit_flip", note=_input_note(state), **kw)


def perturb_maze_endpoint(state: ModelState, mazes: list[MazeInstance], t: int, steps: int = 2,
                          **kw) -> PerturbationReport:
    """Move each end ``steps`` cells toward its start after t iterations."""
    moved = [move_end_toward_start(m, steps) for m in mazes]
    x = np.stack([m.image for m in mazes])
    return intervene(state, x, t, np.stack([m.image for m in moved]), np.stack([m.target for m in moved]),
                     "endpoint_move", note=_input_note(state), **kw)


def swap_features(state: ModelState, x_a, targets_a, x_b, t: int, **kw) -> PerturbationReport:
    """Run B for t iterations, then resume with A as the input; scored on A."""
    x_a, x_b = np.asarray(x_a), np.asarray(x_b)
    if x_a.shape != x_b.shape:
        raise ValueError(f"swap needs equal shapes, got {x_a.shape} and {x_b.shape}")
    return intervene(state, x_b, t, x_a, targets_a, "feature_swap", note=_input_note(state), **kw)


def delta_phi(features) -> np.ndarray:
    """||phi_n - phi_{n-1}|| over consecutive entries of a feature sequence."""
    if isinstance(features, IterationTrace):
        features = features.features
    if len(features) < 2:
        raise ValueError("need at least two feature maps")
    return np.array([
        float(np.linalg.norm(np.asarray(b, np.float64) - np.asarray(a, np.float64)))
        for a, b in zip(features, features[1:])
    ])


def delta_phi_run(state: ModelState, x, iters: int) -> np.ndarray:
    """Delta-phi for iterations 1..iters, starting from the projection, in constant memory."""
    x = as_input(x)
    out = np.empty(iters)
    with no_grad():
        prev = project(state, x)
        for n, phi in enumerate(iterate(state, prev, x, iters)):
            out[n] = np.linalg.norm(phi.data.astype(np.float64) - prev.data)
            prev = phi
    return out


def delta_phi_on_noise(state: ModelState, size, iters: int, count: int = 1, seed: int = 0) -> np.ndarray:
    """Delta-phi on inputs drawn uniformly from [0, 1] per channel and position."""
    if isinstance(size, int):
        size = (size,) * state.spec.dims
    rng = np.random.default_rng([NOISE_STREAM, seed, 1])
    x = rng.random((count, *size, state.spec.in_channels)).astype(np.float32)
    return delta_phi_run(state, x, iters)


def quartile_medians(seq) -> tuple[float, float]:
    seq = np.asarray(seq)
    q = max(len(seq) // 4, 1)
    return float(np.median(seq[:q])), float(np.median(seq[-q:]))


def write_curve_csv(path, columns: dict[str, np.ndarray], config_hash: str) -> None:
    """``iteration`` plus the given columns; the first line carries the config hash."""
    names = list(columns)
    n = len(next(iter(columns.values())))
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash} format_version={SUMMARY_FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", *names])
        for i in range(n):
            w.writerow([i + 1, *(repr(float(columns[k][i])) for k in names)])


def read_curve_csv(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path) as fh:
        first = fh.readline()
        meta = dict(kv.split("=", 1) for kv in first.lstrip("# ").split())
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}
    return meta, cols


def write_summary(path, payload: dict, config_hash: str) -> None:
    doc = {"format_version": SUMMARY_FORMAT_VERSION, "config_hash": config_hash, **payload}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def read_summary(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != SUMMARY_FORMAT_VERSION:
        raise ValueError(f"{path}: summary format {doc.get('format_version')}, expected {SUMMARY_FORMAT_VERSION}")
    return doc


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")

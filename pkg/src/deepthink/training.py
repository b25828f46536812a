"""Incremental-progress training, validation and checkpoint selection."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .models import ModelState, as_input, decode, forward, iterate, project, head, save_checkpoint
from .tensor_core import (
    LrSchedule,
    OptimizerState,
    Tensor,
    add,
    backward,
    cross_entropy_per_position,
    detach,
    no_grad,
    optimizer_step,
    scale,
)

log = logging.getLogger(__name__)

CONVERGENCE_THRESHOLD = 0.99
DEFAULT_BATCH = {"prefix": 128, "maze": 32}
METRICS_FILE = "metrics.jsonl"
RECORD_FILE = "record.json"
BEST_CHECKPOINT = "best.ckpt"


@dataclass
class TrainConfig:
    max_iters: int = 30
    alpha: float = 1.0
    optimizer: str = "adam"
    lr: float = 1e-3
    decay_epochs: tuple[int, ...] = ()
    decay_factor: float = 1.0
    warmup: int = 0
    epochs: int = 10
    clip: float | None = None
    batch_size: int = 128
    seed: int = 0
    force_n_zero: bool = False
    weight_decay: float = 2e-4
    val_fraction: float = 0.2
    # loss weighted by iteration count; accepted in configs, not implemented
    runtime_penalty: bool = False

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.runtime_penalty:
            raise NotImplementedError("the run-time penalty loss variant is not implemented")

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, self.warmup, self.decay_epochs, self.decay_factor)

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(kind=self.optimizer, lr=self.lr, weight_decay=self.weight_decay, clip=self.clip)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decay_epochs"] = list(self.decay_epochs)
        return d


@dataclass
class RunRecord:
    config: dict
    model: dict
    datasets: dict
    config_hash: str
    epochs: list[dict] = field(default_factory=list)
    best_checkpoint: str | None = None
    best_epoch: int | None = None
    best_val_acc: float = -1.0
    final_train_acc: float = 0.0
    converged: bool = False
    failed: bool = False
    adam_defaults: dict = field(default_factory=lambda: {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text()))


def config_hash(*parts: dict) -> str:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def is_converged(train_acc: float) -> bool:
    return train_acc >= CONVERGENCE_THRESHOLD


def sample_progressive_split(m: int, rng: np.random.Generator, force_n_zero: bool = False) -> tuple[int, int]:
    """Draw (n, k) with n ~ U{0..m-1} and k ~ U{1..m-n}; n is pinned to 0 for the ablation."""
    n = 0 if force_n_zero else int(rng.integers(0, m))
    k = int(rng.integers(1, m - n + 1))
    return n, k


def progressive_output(state: ModelState, x, n: int, k: int) -> Tensor:
    """Logits after ``k`` tracked iterations resumed from gradient-free features phi_n.

    For n == 0 the projection itself stays in the graph.
    """
    x = as_input(x)
    if n > 0:
        with no_grad():
            phi = project(state, x)
            for phi in iterate(state, phi, x, n):
                pass
        phi = detach(phi)
    else:
        phi = project(state, x)
    for phi in iterate(state, phi, x, k):
        pass
    return head(state, phi)


def progressive_loss_step(state: ModelState, batch, config: TrainConfig, rng: np.random.Generator) -> dict:
    """Build the mixed objective for one batch and backpropagate it.

    Gradients accumulate into the parameters; callers zero them first.
    Returns the scalar loss values and the sampled (n, k).
    """
    x, y = batch
    x = as_input(x)
    m, alpha = config.max_iters, config.alpha
    info: dict = {"n": None, "k": None, "loss_max_iters": None, "loss_progressive": None}
    if state.spec.feedforward and alpha > 0:
        raise ValueError("progressive loss needs a recurrent model")
    terms = []
    if alpha > 0:
        n, k = sample_progressive_split(m, rng, config.force_n_zero)
        prog = cross_entropy_per_position(progressive_output(state, x, n, k), y)
        info.update(n=n, k=k, loss_progressive=prog.item())
        terms.append((alpha, prog))
    if alpha < 1:
        iters = state.spec.ff_depth if state.spec.feedforward else m
        full = cross_entropy_per_position(forward(state, x, iters), y)
        info["loss_max_iters"] = full.item()
        terms.append((1.0 - alpha, full))
    if len(terms) == 1:
        total = terms[0][1]
    else:
        (a_prog, prog), (a_full, full) = terms
        total = add(scale(full, a_full), scale(prog, a_prog))
    backward(total)
    info["loss"] = total.item()
    return info


def predict(state: ModelState, inputs: np.ndarray, iters: int, batch_size: int = 500) -> np.ndarray:
    outs = []
    with no_grad():
        for i in range(0, len(inputs), batch_size):
            outs.append(decode(forward(state, inputs[i : i + batch_size], iters).data))
    return np.concatenate(outs)


def exact_match(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-example flag: every position correct."""
    p = predictions.reshape(len(predictions), -1)
    t = np.asarray(targets).reshape(len(targets), -1)
    return np.all(p == t, axis=1)


def exact_match_accuracy(state: ModelState, inputs: np.ndarray, targets: np.ndarray, iters: int,
                         batch_size: int = 500) -> float:
    if iters < 1:
        raise ValueError("iteration count must be >= 1")
    if len(inputs) == 0:
        return 0.0
    return float(exact_match(predict(state, inputs, iters, batch_size), targets).mean())


def split_train_val(count: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(count)
    n_val = int(round(count * fraction))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _eval_iters(state: ModelState, config: TrainConfig) -> int:
    return state.spec.ff_depth if state.spec.feedforward else config.max_iters


def train(state: ModelState, inputs: np.ndarray, targets: np.ndarray, config: TrainConfig,
          out_dir=None, datasets: dict | None = None) -> RunRecord:
    """Train in place; the best-validation parameters are loaded back into ``state`` on return."""
    if len(inputs) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = split_train_val(len(inputs), config.val_fraction, rng)
    x_tr, y_tr = inputs[train_idx], targets[train_idx]
    x_va, y_va = inputs[val_idx], targets[val_idx]
    schedule = config.schedule()
    opt = config.optimizer_state()
    T = _eval_iters(state, config)

    chash = config_hash(config.to_dict(), state.spec.to_dict(), datasets or {})
    record = RunRecord(config.to_dict(), state.spec.to_dict(), datasets or {}, chash)
    state.meta["config_hash"] = chash
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / METRICS_FILE).write_text("")
    best_snapshot = state.snapshot()

    for epoch in range(config.epochs):
        lr = schedule(epoch)
        order = rng.permutation(len(x_tr))
        losses = []
        for i in range(0, len(order), config.batch_size):
            idx = order[i : i + config.batch_size]
            state.zero_grad()
            info = progressive_loss_step(state, (x_tr[idx], y_tr[idx]), config, rng)
            if not math.isfinite(info["loss"]):
                losses.append(info["loss"])
                break
            optimizer_step(opt, state.params, schedule, epoch)
            losses.append(info["loss"])
        train_loss = float(np.mean(losses))
        if not math.isfinite(train_loss):
            record.failed = True
            log.warning("non-finite loss at epoch %d; stopping", epoch)
            _write_epoch(out, record, {"epoch": epoch, "lr": lr, "train_loss": None, "failed": True})
            break
        train_acc = exact_match_accuracy(state, x_tr, y_tr, T)
        val_acc = exact_match_accuracy(state, x_va, y_va, T) if len(x_va) else train_acc
        row = {"epoch": epoch, "lr": lr, "train_loss": train_loss, "train_acc": train_acc, "val_acc": val_acc}
        log.info("epoch %d lr %.2e loss %.5f train %.4f val %.4f", epoch, lr, train_loss, train_acc, val_acc)
        # ties go to the later epoch: a saturated validation set should not pin an undertrained model
        if val_acc >= record.best_val_acc:
            record.best_val_acc = val_acc
            record.best_epoch = epoch
            best_snapshot = state.snapshot()
            if out is not None:
                save_checkpoint(state, out / BEST_CHECKPOINT)
                record.best_checkpoint = BEST_CHECKPOINT
        record.final_train_acc = train_acc
        _write_epoch(out, record, row)

    record.converged = (not record.failed) and is_converged(record.final_train_acc)
    state.load_snapshot(best_snapshot)
    if out is not None:
        (out / RECORD_FILE).write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n")
    return record


def _write_epoch(out: Path | None, record: RunRecord, row: dict) -> None:
    row = dict(row, config_hash=record.config_hash)
    record.epochs.append(row)
    if out is not None:
        with open(out / METRICS_FILE, "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

"""Experiment orchestration: cached runs, alpha grids, hard-to-easy sweeps, reports."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..analysis import SweepResult, iteration_sweep, read_summary, write_curve_csv, write_summary
from ..models import ModelSpec, ModelState, load_checkpoint
from ..problems import DatasetFile, generate, load_dataset
from ..training import RECORD_FILE, RunRecord, TrainConfig, config_hash, train

log = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("train", "sweep", "perturb", "ablate-alpha", "ablate-width-depth", "hard-to-easy")


@dataclass
class DataRef:
    """A dataset either on disk or regenerated from its header fields."""

    task: str
    difficulty: int
    count: int
    seed: int
    path: str | None = None

    def load(self) -> DatasetFile:
        if self.path is not None:
            data = load_dataset(self.path)
            if (data.task, data.difficulty, data.seed) != (self.task, self.difficulty, self.seed):
                raise ValueError(f"{self.path} holds {data.task}/{data.difficulty}/seed {data.seed}, "
                                 f"expected {self.task}/{self.difficulty}/seed {self.seed}")
            return data
        return generate(self.task, self.difficulty, self.count, self.seed)

    def to_dict(self) -> dict:
        return {"task": self.task, "difficulty": self.difficulty, "count": self.count, "seed": self.seed}


@dataclass
class ExperimentPlan:
    kind: str
    model: ModelSpec
    train: TrainConfig
    seeds: list[int]
    out_dir: Path
    train_data: DataRef
    eval_data: list[DataRef] = field(default_factory=list)
    eval_iters: int = 100
    alphas: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if not self.seeds:
            raise ValueError("seed list is empty")
        for ref in [self.train_data, *self.eval_data]:
            if ref.path is not None and not Path(ref.path).is_file():
                raise FileNotFoundError(f"dataset not found: {ref.path}")
            if ref.task != self.model.task:
                raise ValueError(f"dataset task {ref.task!r} does not match model task {self.model.task!r}")


def run_name(spec: ModelSpec, cfg: TrainConfig) -> str:
    tag = "_n0" if cfg.force_n_zero else ""
    return f"{spec.task}_{spec.kind}_w{spec.width}_m{cfg.max_iters}_a{cfg.alpha:g}{tag}_s{cfg.seed}"


def train_run(spec: ModelSpec, cfg: TrainConfig, data: DataRef, out_dir, reuse: bool = True,
              loaded: DatasetFile | None = None) -> tuple[ModelState, RunRecord]:
    """Train one model into ``out_dir``; a finished run with the same config hash is reused."""
    out = Path(out_dir)
    datasets = {"train": data.to_dict()}
    expected = config_hash(cfg.to_dict(), spec.to_dict(), datasets)
    record_path = out / RECORD_FILE
    if reuse and record_path.is_file():
        record = RunRecord.load(record_path)
        if record.config_hash == expected and record.best_checkpoint:
            log.info("reusing %s", out)
            return load_checkpoint(out / record.best_checkpoint), record
    dataset = loaded if loaded is not None else data.load()
    state = ModelState.create(spec, cfg.seed)
    record = train(state, dataset.inputs(), dataset.targets(), cfg, out, datasets)
    return state, record


def sweep_run(state: ModelState, data: DataRef, t_max: int, out_dir, config_hash_: str,
              dataset: DatasetFile | None = None, reuse: bool = True) -> SweepResult:
    """Iteration sweep with a CSV curve and JSON summary, cached by (hash, dataset, t_max)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"sweep_{data.task}{data.difficulty}_T{t_max}"
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    if reuse and json_path.is_file():
        doc = read_summary(json_path)
        if doc["config_hash"] == config_hash_ and doc["dataset"] == data.to_dict():
            return SweepResult(doc["model_id"], data.difficulty, doc["curve"])
    dataset = dataset if dataset is not None else data.load()
    result = iteration_sweep(state, dataset.inputs(), dataset.targets(), t_max, state.spec.kind, data.difficulty)
    write_curve_csv(csv_path, {"accuracy": result.curve}, config_hash_)
    write_summary(json_path, {**result.to_dict(), "dataset": data.to_dict(), "curve": result.curve}, config_hash_)
    return result


def aggregate(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": int(arr.size)}


def run_alpha_grid(plan: ExperimentPlan) -> dict:
    """Train and sweep every (alpha, seed); aggregate peak accuracy over converged runs only."""
    if not plan.alphas:
        raise ValueError("alpha grid is empty")
    report: dict = {"eval": [r.to_dict() for r in plan.eval_data], "alphas": {}}
    for alpha in plan.alphas:
        runs = []
        for seed in plan.seeds:
            cfg = replace(plan.train, alpha=alpha, seed=seed)
            out = plan.out_dir / run_name(plan.model, cfg)
            state, record = train_run(plan.model, cfg, plan.train_data, out)
            peaks = {}
            for ref in plan.eval_data:
                res = sweep_run(state, ref, plan.eval_iters, out, record.config_hash)
                peaks[str(ref.difficulty)] = {"peak_acc": res.peak_acc, "peak_iter": res.peak_iter}
            runs.append({"seed": seed, "dir": out.name, "converged": record.converged,
                         "final_train_acc": record.final_train_acc, "peaks": peaks})
        kept = [r for r in runs if r["converged"]]
        if not kept:
            log.warning("alpha=%g: no converged runs", alpha)
        summary = {
            str(ref.difficulty): {
                "peak_acc": aggregate([r["peaks"][str(ref.difficulty)]["peak_acc"] for r in kept]),
                "peak_iter": aggregate([r["peaks"][str(ref.difficulty)]["peak_iter"] for r in kept]),
            }
            for ref in plan.eval_data
        }
        report["alphas"][f"{alpha:g}"] = {"runs": runs, "converged": len(kept), "summary": summary}
    return report


def run_hard_to_easy(state: ModelState, train_ref: DataRef, easier: list[DataRef], t_max: int, out_dir,
                     config_hash_: str) -> dict[int, SweepResult]:
    """Sweeps on the training difficulty and on easier sets, keyed by difficulty."""
    results = {train_ref.difficulty: sweep_run(state, train_ref, t_max, out_dir, config_hash_)}
    for ref in easier:
        if ref.difficulty > train_ref.difficulty:
            raise ValueError(f"difficulty {ref.difficulty} is harder than the training set")
        results[ref.difficulty] = sweep_run(state, ref, t_max, out_dir, config_hash_)
    return results


def collect_report(root) -> dict:
    """Scan run directories for records and sweep summaries; version mismatches abort."""
    root = Path(root)
    runs = []
    for record_path in sorted(root.rglob(RECORD_FILE)):
        run_dir = record_path.parent
        record = json.loads(record_path.read_text())
        sweeps = {}
        for s in sorted(run_dir.glob("sweep_*.json")):
            doc = read_summary(s)
            if doc["config_hash"] != record["config_hash"]:
                raise ValueError(f"{s}: config hash {doc['config_hash']} does not match run {record['config_hash']}")
            sweeps[s.stem] = {k: doc[k] for k in ("peak_acc", "peak_iter", "final_acc")}
        runs.append({
            "dir": str(run_dir.relative_to(root)),
            "model": record["model"],
            "alpha": record["config"]["alpha"],
            "seed": record["config"]["seed"],
            "converged": record["converged"],
            "failed": record["failed"],
            "final_train_acc": record["final_train_acc"],
            "sweeps": sweeps,
        })
    groups: dict = {}
    for r in runs:
        if not r["converged"]:
            continue
        key = f"{r['model']['task']}/{_kind(r['model'])}/w{r['model']['width']}/a{r['alpha']:g}"
        for name, s in r["sweeps"].items():
            groups.setdefault(key, {}).setdefault(name, []).append(s["peak_acc"])
    table = {k: {name: aggregate(v) for name, v in g.items()} for k, g in groups.items()}
    return {"runs": runs, "converged_peak_acc": table}


def _kind(model: dict) -> str:
    if model.get("feedforward"):
        return "ff"
    return "dt_recall" if model.get("recall") else "dt"


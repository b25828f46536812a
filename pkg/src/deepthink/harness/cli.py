"""Command-line entry point: ``python -m deepthink <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import analysis
from ..models import load_checkpoint
from ..problems import DatasetFormatError, generate, load_dataset, save_dataset
from ..training import RECORD_FILE
from .config import ConfigError, default_output_root, dump_config, load_config, split_config
from .plan import DataRef, collect_report, run_name, sweep_run, train_run

PERTURB_KINDS = ("noise", "zeros", "bitflip", "endpoint", "swap")


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"path not found: {p}")
    return p


def _data_ref(path: str) -> tuple[DataRef, object]:
    data = load_dataset(_existing(path))
    return DataRef(data.task, data.difficulty, data.count, data.seed, str(path)), data


def cmd_gen_data(args) -> None:
    difficulty = args.len if args.task == "prefix" else args.size
    if difficulty is None:
        raise UsageError("--len (prefix) or --size (maze) is required")
    data = generate(args.task, difficulty, args.count, args.seed)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(data, args.output)
    print(f"wrote {data.count} {args.task} instances (difficulty {difficulty}) to {args.output}")


def cmd_train(args) -> None:
    cfg = load_config(args.config, args.set or [])
    spec, train_cfg, data_cfg = split_config(cfg)
    if args.data is not None:
        ref, loaded = _data_ref(args.data)
    elif "train_data" in data_cfg:
        ref, loaded = _data_ref(data_cfg["train_data"])
    else:
        try:
            ref = DataRef(spec.task, data_cfg["train_difficulty"], data_cfg.get("train_count", 10_000),
                          data_cfg.get("data_seed", 0))
        except KeyError:
            raise UsageError("no training data: pass --data or set train_difficulty") from None
        loaded = None
    if ref.task != spec.task:
        raise UsageError(f"dataset task {ref.task!r} does not match model task {spec.task!r}")
    out = args.output or default_output_root() / run_name(spec, train_cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    _, record = train_run(spec, train_cfg, ref, out, reuse=not args.fresh, loaded=loaded)
    print(json.dumps({"dir": str(out), "config_hash": record.config_hash, "best_val_acc": record.best_val_acc,
                      "final_train_acc": record.final_train_acc, "converged": record.converged,
                      "failed": record.failed}))


def _config_hash_of(state) -> str:
    return state.meta.get("config_hash", "unknown")


def cmd_sweep(args) -> None:
    ckpt = _existing(args.checkpoint)
    state = load_checkpoint(ckpt)
    ref, data = _data_ref(args.data)
    out = args.output or ckpt.parent
    result = sweep_run(state, ref, args.iters, out, _config_hash_of(state), dataset=data, reuse=False)
    print(json.dumps(result.to_dict()))


def _perturb(args, state, data):
    x, y = data.inputs(), data.targets()
    kw = {"extra": args.extra}
    if args.kind == "noise":
        return analysis.perturb_features_noise(state, x, y, args.t, sigma=args.sigma, seed=args.seed, **kw)
    if args.kind == "zeros":
        return analysis.perturb_features_zero(state, x, y, args.t, **kw)
    if args.kind == "bitflip":
        if data.task != "prefix":
            raise UsageError("bitflip needs a prefix-sum dataset")
        idx = args.index if args.index is not None else np.arange(len(x)) % data.difficulty
        return analysis.perturb_input_bitflip(state, data.bits, idx, args.t, **kw)
    if args.kind == "endpoint":
        if data.task != "maze":
            raise UsageError("endpoint moves need a maze dataset")
        return analysis.perturb_maze_endpoint(state, data.mazes, args.t, **kw)
    perm = np.roll(np.arange(len(x)), 1)
    return analysis.swap_features(state, x, y, x[perm], args.t, **kw)


def cmd_perturb(args) -> None:
    ckpt = _existing(args.checkpoint)
    state = load_checkpoint(ckpt)
    _, data = _data_ref(args.data)
    report = _perturb(args, state, data)
    out = args.output or ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    stem = f"perturb_{args.kind}_t{args.t}"
    h = _config_hash_of(state)
    analysis.write_curve_csv(out / f"{stem}.csv", {"accuracy": report.curve}, h)
    analysis.write_summary(out / f"{stem}.json", {**report.summary(), "recovery": report.recovery_times()}, h)
    print(json.dumps(report.summary()))


def cmd_delta_phi(args) -> None:
    ckpt = _existing(args.checkpoint)
    state = load_checkpoint(ckpt)
    if args.data is not None:
        _, data = _data_ref(args.data)
        seq = analysis.delta_phi_run(state, data.inputs()[: args.count], args.iters)
        source = "data"
    elif args.noise_size is not None:
        seq = analysis.delta_phi_on_noise(state, args.noise_size, args.iters, args.count, args.seed)
        source = "noise"
    else:
        raise UsageError("pass --data or --noise-size")
    out = args.output or ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    h = _config_hash_of(state)
    analysis.write_curve_csv(out / f"delta_phi_{source}.csv", {"delta_phi": seq}, h)
    first, last = analysis.quartile_medians(seq)
    summary = {"source": source, "first_quartile_median": first, "last_quartile_median": last,
               "final": float(seq[-1]), "initial": float(seq[0])}
    analysis.write_summary(out / f"delta_phi_{source}.json", summary, h)
    print(json.dumps(summary))


def cmd_report(args) -> None:
    root = _existing(args.root)
    if not any(root.rglob(RECORD_FILE)):
        raise UsageError(f"no runs under {root}")
    report = collect_report(root)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.output:
        args.output.write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepthink", description="Recurrent extrapolation experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a dataset file")
    g.add_argument("--task", choices=("prefix", "maze"), required=True)
    g.add_argument("--len", type=int, help="bit-string length")
    g.add_argument("--size", type=int, help="maze side in cells")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", type=Path, required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("-c", "--config", type=Path)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    t.add_argument("--data", help="training dataset file")
    t.add_argument("-o", "--output", type=Path, help="run directory")
    t.add_argument("--fresh", action="store_true", help="retrain even if a matching run exists")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="accuracy at every iteration")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--iters", type=int, required=True)
    s.add_argument("-o", "--output", type=Path)
    s.set_defaults(func=cmd_sweep)

    q = sub.add_parser("perturb", help="intervene mid-run and track recovery")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--kind", choices=PERTURB_KINDS, required=True)
    q.add_argument("--t", type=int, default=50, help="intervention iteration")
    q.add_argument("--extra", type=int, default=analysis.RECOVERY_CAP)
    q.add_argument("--sigma", type=float, default=1.0)
    q.add_argument("--index", type=int, help="bit to flip (default: spread over positions)")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("-o", "--output", type=Path)
    q.set_defaults(func=cmd_perturb)

    d = sub.add_parser("delta-phi", help="feature change per iteration")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data")
    d.add_argument("--noise-size", type=int)
    d.add_argument("--iters", type=int, default=200)
    d.add_argument("--count", type=int, default=100)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("-o", "--output", type=Path)
    d.set_defaults(func=cmd_delta_phi)

    r = sub.add_parser("report", help="aggregate runs under a directory")
    r.add_argument("--root", default=str(default_output_root()))
    r.add_argument("-o", "--output", type=Path)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError, DatasetFormatError, FileNotFoundError, ValueError) as exc:
        print(f"deepthink {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0

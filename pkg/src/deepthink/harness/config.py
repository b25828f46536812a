"""Flat ``key = value`` experiment configs.

One key per line, ``#`` starts a comment. Values are parsed as int, float,
bool (true/false), ``none``, or a comma-separated list of those; anything
else stays a string. Later assignments win, so CLI overrides are simply
appended after the file contents.
"""

from __future__ import annotations

import os
from dataclasses import fields
from pathlib import Path

from ..models import ModelSpec
from ..training import TrainConfig

OUTPUT_ROOT_ENV = "DEEPTHINK_OUT"

MODEL_KEYS = {f.name for f in fields(ModelSpec)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
DATA_KEYS = {"train_difficulty", "train_count", "data_seed", "train_data", "eval_difficulty", "eval_count",
             "eval_seed", "eval_iters"}
KNOWN_KEYS = MODEL_KEYS | TRAIN_KEYS | DATA_KEYS
LIST_KEYS = {"decay_epochs", "head_channels"}


class ConfigError(ValueError):
    pass


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_value(key: str, text: str):
    text = text.strip()
    if key in LIST_KEYS or "," in text:
        return [_scalar(t.strip()) for t in text.split(",") if t.strip()]
    return _scalar(text)


def parse_assignments(lines, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = parse_value(key, value)
    return out


def load_config(path=None, overrides=()) -> dict:
    cfg = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cfg.update(parse_assignments(p.read_text().splitlines(), str(p)))
    cfg.update(parse_assignments(overrides, "<override>"))
    return cfg


def dump_config(cfg: dict) -> str:
    def fmt(v):
        if isinstance(v, (list, tuple)):
            return ",".join(fmt(x) for x in v)
        if v is None:
            return "none"
        if isinstance(v, bool):
            return str(v).lower()
        return str(v)

    return "".join(f"{k} = {fmt(cfg[k])}\n" for k in sorted(cfg))


def split_config(cfg: dict) -> tuple[ModelSpec, TrainConfig, dict]:
    """Build (ModelSpec, TrainConfig, data settings); ``max_iters`` feeds both."""
    try:
        model_args = {k: v for k, v in cfg.items() if k in MODEL_KEYS}
        if "head_channels" in model_args:
            model_args["head_channels"] = tuple(model_args["head_channels"])
        train_args = {k: v for k, v in cfg.items() if k in TRAIN_KEYS}
        if "decay_epochs" in train_args:
            train_args["decay_epochs"] = tuple(train_args["decay_epochs"] or ())
        spec = ModelSpec(**model_args)
        train = TrainConfig(**train_args)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return spec, train, {k: v for k, v in cfg.items() if k in DATA_KEYS}

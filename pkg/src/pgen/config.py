"""Run configuration: YAML files checked against a fixed key tree.

Every section has a closed set of keys. A subtree carrying a ``class`` key
selects a plugin; its other keys are checked by that plugin's factory when
it is built, so they may differ from the defaults here.
"""
from __future__ import annotations

import copy
import os
import zlib
from typing import Any

import yaml

from .errors import ConfigError

DEFAULTS: dict[str, Any] = {
    "seed": 1,
    "preprocess": {
        "corpus": [],
        "bpe_merges": 0,
        "min_count": 1,
        "bpe_path": "work/bpe.txt",
        "vocab_path": "work/vocab.txt",
    },
    "data": {
        "train": {"class": "parallel", "src": "train.src", "tgt": "train.tgt"},
        "src_field": "src",
        "tgt_field": "tgt",
        "on_error": "abort",
    },
    "sampler": {"class": "token_budget", "max_tokens": 1024},
    "dataloader": {"buffer_size": 1024, "num_workers": 1, "worker_id": 0, "prefetch": False},
    "model": {"class": "transformer", "d_model": 32, "n_heads": 4, "n_layers": 2, "d_ff": 64},
    "criterion": {"class": "cross_entropy", "epsilon": 0.1},
    "optimizer": {"class": "adam", "beta1": 0.9, "beta2": 0.98, "eps": 1e-9, "clip_norm": 1.0},
    "trainer": {
        "lr": {"class": "noam", "d_model": 32, "warmup": 200},
        "max_steps": 1000,
        "accumulate": 1,
        "eval_interval": 0,
        "patience": 0,
        "assess_by": None,
        "avg_k": 5,
        "save_dir": "work",
        "log_interval": 100,
        "resume": None,
    },
    "evaluator": {"datasets": {}, "metrics": ["bleu"], "batch_size": 32},
    "search": {"class": "greedy", "max_len": 200},
    "generate": {
        "input": {"class": "text", "path": "test.src", "field": "src"},
        "output": "work/hyp.txt",
        "checkpoint": "work/ckpt.last.bin",
        "batch_size": 32,
    },
    "evaluate": {"checkpoint": "work/ckpt.last.bin", "output": "work/scores.json"},
}

# subtrees whose keys are user-chosen names
_FREE_MAPS = {("evaluator", "datasets")}


def _is_plugin(node: Any) -> bool:
    return isinstance(node, dict) and "class" in node


def merge(base: dict, user: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in user.items():
        where = ".".join(path + (str(key),))
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        default = base[key]
        if _is_plugin(default) or path + (key,) in _FREE_MAPS or default is None:
            out[key] = copy.deepcopy(value)
        elif isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a mapping")
            out[key] = merge(default, value, path + (key,))
        else:
            out[key] = _coerce(where, default, value)
    return out


def _coerce(where: str, default: Any, value: Any) -> Any:
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if isinstance(value, (dict, list)):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return str(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return value
    return value


def load(path: str) -> dict:
    """Read a YAML config file and merge it over :data:`DEFAULTS`."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            user = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return merge(DEFAULTS, user)


def apply_override(config: dict, assignment: str) -> None:
    """Apply ``a.b.c=value`` in place; the value is typed by the existing key."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key.path=value, got {assignment!r}")
    parts = key.split(".")
    node = config
    for i, p in enumerate(parts[:-1]):
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config key {'.'.join(parts[: i + 1])!r} in override")
        node = node[p]
    last = parts[-1]
    try:
        value = yaml.safe_load(raw) if raw else ""
    except yaml.YAMLError:
        value = raw
    if not isinstance(node, dict):
        raise ConfigError(f"cannot set {key!r}: parent is not a mapping")
    if last not in node:
        if _is_plugin(node) or tuple(parts[:-1]) in _FREE_MAPS:
            node[last] = value
            return
        raise ConfigError(f"unknown config key {key!r} in override")
    current = node[last]
    if _is_plugin(current) and _is_number(value):
        node[last] = float(value)  # a constant in place of a schedule
        return
    if isinstance(current, dict) and not isinstance(value, dict):
        kind = "a number or a mapping" if _is_plugin(current) else "a mapping"
        raise ConfigError(f"{key} expects {kind}, got {raw!r}")
    node[last] = _coerce(key, current, value)


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def dump(config: dict) -> str:
    return yaml.safe_dump(config, sort_keys=False)


def derive_seed(seed: int, component: str) -> int:
    """Per-component seed: global seed plus a stable hash of the name."""
    return (int(seed) + zlib.crc32(component.encode("utf-8"))) % (2**31)

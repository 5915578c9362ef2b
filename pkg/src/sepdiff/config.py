"""Run configuration: one JSON file per run, fully resolved and written back.

Flags override file values; every command writes the resolved configuration
next to its outputs so a run is reproducible from that file alone.
"""

from __future__ import annotations

import copy
import json
import os

from .errors import ConfigurationError, SchemaError
from .guidance import GuidanceSchedule, ReconsLossConfig
from .schedule import NoiseSchedule, make_linear_schedule

__all__ = [
    "DEFAULT_CONFIG",
    "load_config",
    "merge_config",
    "write_resolved",
    "output_root",
    "build_schedule",
    "build_guidance",
    "build_loss_config",
]

DEFAULT_CONFIG = {
    "seed": 0,
    "sample_rate": 16000,
    "clip_seconds": 4.0,
    "schedule": {"steps": 200, "beta_min": 1e-4, "beta_max": 2e-2},
    "guidance": {
        "kind": "hybrid",
        "const_value": 1.0,
        "s_floor": 0.002,
        "sharpness": 1000.0,
        "norm_scope": "per-source",
    },
    "loss": {
        "lambda_time": 1.0,
        "lambda_group": 0.05,
        "lambda_stft": 0.1,
        "group_count": 8,
        "stft_window": 510,
        "stft_hop": 255,
    },
    "gradient_mode": "backprop",
    "init": {"kind": "unified", "t_star": 150},
    "prior": {"kind": "toy-denoiser", "checkpoints": [], "labels": None},
    "train": {
        "steps": 2000,
        "batch_size": 8,
        "learning_rate": 1e-3,
        "net": {"channels": 16, "kernel": 9, "embed_dim": 32, "hidden_dim": 64},
    },
}


def merge_config(base: dict, override: dict | None) -> dict:
    """Recursive dict merge; override wins, missing keys keep defaults."""
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | None) -> dict:
    """Defaults merged with the given JSON file (if any)."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: config root must be an object")
    return merge_config(DEFAULT_CONFIG, doc)


def write_resolved(config: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(config, f, indent=2, sort_keys=True)
        f.write("\n")


def output_root() -> str:
    return os.environ.get("SEPDIFF_OUTPUT_ROOT", "runs")


def build_schedule(config: dict) -> NoiseSchedule:
    s = config["schedule"]
    return make_linear_schedule(int(s["steps"]), float(s["beta_min"]), float(s["beta_max"]))


def build_guidance(config: dict) -> GuidanceSchedule:
    g = config["guidance"]
    return GuidanceSchedule(
        kind=g["kind"],
        const_value=float(g.get("const_value", 1.0)),
        s_floor=float(g.get("s_floor", 0.002)),
        sharpness=float(g.get("sharpness", 1000.0)),
        norm_scope=g.get("norm_scope", "per-source"),
    )


def build_loss_config(config: dict) -> ReconsLossConfig:
    l = config["loss"]
    return ReconsLossConfig(
        lambda_time=float(l["lambda_time"]),
        lambda_group=float(l["lambda_group"]),
        lambda_stft=float(l["lambda_stft"]),
        group_count=int(l["group_count"]),
        stft_window=int(l["stft_window"]),
        stft_hop=int(l["stft_hop"]),
    )


def validate_t_star(config: dict) -> int:
    t_star = int(config["init"]["t_star"])
    steps = int(config["schedule"]["steps"])
    if not 0 < t_star <= steps:
        raise ConfigurationError(f"t_star {t_star} outside (0, {steps}]")
    return t_star

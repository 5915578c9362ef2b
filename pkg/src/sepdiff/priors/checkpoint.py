"""Checkpoint container: JSON header + flat float64 parameter buffer.

A purpose-built format rather than npz because the bytes must be identical
across runs with the same seed (zip containers embed timestamps).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import ConfigurationError, IngestionError
from ..schedule import NoiseSchedule
from .denoiser import DenoiserConfig, DenoiserNet, ToyDenoiser

__all__ = [
    "save_checkpoint",
    "load_checkpoint",
    "write_flat_checkpoint",
    "read_flat_checkpoint",
]

_MAGIC = b"SDPK"
_VERSION = 1


def write_flat_checkpoint(path, header: dict, flat: np.ndarray) -> None:
    """Write any flat float64 buffer with a JSON header (deterministic bytes)."""
    header = dict(header, param_count=len(flat), dtype="float64")
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(np.ascontiguousarray(flat, dtype="<f8").tobytes())


def read_flat_checkpoint(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise IngestionError(f"{path}: not a checkpoint file (bad magic at byte 0)")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise IngestionError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IngestionError(f"{path}: corrupt checkpoint header ({exc})") from exc
    flat = np.frombuffer(data[12 + header_len :], dtype="<f8")
    if len(flat) != header.get("param_count"):
        raise IngestionError(
            f"{path}: parameter buffer has {len(flat)} values, header says "
            f"{header.get('param_count')}"
        )
    return header, np.asarray(flat, dtype=np.float64)


def save_checkpoint(path, model: ToyDenoiser) -> None:
    cfg = model.net.config
    header = {
        "kind": model.kind,
        "channels": cfg.channels,
        "kernel": cfg.kernel,
        "embed_dim": cfg.embed_dim,
        "hidden_dim": cfg.hidden_dim,
        "class_vocab": list(model.class_vocab) if model.class_vocab else None,
        "schedule_hash": model.schedule.content_hash(),
    }
    write_flat_checkpoint(path, header, model.net.flatten(model.params))


def load_checkpoint(path, schedule: NoiseSchedule) -> ToyDenoiser:
    """Rebuild the model; the schedule must match the one it was trained on."""
    header, flat = read_flat_checkpoint(path)
    if header.get("kind") != "toy-denoiser":
        raise IngestionError(f"{path}: unexpected model kind {header.get('kind')!r}")
    if header["schedule_hash"] != schedule.content_hash():
        raise ConfigurationError(
            f"{path}: checkpoint was trained on a different noise schedule "
            f"({header['schedule_hash']} != {schedule.content_hash()})"
        )
    vocab = tuple(header["class_vocab"]) if header.get("class_vocab") else None
    net = DenoiserNet(
        DenoiserConfig(
            channels=header["channels"],
            kernel=header["kernel"],
            embed_dim=header["embed_dim"],
            hidden_dim=header["hidden_dim"],
        ),
        num_classes=len(vocab) if vocab else 0,
    )
    if net.param_count != len(flat):
        raise IngestionError(
            f"{path}: topology needs {net.param_count} parameters, buffer has {len(flat)}"
        )
    return ToyDenoiser(net, net.unflatten(flat), schedule, vocab)

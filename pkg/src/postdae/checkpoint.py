"""Model checkpoints and their on-disk directory format.

Layout of a checkpoint directory::

    checkpoint.json      kind, architecture, epoch, loss history, extras
    manifest.json        per tensor: file name, shape, sha256 of the raw bytes
    tensors/<key>.f32    raw little-endian float32, C order
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointError

_LE_F32 = np.dtype("<f4")


@dataclass
class ModelCheckpoint:
    """Weights plus everything needed to rebuild and audit a model."""

    kind: str
    architecture: dict[str, Any]
    weights: dict[str, np.ndarray]
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def check_shapes(self, expected: dict[str, tuple[int, ...]]) -> None:
        """Every expected layer has exactly one tensor with the expected shape."""
        if set(expected) != set(self.weights):
            missing = sorted(set(expected) - set(self.weights))
            surplus = sorted(set(self.weights) - set(expected))
            raise CheckpointError(f"layer mismatch: missing={missing} unexpected={surplus}")
        for key, shape in expected.items():
            if tuple(self.weights[key].shape) != tuple(shape):
                raise CheckpointError(
                    f"{key}: shape {self.weights[key].shape} != expected {shape}"
                )


def _tensor_bytes(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=_LE_F32).tobytes()


def tensor_hash(array: np.ndarray) -> str:
    return hashlib.sha256(_tensor_bytes(array)).hexdigest()


def save_checkpoint(ckpt: ModelCheckpoint, directory) -> Path:
    directory = Path(directory)
    (directory / "tensors").mkdir(parents=True, exist_ok=True)
    manifest = {}
    for key in sorted(ckpt.weights):
        raw = _tensor_bytes(ckpt.weights[key])
        fname = f"{key}.f32"
        (directory / "tensors" / fname).write_bytes(raw)
        manifest[key] = {
            "file": f"tensors/{fname}",
            "shape": list(ckpt.weights[key].shape),
            "sha256": hashlib.sha256(raw).hexdigest(),
        }
    meta = {
        "kind": ckpt.kind,
        "architecture": ckpt.architecture,
        "epoch": ckpt.epoch,
        "loss_history": [float(x) for x in ckpt.loss_history],
        "extra": ckpt.extra,
    }
    (directory / "checkpoint.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory, verify: bool = True) -> ModelCheckpoint:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "checkpoint.json").read_text())
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise CheckpointError(f"{directory} is not a checkpoint directory") from exc
    weights = {}
    for key, entry in manifest.items():
        raw = (directory / entry["file"]).read_bytes()
        if verify and hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise CheckpointError(f"{key}: content hash mismatch")
        shape = tuple(entry["shape"])
        if len(raw) != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{key}: {len(raw)} bytes does not match shape {shape}")
        weights[key] = np.frombuffer(raw, dtype=_LE_F32).reshape(shape).astype(np.float32)
    return ModelCheckpoint(
        kind=meta["kind"],
        architecture=meta["architecture"],
        weights=weights,
        epoch=int(meta["epoch"]),
        loss_history=list(meta["loss_history"]),
        extra=meta.get("extra", {}),
    )

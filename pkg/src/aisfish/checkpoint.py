"""Normalization statistics and on-disk model checkpoints.

A checkpoint is a directory holding ``manifest.json`` (config, parameter
names and shapes, normalization statistics, metadata) and ``weights.bin``,
the parameters as little-endian float32 concatenated in manifest order.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import nncore as nn
from .errors import ConfigError
from .model import ModelConfig, forward, param_shapes
from .nncore import Parameter

ATTRIBUTES = ("lat", "lon", "cog", "sog")
MANIFEST = "manifest.json"
BLOB = "weights.bin"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NormStats:
    mean: tuple[float, ...]
    std: tuple[float, ...]
    min: tuple[float, ...]
    max: tuple[float, ...]

    def __post_init__(self):
        for i, name in enumerate(ATTRIBUTES):
            if not self.std[i] > 0 or not self.min[i] < self.max[i]:
                raise ConfigError(f"attribute {name!r} is constant in the training data")

    @classmethod
    def from_windows(cls, X) -> "NormStats":
        flat = np.asarray(X, dtype=np.float64).reshape(-1, len(ATTRIBUTES))
        if len(flat) == 0:
            raise ConfigError("no training windows to compute normalization statistics")
        return cls(*(tuple(float(v) for v in a) for a in
                     (flat.mean(0), flat.std(0), flat.min(0), flat.max(0))))

    def to_dict(self) -> dict:
        return {"attributes": list(ATTRIBUTES), "mean": list(self.mean), "std": list(self.std),
                "min": list(self.min), "max": list(self.max)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormStats":
        return cls(tuple(d["mean"]), tuple(d["std"]), tuple(d["min"]), tuple(d["max"]))

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def normalize(x, stats: NormStats) -> np.ndarray:
    """z-score each attribute, then min-max scale by the training z-range.

    Values outside the training range land outside [0, 1]; nothing is clipped.
    """
    x = np.asarray(x, dtype=np.float64)
    mean, std = np.array(stats.mean), np.array(stats.std)
    z = (x - mean) / std
    zmin = (np.array(stats.min) - mean) / std
    zmax = (np.array(stats.max) - mean) / std
    return (z - zmin) / (zmax - zmin)


@dataclass
class Checkpoint:
    config: ModelConfig
    weights: dict[str, Parameter]
    norm: NormStats
    metadata: dict = field(default_factory=dict)

    def logits(self, X, normalized: bool = False, batch: int = 8192) -> np.ndarray:
        """Inference logits for windows of shape (b, w, 4), raw unless `normalized`."""
        X = np.asarray(X, dtype=np.float64) if normalized else normalize(X, self.norm)
        if len(X) == 0:
            return np.zeros(0, dtype=np.float32)
        out = [forward(self.config, self.weights, X[i : i + batch], training=False)[0].data
               for i in range(0, len(X), batch)]
        return np.concatenate(out)

    def proba(self, X, normalized: bool = False) -> np.ndarray:
        return nn._sigmoid(self.logits(X, normalized).astype(np.float64))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = []
    blobs = []
    for name, shape in param_shapes(ckpt.config).items():
        data = np.ascontiguousarray(ckpt.weights[name].data, dtype="<f4")
        if data.shape != shape:
            raise ConfigError(f"parameter {name}: shape {data.shape}, expected {shape}")
        params.append({"name": name, "shape": list(shape)})
        blobs.append(data.tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "parameters": params,
        "normalization": ckpt.norm.to_dict(),
        "normalization_digest": ckpt.norm.digest,
        "metadata": ckpt.metadata,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, default=str))
    (path / BLOB).write_bytes(b"".join(blobs))
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
        blob = np.frombuffer((path / BLOB).read_bytes(), dtype="<f4")
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"not a checkpoint: {path} ({exc.filename} missing)") from exc
    config = ModelConfig(**manifest["config"])
    weights, offset = {}, 0
    for entry in manifest["parameters"]:
        n = int(np.prod(entry["shape"]))
        chunk = blob[offset : offset + n]
        if len(chunk) != n:
            raise ConfigError(f"{path}: weights blob too short for {entry['name']}")
        weights[entry["name"]] = Parameter(chunk.reshape(entry["shape"]).astype(np.float32), name=entry["name"])
        offset += n
    if offset != len(blob):
        raise ConfigError(f"{path}: {len(blob) - offset} trailing values in weights blob")
    norm = NormStats.from_dict(manifest["normalization"])
    if manifest.get("normalization_digest") not in (None, norm.digest):
        raise ConfigError(f"{path}: normalization digest mismatch")
    return Checkpoint(config, weights, norm, manifest.get("metadata", {}))

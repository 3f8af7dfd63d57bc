"""Run configuration: built-in defaults, overridden by a TOML file, overridden by flags."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError

PROVENANCE = "# run_config: "

DEFAULTS: dict[str, dict[str, Any]] = {
    "common": {"seed": 0},
    "ingest": {"out": "trajectories.csv"},
    "features": {"window_kind": "message", "window_size": None, "out": "features.csv"},
    "dbi-scan": {"window_kind": "message", "window_size": None, "k_min": 2, "k_max": 20,
                 "out": "dbi_scan.csv"},
    "label": {"window_kind": "message", "window_size": None, "k": None, "min_run": 5,
              "out": "labeled.csv", "model_out": "clusters.json"},
    "train": {"cell": "elman", "window": 10, "hidden": 64, "stride": 1, "batch": 128, "lr": 1e-3,
              "dropout": 0.25, "epochs": 200, "n_test": 50, "n_val": 15, "out": "model.ckpt"},
    "evaluate": {"split": "test", "out": None},
    "grid": {"cells": ["elman"], "windows": [5, 10, 15], "hidden_sizes": [32, 64, 128], "stride": 1,
             "batch": 128, "epochs": 200, "dropout": 0.25, "n_test": 50, "n_val": 15, "parallel": 1,
             "out": "grid.csv", "json": "grid.json"},
    "ensemble": {"mode": "hard", "average": "logit", "split": "test", "out": None},
    "stream": {"mode": "hard", "speedup": "max", "batch": 1, "listen": None, "replay": None},
    "bench": {"messages": 20000, "vessels": 200, "batch": 256, "window": 10, "hidden": 64},
}


@dataclass
class RunConfig:
    command: str
    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def to_dict(self) -> dict:
        return {"command": self.command, **self.values}


def _embedded(path: Path) -> dict:
    """Run config recorded in one of our own artifacts (JSON report, manifest or CSV)."""
    if path.is_dir():
        path = path / "manifest.json"
    if path.suffix == ".json":
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        found = doc.get("run_config") or doc.get("metadata", {}).get("run_config")
    else:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline()
        found = json.loads(first[len(PROVENANCE):]) if first.startswith(PROVENANCE) else None
    if not isinstance(found, dict):
        raise ConfigError(f"{path}: no embedded run configuration")
    command = found.pop("command", None)
    return {command: found} if command else found


def load_file(path: str | Path | None) -> dict:
    """Read a TOML config, or recover the run config embedded in an earlier artifact."""
    if path is None:
        return {}
    path = Path(path)
    if path.is_dir() or path.suffix in (".json", ".csv"):
        return _embedded(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def resolve(command: str, flags: Mapping[str, Any], file_values: Mapping | None = None) -> RunConfig:
    """Merge defaults < file (top-level keys, then the command's table) < explicit flags."""
    values = copy.deepcopy(DEFAULTS["common"])
    values.update(copy.deepcopy(DEFAULTS.get(command, {})))
    file_values = file_values or {}
    values.update({k.replace("-", "_"): v for k, v in file_values.items() if not isinstance(v, dict)})
    values.update({k.replace("-", "_"): v for k, v in file_values.get(command, {}).items()})
    values.update({k: v for k, v in flags.items() if v is not None})
    return RunConfig(command, values)

"""Precision/recall/F1 reporting and the benchmark grid."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .checkpoint import Checkpoint, normalize
from .errors import ConfigError, DataError
from .labeling import FISHING
from .model import ModelConfig, count_params

logger = logging.getLogger(__name__)

THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with fishing as the positive class."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true) == FISHING
        p = np.asarray(y_pred) == FISHING
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)), int(np.sum(~t & ~p)))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionMatrix":
        """Same matrix with sailing as the positive class."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)

    def rates(self) -> dict[str, float]:
        """Rates conditioned on the actual class (TN/FP over sailing, TP/FN over fishing)."""
        neg, pos = self.tn + self.fp, self.tp + self.fn
        return {
            "tn": self.tn / neg if neg else 0.0, "fp": self.fp / neg if neg else 0.0,
            "tp": self.tp / pos if pos else 0.0, "fn": self.fn / pos if pos else 0.0,
        }


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool = False


def _binary(cm: ConfusionMatrix) -> ClassMetrics:
    degenerate = False
    if cm.tp + cm.fp:
        precision = cm.tp / (cm.tp + cm.fp)
    else:
        precision, degenerate = 0.0, True
    if cm.tp + cm.fn:
        recall = cm.tp / (cm.tp + cm.fn)
    else:
        recall, degenerate = 0.0, True
    if precision + recall:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, True
    return ClassMetrics(precision, recall, f1, cm.tp + cm.fn, degenerate)


def metrics(cm: ConfusionMatrix) -> dict[str, ClassMetrics]:
    fishing = _binary(cm)
    sailing = _binary(cm.swapped())
    macro = ClassMetrics(
        (fishing.precision + sailing.precision) / 2,
        (fishing.recall + sailing.recall) / 2,
        (fishing.f1 + sailing.f1) / 2,
        fishing.support + sailing.support,
        fishing.degenerate or sailing.degenerate,
    )
    return {"sailing": sailing, "fishing": fishing, "macro": macro}


@dataclass
class EvalReport:
    sailing: ClassMetrics
    fishing: ClassMetrics
    macro: ClassMetrics
    confusion: ConfusionMatrix
    params: int
    config: dict = field(default_factory=dict)

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, params: int = 0, config: dict | None = None) -> "EvalReport":
        m = metrics(cm)
        return cls(m["sailing"], m["fishing"], m["macro"], cm, params, config or {})

    def to_dict(self) -> dict:
        return asdict(self)

    def flat(self) -> dict:
        row = dict(self.config)
        for name in ("sailing", "fishing", "macro"):
            cm = getattr(self, name)
            for key in ("precision", "recall", "f1", "support"):
                row[f"{name}_{key}"] = getattr(cm, key)
        row["params"] = self.params
        return row


def classify(proba) -> np.ndarray:
    """Threshold probabilities; exactly 0.5 counts as fishing."""
    return (np.asarray(proba) >= THRESHOLD).astype(np.int64)


def evaluate(ckpt: Checkpoint, windows, feature: str | None = None) -> tuple[EvalReport, ConfusionMatrix]:
    if len(windows) == 0:
        raise DataError("cannot evaluate on an empty test set")
    if windows.stats_digest is not None and windows.stats_digest != ckpt.norm.digest:
        raise ConfigError(
            f"windows were normalized with stats {windows.stats_digest}, checkpoint expects {ckpt.norm.digest}")
    if windows.X.shape[1] != ckpt.config.w:
        raise ConfigError(f"window length {windows.X.shape[1]} != model w={ckpt.config.w}")
    pred = classify(ckpt.proba(windows.X, normalized=windows.stats_digest is not None))
    cm = ConfusionMatrix.from_predictions(windows.y, pred)
    config = {"cell": ckpt.config.cell, "w": ckpt.config.w, "s": ckpt.config.s}
    if feature:
        config["feature"] = feature
    return EvalReport.from_confusion(cm, count_params(ckpt.config).total, config), cm


def normalized_windows(ckpt: Checkpoint, windows):
    """Copy of `windows` normalized with the checkpoint's statistics and tagged with their digest."""
    return replace(windows, X=normalize(windows.X, ckpt.norm), stats_digest=ckpt.norm.digest)


# ---- benchmark grid ------------------------------------------------------

@dataclass(frozen=True)
class GridJob:
    feature: str
    cell: str
    w: int
    s: int


def _run_job(job: GridJob, tracks, split_spec, train_config, dropout_rate) -> dict:
    from .train import fit, make_windows, split

    row = {"feature": job.feature, "cell": job.cell, "w": job.w, "s": job.s,
           "params": count_params(ModelConfig(job.cell, job.w, job.s)).total}
    try:
        parts = split(tracks, split_spec)
        win = {k: make_windows(v, job.w, train_config.stride) for k, v in parts.items()}
        mcfg = ModelConfig(job.cell, job.w, job.s, dropout_rate=dropout_rate, seed=train_config.seed)
        result = fit(train_config, mcfg, win["train"], win["val"])
        report, _ = evaluate(result.checkpoint, win["test"], job.feature)
        row.update(report.flat())
        row.update({"best_epoch": result.best_epoch, "train_windows": len(win["train"]),
                    "test_windows": len(win["test"]), "error": ""})
    except Exception as exc:  # a failed row must not stop the grid
        logger.exception("grid row %s failed", job)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def grid_jobs(features: Iterable[str], cells: Iterable[str], w_values: Iterable[int],
              s_values: Iterable[int]) -> list[GridJob]:
    return [GridJob(f, c, w, s) for c in cells for f in features for w in w_values for s in s_values]


def run_grid(datasets: Mapping[str, Sequence], cells=("elman",), w_values=(5, 10, 15),
             s_values=(32, 64, 128), split_spec=None, train_config=None, parallel: int = 1,
             dropout_rate: float = 0.25) -> list[dict]:
    """Train and test every (feature, cell, w, s) combination with shared seeds."""
    from .train import SplitSpec, TrainConfig

    split_spec = split_spec or SplitSpec()
    train_config = train_config or TrainConfig()
    jobs = grid_jobs(datasets, cells, w_values, s_values)
    args = [(j, datasets[j.feature], split_spec, train_config, dropout_rate) for j in jobs]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_run_job, *zip(*args)))
    return [_run_job(*a) for a in args]


def write_rows(rows: Sequence[dict], csv_path: str | Path, json_path: str | Path | None = None,
               run_config: Mapping | None = None) -> None:
    from .ingest import write_provenance

    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        write_provenance(fh, run_config)
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    if json_path:
        Path(json_path).write_text(json.dumps({"run_config": run_config, "rows": list(rows)}, indent=2, default=str))


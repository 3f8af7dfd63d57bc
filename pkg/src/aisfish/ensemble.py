"""Voting over the message-, time- and distance-feature models."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .errors import ConfigError, DataError
from .evaluation import ConfusionMatrix, EvalReport, classify
from .model import count_params
from .nncore import _sigmoid

Mode = Literal["soft", "hard"]


@dataclass
class Ensemble:
    """Exactly three members sharing one window length.

    ``soft`` takes the majority of thresholded member votes. ``hard`` averages
    the members' logits and applies the sigmoid once; ``average="proba"``
    averages post-sigmoid probabilities instead.
    """

    members: Sequence[Checkpoint]
    mode: Mode = "hard"
    average: Literal["logit", "proba"] = "logit"
    names: Sequence[str] = field(default_factory=lambda: ("O", "T", "D"))

    def __post_init__(self):
        if len(self.members) != 3:
            raise ConfigError(f"an ensemble needs exactly 3 members, got {len(self.members)}")
        ws = {m.config.w for m in self.members}
        if len(ws) != 1:
            raise ConfigError(f"members disagree on window length: {sorted(ws)}")
        if self.mode not in ("soft", "hard") or self.average not in ("logit", "proba"):
            raise ConfigError(f"bad ensemble mode {self.mode!r}/{self.average!r}")

    @property
    def w(self) -> int:
        return self.members[0].config.w

    @property
    def params(self) -> int:
        return sum(count_params(m.config).total for m in self.members)

    def member_logits(self, X_raw) -> np.ndarray:
        """(3, b) logits, each member normalizing with its own statistics."""
        X_raw = np.asarray(X_raw, dtype=np.float64)
        if X_raw.ndim != 3 or X_raw.shape[1] != self.w:
            raise ConfigError(f"expected windows (b, {self.w}, 4), got {X_raw.shape}")
        return np.stack([m.logits(X_raw).astype(np.float64) for m in self.members])


def combine(logits: np.ndarray, mode: Mode = "hard", average: str = "logit") -> tuple[np.ndarray, np.ndarray]:
    """Labels and ensemble probability from stacked member logits of shape (3, b)."""
    logits = np.asarray(logits, dtype=np.float64)
    probs = _sigmoid(logits)
    if mode == "soft":
        votes = classify(probs)
        p = votes.sum(axis=0) / len(logits)
        return (votes.sum(axis=0) * 2 > len(logits)).astype(np.int64), p
    p = _sigmoid(logits.mean(axis=0)) if average == "logit" else probs.mean(axis=0)
    return classify(p), p


def predict(ensemble: Ensemble, windows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (labels, probability, member probabilities (3, b))."""
    logits = ensemble.member_logits(windows)
    labels, p = combine(logits, ensemble.mode, ensemble.average)
    return labels, p, _sigmoid(logits)


def evaluate_ensemble(ensemble: Ensemble, windows) -> tuple[ConfusionMatrix, dict[str, float], EvalReport]:
    if len(windows) == 0:
        raise DataError("cannot evaluate on an empty test set")
    labels, _, _ = predict(ensemble, windows.X)
    cm = ConfusionMatrix.from_predictions(windows.y, labels)
    report = EvalReport.from_confusion(cm, ensemble.params, {"cell": "ensemble", "mode": ensemble.mode,
                                                             "w": ensemble.w})
    return cm, cm.rates(), report

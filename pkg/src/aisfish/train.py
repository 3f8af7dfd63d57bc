"""Vessel-level splits, window batching, and the training loop."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import nncore as nn
from .checkpoint import Checkpoint, NormStats, normalize
from .errors import NumericFault
from .model import ModelConfig, forward, init
from .nncore import Parameter, Tensor

logger = logging.getLogger(__name__)

__all__ = [
    "SplitSpec", "TrainConfig", "WindowSet", "split", "make_windows", "normalize",
    "loss", "loss_terms", "adamw_step", "AdamW", "clip_gradients", "PlateauScheduler",
    "EarlyStopping", "fit", "FitResult",
]


@dataclass(frozen=True)
class SplitSpec:
    n_test: int = 50
    n_val: int = 15
    seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    clip_norm: float = 1.0
    lambda_cl: float = 0.75
    lambda_bce: float = 0.15
    batch_size: int = 128
    weight_decay: float = 0.01
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    early_stop_patience: int = 10
    max_epochs: int = 200
    stride: int = 1
    seed: int = 0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k not in ("seed", "weight_decay") and not v > 0:
                raise ValueError(f"{k} must be positive, got {v}")


def split(tracks: Sequence, spec: SplitSpec = SplitSpec()) -> dict[str, list]:
    """Partition vessels (anything with an ``mmsi``) into test, val and train."""
    by_mmsi = {}
    for t in tracks:
        by_mmsi.setdefault(t.mmsi, []).append(t)
    ids = sorted(by_mmsi)
    if len(ids) < spec.n_test + spec.n_val + 1:
        raise ValueError(f"{len(ids)} vessels cannot fill {spec.n_test} test + {spec.n_val} val + train")
    order = np.random.default_rng(spec.seed).permutation(len(ids))
    picked = [ids[i] for i in order]
    groups = {
        "test": picked[: spec.n_test],
        "val": picked[spec.n_test : spec.n_test + spec.n_val],
        "train": picked[spec.n_test + spec.n_val :],
    }
    return {name: [t for m in sorted(members) for t in by_mmsi[m]] for name, members in groups.items()}


@dataclass
class WindowSet:
    X: np.ndarray  # (b, w, 4) raw attributes unless stats_digest is set
    y: np.ndarray  # (b,) label of each window's last message
    groups: np.ndarray  # (b,) MMSI
    stats_digest: str | None = None

    def __len__(self) -> int:
        return len(self.y)


def make_windows(tracks: Iterable, w: int, stride: int = 1) -> WindowSet:
    """Sliding windows within each track; short tails are dropped."""
    Xs, ys, gs = [], [], []
    for t in tracks:
        n = len(t.timestamps)
        if n < w:
            continue
        starts = np.arange(0, n - w + 1, stride)
        view = np.lib.stride_tricks.sliding_window_view(np.asarray(t.attributes), (w, 4))[:, 0]
        Xs.append(view[starts])
        ys.append(np.asarray(t.labels)[starts + w - 1])
        gs.append(np.full(len(starts), t.mmsi, dtype=np.int64))
    if not Xs:
        return WindowSet(np.zeros((0, w, 4)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    return WindowSet(np.concatenate(Xs), np.concatenate(ys).astype(np.int64), np.concatenate(gs))


def loss_terms(logits: Tensor, embeddings: Tensor, y, centers: Tensor, lambda_cl: float = 0.75,
               lambda_bce: float = 0.15) -> tuple[Tensor, Tensor, Tensor]:
    """(weighted total, center loss, BCE)."""
    cl = nn.center_loss(embeddings, centers, y)
    bce = nn.bce_with_logits(logits, y)
    return lambda_cl * cl + lambda_bce * bce, cl, bce


def loss(logits: Tensor, embeddings: Tensor, y, centers: Tensor, lambda_cl: float = 0.75,
         lambda_bce: float = 0.15) -> Tensor:
    return loss_terms(logits, embeddings, y, centers, lambda_cl, lambda_bce)[0]


def adamw_step(params, grads, state: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 0.01) -> None:
    """One AdamW update, in place. ``state`` holds ``t`` and per-param moments."""
    state["t"] = t = state.get("t", 0) + 1
    m_all = state.setdefault("m", [np.zeros(np.shape(p), dtype=np.float64) for p in params])
    v_all = state.setdefault("v", [np.zeros(np.shape(p), dtype=np.float64) for p in params])
    bc1, bc2 = 1 - beta1**t, 1 - beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        m_all[i] = beta1 * m_all[i] + (1 - beta1) * g
        v_all[i] = beta2 * v_all[i] + (1 - beta2) * g * g
        m_hat, v_hat = m_all[i] / bc1, v_all[i] / bc2
        theta = p.astype(np.float64)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * theta
        p[...] = theta


class AdamW:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, weight_decay: float = 0.01,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state: dict = {}

    def step(self) -> None:
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                   self.lr, *self.betas, eps=self.eps, weight_decay=self.weight_decay)

    def zero_grad(self) -> None:
        nn.zero_grads(self.params)


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.asarray(g, dtype=np.float64) ** 2)) for g in grads))


def clip_gradients(params: Sequence[Parameter], max_norm: float = 1.0) -> float:
    """Scale all grads so their joint L2 norm is at most max_norm; returns the pre-clip norm."""
    norm = global_norm([p.grad for p in params])
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad = (p.grad * scale).astype(p.grad.dtype)
    return norm


class PlateauScheduler:
    """Multiply the rate by `factor` after `patience` epochs without improvement."""

    def __init__(self, optimizer, factor: float = 0.5, patience: int = 5):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> None:
        if metric < self.best:
            self.best, self.bad_epochs = metric, 0
            return
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.optimizer.lr *= self.factor
            self.bad_epochs = 0
            logger.info("plateau: lr -> %g", self.optimizer.lr)


class EarlyStopping:
    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def step(self, epoch: int, metric: float) -> bool:
        """Record an epoch's metric; True means stop."""
        if metric < self.best:
            self.best, self.best_epoch, self.bad_epochs = metric, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class FitResult:
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def evaluate_bce(config: ModelConfig, weights, X: np.ndarray, y: np.ndarray, batch: int = 8192) -> float:
    total = 0.0
    for i in range(0, len(X), batch):
        logits, _ = forward(config, weights, X[i : i + batch], training=False)
        total += float(nn.bce_with_logits(logits, y[i : i + batch]).data) * len(y[i : i + batch])
    return total / max(len(X), 1)


def fit(config: TrainConfig, model_config: ModelConfig, train: WindowSet, val: WindowSet,
        on_epoch: Callable[[dict], None] | None = None, metadata: dict | None = None) -> FitResult:
    """Train with early stopping on validation BCE and return the best epoch's weights."""
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train and validation sets must both contain windows")
    stats = NormStats.from_windows(train.X)
    X_tr, X_val = normalize(train.X, stats), normalize(val.X, stats)
    rng = np.random.default_rng(config.seed)
    weights = init(model_config)
    params = list(weights.values())
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    sched = PlateauScheduler(opt, config.scheduler_factor, config.scheduler_patience)
    stopper = EarlyStopping(config.early_stop_patience)
    meta = {"train_config": asdict(config), "train_windows": len(train), "val_windows": len(val),
            **(metadata or {})}

    def snapshot(epoch):
        return Checkpoint(model_config, copy.deepcopy(weights), stats, {**meta, "epoch": epoch})

    best = snapshot(0)
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(X_tr))
        total, total_bce, seen = 0.0, 0.0, 0
        for i in range(0, len(order), config.batch_size):
            idx = order[i : i + config.batch_size]
            opt.zero_grad()
            with nn.Tape() as tape:
                try:
                    logits, emb = forward(model_config, weights, X_tr[idx], training=True, rng=rng)
                    objective, _, bce = loss_terms(logits, emb, train.y[idx], weights["loss.centers"],
                                                   config.lambda_cl, config.lambda_bce)
                except NumericFault as exc:
                    exc.checkpoint = best
                    raise
                tape.backward(objective)
            clip_gradients(params, config.clip_norm)
            opt.step()
            total += float(objective.data) * len(idx)
            total_bce += float(bce.data) * len(idx)
            seen += len(idx)
        val_bce = evaluate_bce(model_config, weights, X_val, val.y)
        if not math.isfinite(val_bce):
            exc = NumericFault(f"validation BCE is {val_bce} at epoch {epoch}")
            exc.checkpoint = best
            raise exc
        row = {"epoch": epoch, "train_loss": total / seen, "train_bce": total_bce / seen, "val_bce": val_bce,
               "lr": opt.lr}
        history.append(row)
        if on_epoch:
            on_epoch(row)
        if val_bce < stopper.best:
            best = snapshot(epoch)
        stop = stopper.step(epoch, val_bce)
        sched.step(val_bce)
        if stop:
            break
    best.metadata["history"] = history
    return FitResult(best, history, stopper.best_epoch)

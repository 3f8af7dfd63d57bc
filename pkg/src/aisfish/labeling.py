"""Unsupervised sailing/fishing labels from k-means over smoothed kinematics."""
from __future__ import annotations

import csv
import heapq
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .features import TrackFeatures, WindowSpec, featurize_all
from .ingest import Trajectory, format_timestamp, parse_timestamp, write_provenance

logger = logging.getLogger(__name__)

SAILING, FISHING = 0, 1
LABEL_NAMES = ("sailing", "fishing")
DEFAULT_K = {"message": 8, "time": 8, "distance": 12}
DEFAULT_MIN_RUN = 5
MAX_ITER = 300
LABELED_COLUMNS = (
    "mmsi", "timestamp", "lat", "lon", "sog", "cog",
    "accel", "rcog", "accel_ma", "rcog_ms", "cluster_id", "label",
)


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, 2), standardized units
    mean: np.ndarray
    std: np.ndarray
    dbi: float
    sse: float = 0.0
    n_iter: int = 0
    seed: int | None = None
    sse_history: list[float] = field(default_factory=list)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def predict(self, X) -> np.ndarray:
        return _assign(self.transform(X), self.centroids)

    @property
    def centroids_raw(self) -> np.ndarray:
        return self.centroids * self.std + self.mean

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "scaler": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "dbi": self.dbi,
            "sse": self.sse,
            "n_iter": self.n_iter,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterModel":
        return cls(
            k=d["k"], centroids=np.array(d["centroids"]), mean=np.array(d["scaler"]["mean"]),
            std=np.array(d["scaler"]["std"]), dbi=d["dbi"], sse=d.get("sse", 0.0),
            n_iter=d.get("n_iter", 0), seed=d.get("seed"),
        )


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _assign(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return _sq_dists(X, C).argmin(axis=1)


def _sse(X: np.ndarray, assign: np.ndarray, C: np.ndarray) -> float:
    return float(((X - C[assign]) ** 2).sum())


def kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _update(X: np.ndarray, assign: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = len(C)
    C = C.copy()
    counts = np.bincount(assign, minlength=k)
    for j in np.flatnonzero(counts == 0):
        # steal the point that is worst served by its current centroid
        far = int(np.argmax(((X - C[assign]) ** 2).sum(axis=1)))
        assign = assign.copy()
        assign[far] = j
        C[j] = X[far]
        counts = np.bincount(assign, minlength=k)
    for j in range(k):
        C[j] = X[assign == j].mean(axis=0)
    return C, assign


def lloyd(X: np.ndarray, init: np.ndarray, max_iter: int = MAX_ITER):
    """Lloyd iterations from `init` until the assignment stops changing.

    Returns (centroids, assignment, n_iter, sse_history).
    """
    C = np.asarray(init, dtype=np.float64).copy()
    assign = _assign(X, C)
    history = [_sse(X, assign, C)]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        C, assign = _update(X, assign, C)
        new = _assign(X, C)
        history.append(_sse(X, new, C))
        if np.array_equal(new, assign):
            break
        assign = new
    C, assign = _update(X, assign, C)
    return C, assign, n_iter, history


def standardize(X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ValueError("features must be a finite 2-D array")
    mean, std = X.mean(axis=0), X.std(axis=0)
    if np.all(std <= 0):
        raise ValueError("zero variance in every feature; cannot standardize")
    # a constant column adds nothing to distances, so leave it unscaled
    std = np.where(std > 0, std, 1.0)
    return (X - mean) / std, mean, std


def fit_kmeans(rows, k: int, seed: int = 0, init=None, max_iter: int = MAX_ITER) -> ClusterModel:
    """k-means on z-scored features.

    `init`, if given, holds k starting centroids in raw feature units and
    replaces k-means++ seeding.
    """
    X_raw = np.asarray(rows, dtype=np.float64)
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if len(X_raw) < k:
        raise ValueError(f"need at least k={k} rows, got {len(X_raw)}")
    X, mean, std = standardize(X_raw)
    if init is None:
        start = kmeans_pp(X, k, np.random.default_rng(seed))
    else:
        start = (np.asarray(init, dtype=np.float64) - mean) / std
    C, assign, n_iter, history = lloyd(X, start, max_iter)
    sizes = np.bincount(assign, minlength=k)
    dbi = davies_bouldin(X, assign, C) if np.all(sizes > 0) and k > 1 else float("nan")
    return ClusterModel(
        k=k, centroids=C, mean=mean, std=std, dbi=dbi, sse=_sse(X, assign, C),
        n_iter=n_iter, seed=seed, sse_history=history,
    )


def davies_bouldin(points, assignment, centroids) -> float:
    X = np.asarray(points, dtype=np.float64)
    C = np.asarray(centroids, dtype=np.float64)
    assignment = np.asarray(assignment)
    k = len(C)
    if k < 2:
        raise ValueError("Davies-Bouldin needs at least 2 clusters")
    counts = np.bincount(assignment, minlength=k)
    if np.any(counts == 0):
        raise ValueError(f"empty cluster(s): {np.flatnonzero(counts == 0).tolist()}")
    scatter = np.array([np.linalg.norm(X[assignment == i] - C[i], axis=1).mean() for i in range(k)])
    sep = np.sqrt(_sq_dists(C, C))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (scatter[:, None] + scatter[None, :]) / sep
    np.fill_diagonal(ratio, -np.inf)
    return float(ratio.max(axis=1).mean())


@dataclass
class ScanRow:
    k: int
    dbi: float | None
    error: str | None = None


def dbi_scan(rows, k_range: Iterable[int] = range(2, 21), seed: int = 0) -> list[ScanRow]:
    out = []
    for k in sorted(k_range):
        try:
            out.append(ScanRow(k, fit_kmeans(rows, k, seed).dbi))
        except ValueError as exc:
            logger.warning("k=%d: %s", k, exc)
            out.append(ScanRow(k, None, str(exc)))
    return out


def clusters_to_labels(cluster_ids, k: int | None = None) -> np.ndarray:
    """Most populous cluster is sailing, every other cluster fishing."""
    cluster_ids = np.asarray(cluster_ids)
    counts = np.bincount(cluster_ids, minlength=k or 0)
    majority = int(np.argmax(counts))  # argmax returns the lowest id on ties
    return np.where(cluster_ids == majority, SAILING, FISHING)


def relabel_runs(labels: Sequence[int], min_run: int = DEFAULT_MIN_RUN) -> np.ndarray:
    """Flip short runs of identical labels until every run has `min_run` members.

    The shortest offending run goes first (leftmost on ties) and absorbs into
    its neighbours, so the loop ends when no run is short or only one is left.
    """
    if min_run < 1:
        raise ValueError("min_run must be >= 1")
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        return labels.copy()
    edges = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], edges]).tolist()
    lengths = np.diff(np.concatenate([starts, [n]])).tolist()
    values = labels[starts].tolist()
    m = len(starts)
    prev = list(range(-1, m - 1))
    nxt = list(range(1, m + 1))
    nxt[-1] = -1
    alive = [True] * m
    heap = [(lengths[i], starts[i], i) for i in range(m)]
    heapq.heapify(heap)
    n_alive = m
    while heap and n_alive > 1:
        length, start, r = heapq.heappop(heap)
        if not alive[r] or lengths[r] != length or starts[r] != start:
            continue
        if length >= min_run:
            break
        values[r] = 1 - values[r]
        p, q = prev[r], nxt[r]
        if p >= 0:
            starts[r] = starts[p]
            lengths[r] += lengths[p]
            alive[p] = False
            n_alive -= 1
            prev[r] = prev[p]
            if prev[r] >= 0:
                nxt[prev[r]] = r
        if q >= 0:
            lengths[r] += lengths[q]
            alive[q] = False
            n_alive -= 1
            nxt[r] = nxt[q]
            if nxt[r] >= 0:
                prev[nxt[r]] = r
        heapq.heappush(heap, (lengths[r], starts[r], r))
    out = np.empty_like(labels)
    for i in range(m):
        if alive[i]:
            out[starts[i] : starts[i] + lengths[i]] = values[i]
    return out


@dataclass
class LabeledTrack:
    """Messages 1..n-1 of a trajectory with raw attributes, features and labels."""

    mmsi: int
    timestamps: np.ndarray
    attributes: np.ndarray  # (n, 4): lat, lon, cog, sog
    labels: np.ndarray
    cluster_ids: np.ndarray | None = None
    features: TrackFeatures | None = None

    def __len__(self) -> int:
        return len(self.timestamps)


def label_dataset(
    trajectories: Iterable[Trajectory],
    spec: WindowSpec,
    k: int | None = None,
    seed: int = 0,
    min_run: int = DEFAULT_MIN_RUN,
) -> tuple[list[LabeledTrack], ClusterModel]:
    trajectories = list(trajectories)
    k = k or DEFAULT_K[spec.kind]
    feats, skipped = featurize_all(trajectories, spec)
    if skipped:
        logger.warning("%d trajectories too short to featurize", skipped)
    X = np.concatenate([f.matrix() for f in feats if len(f)] or [np.zeros((0, 2))])
    model = fit_kmeans(X, k, seed)
    cluster_ids = model.predict(X)
    raw_labels = clusters_to_labels(cluster_ids, k)
    out, offset = [], 0
    for traj, f in zip(trajectories, feats):
        n = len(f)
        if n == 0:
            continue
        cid = cluster_ids[offset : offset + n]
        labels = relabel_runs(raw_labels[offset : offset + n], min_run)
        offset += n
        out.append(LabeledTrack(traj.mmsi, f.timestamps, traj.attributes[1:], labels, cid, f))
    logger.info("k=%d dbi=%.4f fishing share=%.3f", k, model.dbi,
                float(np.mean(np.concatenate([t.labels for t in out]))) if out else 0.0)
    return out, model


def write_labeled(tracks: Iterable[LabeledTrack], path: str | Path, run_config: Mapping | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_provenance(fh, run_config)
        w = csv.writer(fh)
        w.writerow(LABELED_COLUMNS)
        for t in tracks:
            f = t.features
            for i in range(len(t)):
                lat, lon, cog, sog = t.attributes[i]
                feat = (f.accel[i], f.rcog[i], f.accel_ma[i], f.rcog_ms[i]) if f is not None else ("",) * 4
                cid = int(t.cluster_ids[i]) if t.cluster_ids is not None else ""
                w.writerow([t.mmsi, format_timestamp(t.timestamps[i]), lat, lon, sog, cog,
                            *feat, cid, LABEL_NAMES[int(t.labels[i])]])


def read_labeled(path: str | Path) -> list[LabeledTrack]:
    rows: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for r in reader:
            rows.setdefault(int(r["mmsi"]), []).append((
                parse_timestamp(r["timestamp"]),
                float(r["lat"]), float(r["lon"]), float(r["cog"]), float(r["sog"]),
                LABEL_NAMES.index(r["label"]),
            ))
    out = []
    for mmsi, recs in sorted(rows.items()):
        recs.sort(key=lambda x: x[0])
        arr = np.array(recs, dtype=np.float64)
        out.append(LabeledTrack(mmsi, arr[:, 0].astype(np.int64), arr[:, 1:5], arr[:, 5].astype(np.int64)))
    return out


def write_cluster_model(model: ClusterModel, path: str | Path, run_config: Mapping | None = None) -> None:
    payload = model.to_dict()
    if run_config is not None:
        payload["run_config"] = run_config
    Path(path).write_text(json.dumps(payload, indent=2, default=str))

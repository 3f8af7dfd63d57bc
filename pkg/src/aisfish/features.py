"""Kinematic features per message: acceleration and course change, smoothed
over a trailing window measured in messages, minutes or metres."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from .ingest import Trajectory

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
WindowKind = Literal["message", "time", "distance"]
DEFAULT_WINDOW_SIZE = {"message": 10, "time": 10.0, "distance": 5000.0}


@dataclass(frozen=True)
class WindowSpec:
    kind: WindowKind = "message"
    size: float = 10

    def __post_init__(self):
        if self.kind not in DEFAULT_WINDOW_SIZE:
            raise ValueError(f"unknown window kind {self.kind!r}")
        if not self.size > 0:
            raise ValueError(f"window size must be positive, got {self.size}")
        if self.kind == "message" and int(self.size) != self.size:
            raise ValueError("message windows need an integer size")

    @classmethod
    def default(cls, kind: WindowKind) -> "WindowSpec":
        return cls(kind, DEFAULT_WINDOW_SIZE[kind])


@dataclass(frozen=True)
class FeatureRow:
    mmsi: int
    timestamp: int
    accel: float
    rcog: float
    accel_ma: float
    rcog_ms: float


def diff(attr_next: float, attr_curr: float) -> float:
    return attr_next - attr_curr


def rcog(d_cog):
    """Smaller signed turn for a course difference, in (-180, 180].

    Works on scalars and arrays. Exactly -180 is reported as +180.
    """
    d = np.asarray(d_cog, dtype=np.float64)
    out = np.where(d > 180.0, d - 360.0, np.where(d < -180.0, d + 360.0, d))
    out = np.where(out == -180.0, 180.0, out)
    return float(out) if out.ndim == 0 else out


def haversine(p1, p2) -> float:
    """Great-circle distance in metres between two (lat, lon) points in degrees."""
    return float(haversine_array(np.array([p1[0]]), np.array([p1[1]]), np.array([p2[0]]), np.array([p2[1]]))[0])


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(a, dtype=np.float64)) for a in (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def window_starts(timestamps, lat, lon, spec: WindowSpec) -> np.ndarray:
    """First index of the trailing window ending at each position (inclusive)."""
    n = len(timestamps)
    idx = np.arange(n)
    if spec.kind == "message":
        return np.maximum(0, idx - int(spec.size) + 1)
    if spec.kind == "time":
        ts = np.asarray(timestamps, dtype=np.float64)
        return np.searchsorted(ts, ts - spec.size * 60.0, side="left")
    legs = haversine_array(lat[:-1], lon[:-1], lat[1:], lon[1:])
    path = np.concatenate([[0.0], np.cumsum(legs)])
    return np.searchsorted(path, path - spec.size, side="left")


def window_members(trajectory: Trajectory, index: int, spec: WindowSpec) -> range:
    if not 0 <= index < len(trajectory):
        raise IndexError(index)
    att = trajectory.attributes
    start = window_starts(trajectory.timestamps, att[:, 0], att[:, 1], spec)[index]
    return range(int(start), index + 1)


@dataclass(frozen=True)
class TrackFeatures:
    """Feature columns for one trajectory, aligned with messages 1..n-1."""

    mmsi: int
    timestamps: np.ndarray
    accel: np.ndarray
    rcog: np.ndarray
    accel_ma: np.ndarray
    rcog_ms: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i: int) -> FeatureRow:
        return FeatureRow(
            self.mmsi, int(self.timestamps[i]), float(self.accel[i]), float(self.rcog[i]),
            float(self.accel_ma[i]), float(self.rcog_ms[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.accel_ma, self.rcog_ms])


def _empty(mmsi: int) -> TrackFeatures:
    z = np.zeros(0)
    return TrackFeatures(mmsi, np.zeros(0, dtype=np.int64), z, z, z, z)


def featurize(trajectory: Trajectory, spec: WindowSpec) -> TrackFeatures:
    """Acceleration MA and RCOG MS for every message that has a predecessor.

    Each difference belongs to the later message of its pair, and windows are
    taken over those feature rows only (message 0 has no feature).
    """
    if len(trajectory) < 2:
        logger.warning("vessel %s: %d message(s), no features", trajectory.mmsi, len(trajectory))
        return _empty(trajectory.mmsi)
    att = trajectory.attributes
    lat, lon, cog, sog = att[1:, 0], att[1:, 1], att[:, 2], att[:, 3]
    accel = np.diff(sog)
    turn = rcog(np.diff(cog))
    ts = trajectory.timestamps[1:]
    starts = window_starts(ts, lat, lon, spec)
    accel_ma = np.empty(len(ts))
    rcog_ms = np.empty(len(ts))
    for i, s in enumerate(starts):
        accel_ma[i] = accel[s : i + 1].mean()
        rcog_ms[i] = turn[s : i + 1].sum()
    return TrackFeatures(trajectory.mmsi, ts, accel, turn, accel_ma, rcog_ms)


def featurize_all(trajectories: Iterable[Trajectory], spec: WindowSpec) -> tuple[list[TrackFeatures], int]:
    """Featurize every trajectory; returns the tables and how many were too short."""
    out, skipped = [], 0
    for traj in trajectories:
        feats = featurize(traj, spec)
        if len(feats) == 0:
            skipped += 1
        out.append(feats)
    return out, skipped

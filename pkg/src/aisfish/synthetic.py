"""Synthetic vessel tracks: straight transits alternating with tight weaving."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .ingest import DEFAULT_SCHEMA, AisMessage, Trajectory, format_timestamp, round4

KNOT_MPS = 1852.0 / 3600.0
M_PER_DEG_LAT = 111_195.0


def synthetic_trajectory(mmsi: int, rng: np.random.Generator, n_segments: int = 6,
                         straight_len=(40, 80), weave_len=(25, 50), interval_s: int = 60,
                         start_time: int = 1_585_699_200) -> tuple[Trajectory, np.ndarray]:
    """One vessel's track and the generating regime per message (1 = weaving).

    Straight legs hold a course near 90 degrees at ~10 kn; weaving legs swing
    the course sinusoidally by +/-60 degrees with a period of a few messages
    and drop to ~4 kn with speed oscillation. Courses stay inside (0, 360)
    so no wrap-around appears in the raw attribute.
    """
    lat = 48.2 + 0.3 * rng.random()
    lon = -124.5 + 1.0 * rng.random()
    t = start_time + int(rng.integers(0, 3600))
    msgs, regime = [], []
    weaving = bool(rng.random() < 0.5)
    for _ in range(n_segments):
        if weaving:
            n = int(rng.integers(*weave_len))
            base = 90.0 + rng.uniform(-20, 20)
            period = rng.uniform(4.0, 7.0)
            phase = rng.uniform(0, 2 * math.pi)
            speed0 = rng.uniform(3.0, 5.0)
        else:
            n = int(rng.integers(*straight_len))
            base = 90.0 + rng.uniform(-30, 30)
            speed0 = rng.uniform(8.0, 12.0)
        for i in range(n):
            if weaving:
                cog = base + 60.0 * math.sin(2 * math.pi * i / period + phase)
                sog = speed0 + 1.5 * math.sin(2 * math.pi * i / (period * 0.7) + phase)
            else:
                cog = base
                sog = speed0
            cog = float(np.clip(cog + rng.normal(0, 1.0), 0.0, 360.0))
            sog = float(max(0.6, sog + rng.normal(0, 0.2)))
            dist = sog * KNOT_MPS * interval_s
            lat += dist * math.cos(math.radians(cog)) / M_PER_DEG_LAT
            lon += dist * math.sin(math.radians(cog)) / (M_PER_DEG_LAT * math.cos(math.radians(lat)))
            msgs.append(AisMessage(mmsi, t, round4(lat), round4(lon), round(sog, 1), round(cog, 1)))
            regime.append(int(weaving))
            t += interval_s + int(rng.integers(-5, 6))
        weaving = not weaving
    return Trajectory(mmsi, tuple(msgs)), np.array(regime)


def synthetic_fleet(n_vessels: int, seed: int = 0, **kw) -> dict[int, Trajectory]:
    rng = np.random.default_rng(seed)
    return {
        mmsi: synthetic_trajectory(mmsi, rng, **kw)[0]
        for mmsi in range(367_000_000, 367_000_000 + n_vessels)
    }


def random_trajectory(mmsi: int, n: int, rng: np.random.Generator, start_time: int = 1_585_699_200) -> Trajectory:
    """Unstructured random-walk track, for equivalence and property tests."""
    lat, lon = 48.0 + rng.random(), -124.0 + rng.random()
    t = start_time
    msgs = []
    for _ in range(n):
        t += int(rng.integers(1, 600))
        lat += rng.normal(0, 0.002)
        lon += rng.normal(0, 0.002)
        msgs.append(AisMessage(mmsi, t, round4(lat), round4(lon), round(float(rng.uniform(0.6, 20)), 1),
                               round(float(rng.uniform(0, 360)), 1)))
    return Trajectory(mmsi, tuple(msgs))


def write_raw_csv(trajectories: Iterable[Trajectory], path: str | Path) -> None:
    """Write tracks with the public feed's header names, interleaved by time."""
    msgs = sorted((m for t in trajectories for m in t.messages), key=lambda m: (m.timestamp, m.mmsi))
    cols = [DEFAULT_SCHEMA[k] for k in ("mmsi", "timestamp", "lat", "lon", "sog", "cog")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for m in msgs:
            w.writerow([m.mmsi, format_timestamp(m.timestamp), m.lat, m.lon, m.sog, m.cog])

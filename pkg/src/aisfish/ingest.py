"""Read raw AIS CSV exports, drop bad records, and group them into per-vessel tracks."""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from decimal import ROUND_HALF_UP, Decimal
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import ConfigError

logger = logging.getLogger(__name__)

# Header names used by the public marinecadastre feed.
DEFAULT_SCHEMA = {
    "mmsi": "MMSI",
    "timestamp": "BaseDateTime",
    "lat": "LAT",
    "lon": "LON",
    "sog": "SOG",
    "cog": "COG",
}
STORE_COLUMNS = ("mmsi", "timestamp", "lat", "lon", "sog", "cog")
MIN_SOG = 0.5
_QUANTUM = Decimal("0.0001")


class Rejection(str, enum.Enum):
    INVALID_SOG = "invalid_sog"
    INVALID_COG = "invalid_cog"
    LOW_SPEED = "low_speed"
    OUT_OF_RANGE_POSITION = "out_of_range_position"


@dataclass(frozen=True)
class RawRecord:
    mmsi: int
    timestamp: int  # seconds since the Unix epoch, UTC
    lat: float
    lon: float
    sog: float
    cog: float


@dataclass(frozen=True)
class AisMessage:
    mmsi: int
    timestamp: int
    lat: float
    lon: float
    sog: float
    cog: float


@dataclass(frozen=True)
class Trajectory:
    mmsi: int
    messages: tuple[AisMessage, ...]

    def __len__(self) -> int:
        return len(self.messages)

    @cached_property
    def timestamps(self) -> np.ndarray:
        return np.array([m.timestamp for m in self.messages], dtype=np.int64)

    @cached_property
    def attributes(self) -> np.ndarray:
        """(n, 4) float64 array of lat, lon, cog, sog, the model's input order."""
        if not self.messages:
            return np.zeros((0, 4))
        return np.array([(m.lat, m.lon, m.cog, m.sog) for m in self.messages], dtype=np.float64)


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_invalid: int = 0
    rows_duplicate: int = 0
    rows_low_speed: int = 0
    rows_kept: int = 0
    vessels: int = 0
    rejections: dict[str, int] = field(default_factory=dict)

    def reject(self, reason: str) -> None:
        self.rejections[reason] = self.rejections.get(reason, 0) + 1
        if reason == Rejection.LOW_SPEED:
            self.rows_low_speed += 1
        else:
            self.rows_invalid += 1

    def to_dict(self) -> dict:
        return asdict(self)


def parse_timestamp(text: str) -> int:
    """ISO-8601 to epoch seconds; a missing zone means UTC."""
    dt = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


def _data_lines(handle) -> Iterator[str]:
    # comment lines carry run provenance in files we write ourselves
    for line in handle:
        if not line.startswith("#"):
            yield line


def parse_csv(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    report: IngestReport | None = None,
) -> Iterator[RawRecord]:
    """Open `path` and return an iterator of parsed records.

    The header is validated eagerly so a missing column fails before any
    row is consumed. Malformed rows are counted in ``report.rows_invalid``
    and skipped.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    report = report if report is not None else IngestReport()
    handle = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(_data_lines(handle))
    header = reader.fieldnames or []
    missing = [src for src in schema.values() if src not in header]
    if missing:
        handle.close()
        raise ConfigError(f"{path}: missing required column(s) {', '.join(missing)}")

    def rows() -> Iterator[RawRecord]:
        with handle:
            for row in reader:
                report.rows_read += 1
                try:
                    rec = RawRecord(
                        mmsi=int(row[schema["mmsi"]]),
                        timestamp=parse_timestamp(row[schema["timestamp"]]),
                        lat=float(row[schema["lat"]]),
                        lon=float(row[schema["lon"]]),
                        sog=float(row[schema["sog"]]),
                        cog=float(row[schema["cog"]]),
                    )
                except (TypeError, ValueError):
                    report.rows_invalid += 1
                    report.rejections["malformed"] = report.rejections.get("malformed", 0) + 1
                    continue
                yield rec

    return rows()


def round4(x: float) -> float:
    """Round half away from zero to 4 decimals, using the shortest decimal repr."""
    return float(Decimal(repr(float(x))).quantize(_QUANTUM, rounding=ROUND_HALF_UP))


def clean(record: RawRecord | AisMessage) -> AisMessage | Rejection:
    if not math.isfinite(record.sog) or record.sog < 0:
        return Rejection.INVALID_SOG
    if not math.isfinite(record.cog) or not 0.0 <= record.cog <= 360.0:
        return Rejection.INVALID_COG
    if not (math.isfinite(record.lat) and math.isfinite(record.lon)):
        return Rejection.OUT_OF_RANGE_POSITION
    if abs(record.lat) > 90.0 or abs(record.lon) > 180.0:
        return Rejection.OUT_OF_RANGE_POSITION
    if record.sog <= MIN_SOG:
        return Rejection.LOW_SPEED
    return AisMessage(
        mmsi=int(record.mmsi),
        timestamp=int(record.timestamp),
        lat=round4(record.lat),
        lon=round4(record.lon),
        sog=float(record.sog),
        cog=float(record.cog),
    )


def clean_all(records: Iterable[RawRecord], report: IngestReport) -> Iterator[AisMessage]:
    for rec in records:
        out = clean(rec)
        if isinstance(out, Rejection):
            report.reject(out.value)
        else:
            yield out


def assemble(
    messages: Iterable[AisMessage], report: IngestReport | None = None
) -> dict[int, Trajectory]:
    """Group messages by MMSI, sort by time and drop repeated timestamps.

    When two records share (mmsi, timestamp) the first one seen wins and the
    other is counted as a duplicate, whether or not the remaining fields agree.
    """
    by_vessel: dict[int, dict[int, AisMessage]] = defaultdict(dict)
    duplicates = 0
    for msg in messages:
        slot = by_vessel[msg.mmsi]
        if msg.timestamp in slot:
            duplicates += 1
            continue
        slot[msg.timestamp] = msg
    out = {
        mmsi: Trajectory(mmsi, tuple(slot[t] for t in sorted(slot)))
        for mmsi, slot in sorted(by_vessel.items())
    }
    if report is not None:
        report.rows_duplicate += duplicates
        report.rows_kept = sum(len(t) for t in out.values())
        report.vessels = len(out)
    return out


def ingest_files(
    paths: Iterable[str | Path], schema: Mapping[str, str] | None = None
) -> tuple[dict[int, Trajectory], IngestReport]:
    report = IngestReport()
    messages: list[AisMessage] = []
    for path in paths:
        messages.extend(clean_all(parse_csv(path, schema, report), report))
    trajectories = assemble(messages, report)
    logger.info("kept %d of %d rows over %d vessels", report.rows_kept, report.rows_read, report.vessels)
    return trajectories, report


def write_provenance(handle, run_config: Mapping | None) -> None:
    if run_config is not None:
        handle.write("# run_config: " + json.dumps(run_config, sort_keys=True, default=str) + "\n")


def write_store(
    trajectories: Mapping[int, Trajectory] | Iterable[Trajectory],
    path: str | Path,
    run_config: Mapping | None = None,
) -> None:
    tracks = trajectories.values() if isinstance(trajectories, Mapping) else trajectories
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_provenance(fh, run_config)
        writer = csv.writer(fh)
        writer.writerow(STORE_COLUMNS)
        for traj in sorted(tracks, key=lambda t: t.mmsi):
            for m in traj.messages:
                writer.writerow([m.mmsi, format_timestamp(m.timestamp), m.lat, m.lon, m.sog, m.cog])


def read_store(path: str | Path) -> dict[int, Trajectory]:
    """Load a trajectory store written by :func:`write_store` (already clean)."""
    schema = {k: k for k in STORE_COLUMNS}
    records = parse_csv(path, schema)
    msgs = (AisMessage(r.mmsi, r.timestamp, r.lat, r.lon, r.sog, r.cog) for r in records)
    return assemble(msgs)

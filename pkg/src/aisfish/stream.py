"""Online per-message detection over an ordered AIS feed."""
from __future__ import annotations

import heapq
import json
import logging
import socketserver
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .ensemble import Ensemble, combine
from .errors import DataError
from .evaluation import classify
from .ingest import AisMessage, RawRecord, Rejection, Trajectory, clean, format_timestamp, parse_timestamp
from .labeling import LABEL_NAMES
from .nncore import _sigmoid

logger = logging.getLogger(__name__)


@dataclass
class VesselState:
    mmsi: int
    w: int
    buffer: deque = field(default=None)
    last_seen: int | None = None
    emitted: int = 0
    rejected_stale: int = 0

    def __post_init__(self):
        if self.buffer is None:
            self.buffer = deque(maxlen=self.w)

    def push(self, msg: AisMessage) -> bool:
        """Append if newer than anything seen; False means the message was stale."""
        if self.last_seen is not None and msg.timestamp <= self.last_seen:
            self.rejected_stale += 1
            return False
        self.buffer.append((msg.lat, msg.lon, msg.cog, msg.sog))
        self.last_seen = msg.timestamp
        return True

    @property
    def ready(self) -> bool:
        return len(self.buffer) == self.w

    def window(self) -> np.ndarray:
        return np.array(self.buffer, dtype=np.float64)


@dataclass(frozen=True)
class Detection:
    mmsi: int
    timestamp: int
    label: str
    p: float
    members: tuple[float, ...] = ()

    def to_json(self) -> str:
        d = asdict(self)
        d["timestamp"] = format_timestamp(self.timestamp)
        d["members"] = list(self.members)
        return json.dumps(d)


class Detector:
    """Holds per-vessel state and a frozen predictor (a checkpoint or an ensemble)."""

    def __init__(self, predictor: Checkpoint | Ensemble):
        self.predictor = predictor
        self.w = predictor.w if isinstance(predictor, Ensemble) else predictor.config.w
        self.states: dict[int, VesselState] = {}
        self.rejected: dict[str, int] = {}

    def state(self, mmsi: int) -> VesselState:
        st = self.states.get(mmsi)
        if st is None:
            st = self.states[mmsi] = VesselState(mmsi, self.w)
        return st

    def _score(self, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        if isinstance(self.predictor, Ensemble):
            logits = self.predictor.member_logits(windows)
            labels, p = combine(logits, self.predictor.mode, self.predictor.average)
            return labels, p, _sigmoid(logits)
        p = _sigmoid(self.predictor.logits(windows).astype(np.float64))
        return classify(p), p, None

    def _accept(self, record) -> tuple[AisMessage, VesselState] | None:
        msg = clean(record)
        if isinstance(msg, Rejection):
            self.rejected[msg.value] = self.rejected.get(msg.value, 0) + 1
            return None
        st = self.state(msg.mmsi)
        if not st.push(msg):
            return None
        return (msg, st) if st.ready else None

    def ingest_online(self, record: RawRecord | AisMessage) -> Detection | None:
        return next(iter(self.process([record])), None)

    def process(self, records: Iterable[RawRecord | AisMessage]) -> list[Detection]:
        """Update states for a micro-batch and score every window that became ready."""
        ready, windows = [], []
        for rec in records:
            hit = self._accept(rec)
            if hit is not None:
                ready.append(hit)
                windows.append(hit[1].window())
        if not ready:
            return []
        labels, p, members = self._score(np.stack(windows))
        out = []
        for i, (msg, st) in enumerate(ready):
            st.emitted += 1
            mem = tuple(float(v) for v in members[:, i]) if members is not None else ()
            out.append(Detection(msg.mmsi, msg.timestamp, LABEL_NAMES[int(labels[i])], float(p[i]), mem))
        return out

    @property
    def rejected_stale(self) -> int:
        return sum(s.rejected_stale for s in self.states.values())


def batch_detect(predictor: Checkpoint | Ensemble, trajectory: Trajectory) -> list[Detection]:
    """Stride-1 batch inference over one trajectory, for comparison with streaming."""
    det = Detector(predictor)
    att = trajectory.attributes
    n = len(att)
    if n < det.w:
        return []
    windows = np.lib.stride_tricks.sliding_window_view(att, (det.w, 4))[:, 0]
    labels, p, members = det._score(np.ascontiguousarray(windows))
    ts = trajectory.timestamps[det.w - 1 :]
    return [
        Detection(trajectory.mmsi, int(ts[i]), LABEL_NAMES[int(labels[i])], float(p[i]),
                  tuple(float(v) for v in members[:, i]) if members is not None else ())
        for i in range(len(ts))
    ]


def replay(store: Mapping[int, Trajectory] | Iterable[Trajectory], speedup: float | str = "max",
           sleep=time.sleep, clock=time.monotonic) -> Iterator[AisMessage]:
    """Merge per-vessel tracks into one timestamp-ordered feed.

    With a numeric `speedup` the wall-clock gap between emissions is the
    recorded gap divided by `speedup`.
    """
    tracks = store.values() if isinstance(store, Mapping) else store
    try:
        merged = heapq.merge(*(t.messages for t in tracks), key=lambda m: (m.timestamp, m.mmsi))
    except AttributeError as exc:
        raise DataError(f"cannot order records: {exc}") from exc
    if speedup == "max":
        yield from merged
        return
    speedup = float(speedup)
    if speedup <= 0:
        raise ValueError("speedup must be positive or 'max'")
    t0_data = t0_wall = None
    for msg in merged:
        if t0_data is None:
            t0_data, t0_wall = msg.timestamp, clock()
        else:
            delay = t0_wall + (msg.timestamp - t0_data) / speedup - clock()
            if delay > 0:
                sleep(delay)
        yield msg


def parse_record(line: str | Mapping) -> RawRecord:
    d = json.loads(line) if isinstance(line, str) else line
    ts = d["timestamp"]
    ts = parse_timestamp(ts) if isinstance(ts, str) else int(ts)
    return RawRecord(int(d["mmsi"]), ts, float(d["lat"]), float(d["lon"]), float(d["sog"]), float(d["cog"]))


def run_lines(detector: Detector, lines: Iterable[str], out: IO[str], batch: int = 1) -> int:
    """Feed NDJSON lines through the detector, writing NDJSON detections; returns count written."""
    written, pending = 0, []
    bad = 0

    def flush():
        nonlocal written
        for d in detector.process(pending):
            out.write(d.to_json() + "\n")
            written += 1
        pending.clear()
        out.flush()

    for line in lines:
        if not line.strip():
            continue
        try:
            pending.append(parse_record(line))
        except (KeyError, ValueError, TypeError):
            bad += 1
            continue
        if len(pending) >= batch:
            flush()
    flush()
    if bad:
        detector.rejected["malformed"] = detector.rejected.get("malformed", 0) + bad
    return written


def serve_tcp(detector: Detector, host: str, port: int, out: IO[str]) -> socketserver.ThreadingTCPServer:
    """Accept NDJSON records on a TCP port; detections go to `out`.

    All connections share one detector behind a lock, so each vessel's state
    has a single writer.
    """
    lock = threading.Lock()

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace")
                with lock:
                    run_lines(detector, [line], out)

    socketserver.ThreadingTCPServer.allow_reuse_address = True
    server = socketserver.ThreadingTCPServer((host, port), Handler)
    server.daemon_threads = True
    return server


def bench(predictor: Checkpoint | Ensemble, n_vessels: int = 200, n_messages: int = 20000,
          batch: int = 256, seed: int = 0) -> dict:
    """Throughput of the micro-batched detector on synthetic interleaved traffic."""
    rng = np.random.default_rng(seed)
    per = n_messages // n_vessels
    msgs: list[AisMessage] = []
    for v in range(n_vessels):
        lat, lon = 48.0 + rng.random(), -124.0 + rng.random()
        for i in range(per):
            msgs.append(AisMessage(200000000 + v, 1_585_699_200 + 60 * i + v, round(lat + 1e-3 * i, 4),
                                   round(lon, 4), float(1 + 10 * rng.random()), float(360 * rng.random())))
    msgs.sort(key=lambda m: (m.timestamp, m.mmsi))
    det = Detector(predictor)
    t0 = time.perf_counter()
    emitted = 0
    for i in range(0, len(msgs), batch):
        emitted += len(det.process(msgs[i : i + batch]))
    elapsed = time.perf_counter() - t0
    return {"messages": len(msgs), "detections": emitted, "seconds": elapsed,
            "messages_per_second": len(msgs) / elapsed if elapsed else float("inf"), "batch": batch}

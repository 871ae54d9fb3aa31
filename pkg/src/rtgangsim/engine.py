"""Discrete-event core: integer-nanosecond clock, (time, seq) ordered queue, trace."""
from __future__ import annotations

import csv
import hashlib
import heapq
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


def ms(x: float) -> int:
    return int(round(x * NS_PER_MS))


def us(x: float) -> int:
    return int(round(x * NS_PER_US))


class EventKind(str, Enum):
    JOB_RELEASE = "JobRelease"
    EPOCH_BOUNDARY = "EpochBoundary"
    REGULATION_BOUNDARY = "RegulationBoundary"
    JOB_COMPLETION = "JobCompletion"
    THROTTLE_ON = "ThrottleOn"
    THROTTLE_OFF = "ThrottleOff"
    FRAME_DROP = "FrameDrop"


class PastEvent(RuntimeError):
    """An event was scheduled before the current clock (simulator bug)."""


@dataclass(frozen=True)
class SimEvent:
    time: int
    kind: EventKind
    payload: dict = field(default_factory=dict, compare=False, hash=False)
    seq: int = -1


@dataclass(frozen=True)
class TraceRecord:
    event: SimEvent
    digest: str = ""


TRACE_HEADER = ("time_ns", "kind", "task", "core", "partition", "detail")
_ROW_KEYS = ("task", "core", "partition")


def _detail(payload: dict) -> str:
    parts = []
    for key in sorted(payload):
        if key in _ROW_KEYS:
            continue
        value = payload[key]
        if isinstance(value, (list, tuple)):
            value = "|".join(str(v) for v in value)
        parts.append(f"{key}={value}")
    return ";".join(parts)


class Trace:
    """Ordered log of processed events plus scheduler-state digests."""

    def __init__(self, records: Iterable[TraceRecord] = ()):
        self.records: list[TraceRecord] = list(records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, event: SimEvent, digest: str = "") -> None:
        self.records.append(TraceRecord(event, digest))

    def events(self, kind: EventKind | None = None) -> list[SimEvent]:
        return [r.event for r in self.records if kind is None or r.event.kind == kind]

    def rows(self) -> Iterable[tuple]:
        for rec in self.records:
            ev = rec.event
            p = ev.payload
            yield (
                ev.time,
                ev.kind.value,
                p.get("task", ""),
                "" if p.get("core") is None else p.get("core"),
                p.get("partition", ""),
                _detail(p),
            )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        writer.writerows(self.rows())
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def digest(self) -> str:
        h = hashlib.sha256()
        for row, rec in zip(self.rows(), self.records):
            h.update(repr(row).encode())
            h.update(rec.digest.encode())
        return h.hexdigest()

    def check_order(self) -> None:
        prev = None
        for rec in self.records:
            key = (rec.event.time, rec.event.seq)
            if prev is not None and key <= prev:
                raise AssertionError(f"trace out of order at {key} after {prev}")
            prev = key


class Engine:
    """Single-threaded event loop.

    ``handler(event)`` is invoked for each event; it may schedule more events
    at or after the current clock. ``advance(now, t)`` lets the owner integrate
    continuous progress between events; it may schedule an event no later
    than ``t`` and must then return the time it actually reached.
    """

    def __init__(self, digest_fn: Callable[[], str] | None = None):
        self.clock = 0
        self._queue: list[tuple[int, int, SimEvent]] = []
        self._seq = 0
        self.trace = Trace()
        self.digest_fn = digest_fn

    def schedule(self, time: int, kind: EventKind, payload: dict | None = None) -> int:
        time = int(time)
        if time < self.clock:
            raise PastEvent(f"{kind.value} at {time} ns is before clock {self.clock} ns")
        seq = self._seq
        self._seq += 1
        event = SimEvent(time, kind, payload or {}, seq)
        heapq.heappush(self._queue, (time, seq, event))
        return seq

    def peek_time(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    def __len__(self):
        return len(self._queue)

    def run_until(
        self,
        t_end: int,
        handler: Callable[[SimEvent], Any] | None = None,
        advance: Callable[[int, int], int] | None = None,
    ) -> Trace:
        t_end = int(t_end)
        if t_end < self.clock:
            raise PastEvent(f"run_until({t_end}) is before clock {self.clock}")
        while True:
            nxt = self.peek_time()
            target = t_end if nxt is None or nxt > t_end else nxt
            if advance is not None and target > self.clock:
                reached = advance(self.clock, target)
                if reached < self.clock:
                    raise PastEvent("advance moved the clock backwards")
                self.clock = reached
                if reached < target:
                    continue
            self.clock = target
            nxt = self.peek_time()
            if nxt is None or nxt > t_end:
                break
            _, _, event = heapq.heappop(self._queue)
            if handler is not None:
                handler(event)
            self.trace.append(event, self.digest_fn() if self.digest_fn else "")
        self.clock = t_end
        return self.trace

"""Discrete-event engine: integer microsecond clock, ordered event queue,
named RNG streams and the run loop."""

from __future__ import annotations

import csv
import hashlib
import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

US_PER_S = 1_000_000


def to_us(seconds: float) -> int:
    """Convert seconds to integer microseconds (round half away from zero)."""
    if seconds < 0:
        raise ValueError(f"negative duration: {seconds}")
    return int(seconds * US_PER_S + 0.5)


def to_seconds(us: int) -> float:
    return us / US_PER_S


def format_us(us: int) -> str:
    """Exact decimal rendering of a microsecond timestamp, e.g. ``12.000500``."""
    sign = "-" if us < 0 else ""
    q, r = divmod(abs(us), US_PER_S)
    return f"{sign}{q}.{r:06d}"


class EventKind(str, Enum):
    REQUEST_ARRIVAL = "request-arrival"
    FLOW_COMPLETE = "flow-complete"
    PHASE_COMPLETE = "phase-complete"
    RATE_RECOMPUTE = "rate-recompute"
    PREFETCH_TRIGGER = "prefetch-trigger"
    CACHE_REPORT = "cache-report"


@dataclass(order=True)
class Event:
    fire_at: int
    seq: int
    kind: EventKind = field(compare=False)
    action: Optional[Callable[[], None]] = field(compare=False, default=None, repr=False)
    subject: tuple = field(compare=False, default=())


def stream_seed(seed: int, label: str) -> np.random.SeedSequence:
    # sha256 keeps the label mapping independent of PYTHONHASHSEED and platform
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    label_words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence([seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF, *label_words])


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one consumer; same (seed, label) gives the same draws."""
    return np.random.Generator(np.random.PCG64(stream_seed(seed, label)))


class PastEventError(RuntimeError):
    pass


class Engine:
    """Single-threaded event loop.

    Events with equal ``fire_at`` fire in insertion order. ``schedule`` refuses
    events in the past.
    """

    def __init__(self, seed: int = 0, event_log: bool = False):
        self.seed = int(seed)
        self.now = 0
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self._streams: dict[str, np.random.Generator] = {}
        self.enqueued = 0
        self.processed = 0
        self.keep_log = event_log
        self.log: list[tuple[int, str, tuple]] = []

    @property
    def pending(self) -> int:
        return len(self._queue)

    def rng(self, label: str) -> np.random.Generator:
        gen = self._streams.get(label)
        if gen is None:
            gen = self._streams[label] = rng_stream(self.seed, label)
        return gen

    def schedule(self, fire_at: int, kind: EventKind, action: Optional[Callable[[], None]] = None,
                 subject: tuple = ()) -> Event:
        if fire_at < self.now:
            raise PastEventError(f"event {kind} at {fire_at}us is before clock {self.now}us")
        ev = Event(int(fire_at), next(self._seq), EventKind(kind), action, tuple(subject))
        heapq.heappush(self._queue, ev)
        self.enqueued += 1
        return ev

    def schedule_in(self, delay_us: int, kind: EventKind, action=None, subject: tuple = ()) -> Event:
        return self.schedule(self.now + int(delay_us), kind, action, subject)

    def peek_time(self) -> Optional[int]:
        return self._queue[0].fire_at if self._queue else None

    def step(self) -> Event:
        ev = heapq.heappop(self._queue)
        assert ev.fire_at >= self.now
        self.now = ev.fire_at
        self.processed += 1
        if self.keep_log:
            self.log.append((ev.fire_at, ev.kind.value, ev.subject))
        if ev.action is not None:
            ev.action()
        return ev

    def run_until(self, t_end: Optional[int] = None) -> int:
        """Process every event with ``fire_at <= t_end`` (all events if None).

        Returns the clock after the last processed event; the clock is not
        advanced to ``t_end`` when the queue drains early.
        """
        while self._queue and (t_end is None or self._queue[0].fire_at <= t_end):
            self.step()
        return self.now

    def dump_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "kind", "subject"])
            for t, kind, subject in self.log:
                writer.writerow([format_us(t), kind, "|".join(str(s) for s in subject)])

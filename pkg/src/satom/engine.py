"""Deterministic discrete-event loop with seedable RNG streams.

Events are ordered by ``(fire_time, priority, insertion order)``. Priority
defaults to 0 for every event; the only user of a non-default class is the
fallback-window expiry (``LATE``), which must run after any same-instant
message arrival so that a cancellation landing exactly on the deadline
still counts.

Fire times are rounded to ``TIME_DIGITS`` decimals so that sums of
latencies that are equal on paper (0.3 + 0.3 and 0.6) also compare equal.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .core import Link, NodeId
from .errors import PastTime

NORMAL = 0
LATE = 1
TIME_DIGITS = 9


class RngStream:
    """Independent random stream keyed by ``(master_seed, index)``.

    ``index`` may be an int or a tuple of ints; distinct indices give
    statistically independent streams (numpy ``SeedSequence`` spawn keys),
    and PCG64 output is identical on every platform.
    """

    def __init__(self, master_seed: int, index: int | Sequence[int] = 0):
        if isinstance(index, (int, np.integer)):
            index = (int(index),)
        self.master_seed = int(master_seed)
        self.index = tuple(int(i) for i in index)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.index)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def random(self) -> float:
        return float(self.generator.random())

    def integers(self, high: int) -> int:
        return int(self.generator.integers(high))

    def child(self, *extra: int) -> RngStream:
        return RngStream(self.master_seed, self.index + tuple(extra))

    def __repr__(self):
        return f"RngStream(seed={self.master_seed}, index={self.index})"


@dataclass
class Event:
    fire_time: float
    kind: str
    target: Any = None
    payload: Any = None
    action: Callable[["Event"], None] | None = field(default=None, repr=False)
    detail: str = ""
    priority: int = NORMAL
    ticket: int = -1


@dataclass(frozen=True)
class TraceRecord:
    time: float
    target: str
    kind: str
    detail: str = ""


@dataclass(frozen=True)
class Blocked:
    """Outcome of a transmission that the link dropped."""

    link: int
    kind: str
    time: float


class BlockingPolicy(Protocol):
    def __call__(self, link: Link, src: NodeId, message: Any, kind: str, now: float,
                 rng: RngStream) -> bool: ...


class IndependentBlocking:
    """Each attempt is blocked independently with the link's direction probability.

    Exactly one uniform draw is consumed per attempt, whatever the
    probability, so scenarios that differ only in parameters stay coupled.
    """

    def __call__(self, link, src, message, kind, now, rng):
        return rng.random() < link.block_prob(src)


class KindBlocking:
    """Override the blocking probability for selected message kinds."""

    def __init__(self, overrides: dict[str, float], base: BlockingPolicy | None = None):
        self.overrides = dict(overrides)
        self.base = base or IndependentBlocking()

    def __call__(self, link, src, message, kind, now, rng):
        if kind in self.overrides:
            return rng.random() < self.overrides[kind]
        return self.base(link, src, message, kind, now, rng)


Tap = Callable[[Link, NodeId, Any, float], None]


class Engine:
    def __init__(self, master_seed: int = 0, stream: int | Sequence[int] = 0,
                 blocking: BlockingPolicy | None = None):
        self.now = 0.0
        self.rng = RngStream(master_seed, stream)
        self.blocking = blocking or IndependentBlocking()
        self.trace: list[TraceRecord] = []
        self.taps: list[Tap] = []
        self.transmissions = 0
        self.blocked = 0
        self._queue: list[tuple[float, int, int, Event]] = []
        self._live: dict[int, Event] = {}
        self._seq = itertools.count()

    def schedule(self, fire_time: float, kind: str, target: Any = None, payload: Any = None,
                 action: Callable[[Event], None] | None = None, detail: str = "",
                 priority: int = NORMAL) -> int:
        if fire_time < self.now:
            raise PastTime(f"cannot schedule {kind} at {fire_time} < now {self.now}")
        fire_time = max(round(fire_time, TIME_DIGITS), self.now)
        ticket = next(self._seq)
        event = Event(fire_time, kind, target, payload, action, detail, priority, ticket)
        self._live[ticket] = event
        heapq.heappush(self._queue, (fire_time, priority, ticket, event))
        return ticket

    def after(self, delay: float, kind: str, **kwargs) -> int:
        return self.schedule(self.now + delay, kind, **kwargs)

    def cancel(self, ticket: int) -> bool:
        return self._live.pop(ticket, None) is not None

    def pending(self, ticket: int) -> bool:
        return ticket in self._live

    def transmit(self, link: Link, src: NodeId, message: Any, kind: str = "frame",
                 on_deliver: Callable[[Event], None] | None = None,
                 rng: RngStream | None = None, detail: str = "") -> int | Blocked:
        """Send ``message`` from ``src`` across ``link``.

        Taps (eavesdroppers) see every attempt. Returns the delivery ticket,
        or a :class:`Blocked` record when the link drops the message.
        """
        self.transmissions += 1
        for tap in self.taps:
            tap(link, src, message, self.now)
        if self.blocking(link, src, message, kind, self.now, rng or self.rng):
            self.blocked += 1
            return Blocked(link.id, kind, self.now)
        return self.schedule(self.now + link.latency, kind, target=link.other(src),
                             payload=message, action=on_deliver, detail=detail)

    def relay(self, topo, path: Sequence[NodeId], message: Any, kind: str,
              on_arrival: Callable[[Event], None], rng: RngStream | None = None,
              detail: str = "") -> None:
        """Carry ``message`` hop by hop along ``path``; each hop may be blocked.

        Intermediate nodes forward the message unopened. ``on_arrival`` runs
        at the final node; a block anywhere silently loses the message.
        """
        if len(path) == 1:
            self.schedule(self.now, kind, target=path[0], payload=message,
                          action=on_arrival, detail=detail)
            return

        def hop(i: int):
            link = topo.link_between(path[i], path[i + 1])
            last = i + 1 == len(path) - 1
            self.transmit(link, path[i], message, kind=kind, rng=rng, detail=detail,
                          on_deliver=on_arrival if last else (lambda ev: hop(i + 1)))

        hop(0)

    def run_until(self, t_end: float) -> list[TraceRecord]:
        """Process every live event with ``fire_time <= t_end`` and return them in order."""
        if t_end < self.now:
            raise PastTime(f"t_end {t_end} < now {self.now}")
        out: list[TraceRecord] = []
        while self._queue and self._queue[0][0] <= t_end:
            fire_time, _, ticket, event = heapq.heappop(self._queue)
            if self._live.pop(ticket, None) is None:
                continue
            self.now = fire_time
            record = TraceRecord(fire_time, "" if event.target is None else str(event.target),
                                 event.kind, event.detail)
            out.append(record)
            self.trace.append(record)
            if event.action is not None:
                event.action(event)
        if t_end != float("inf"):
            self.now = t_end
        return out

    def run(self) -> list[TraceRecord]:
        return self.run_until(float("inf"))


def trace_to_csv(records: Sequence[TraceRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["time", "target", "kind", "detail"])
    for r in records:
        writer.writerow([format_float(r.time), r.target, r.kind, r.detail])
    return buf.getvalue()


def format_float(x: float) -> str:
    """Platform-stable float rendering for CSV output."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".12g")


def run_trials(fn: Callable[[int], Any], trials: int, workers: int = 1) -> list[Any]:
    """Run ``fn(i)`` for every trial index; results keep index order.

    ``fn`` must derive all randomness from its index (typically
    ``RngStream(seed, i)``), so the output does not depend on ``workers``.
    """
    if workers <= 1:
        return [fn(i) for i in range(trials)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(trials), chunksize=max(1, trials // (4 * workers))))

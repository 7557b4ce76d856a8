"""Software-in-the-loop pacing: buffer events that were computed early and
release them at the wall-clock instant corresponding to their simulated
date (wall = epoch + t x scale).

Wall instants are float seconds on the monotonic clock. Releases are never
early: the loop sleeps to just short of the due instant and busy-waits the
rest. Events later than the tolerance go to the configured late policy.
"""

from __future__ import annotations

import time as _wall
from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Callable, Iterable, Optional

from .simtime import SimTime

DROP = "drop"
RELEASE_IMMEDIATELY = "release_immediately"
ABORT = "abort"
POLICIES = (DROP, RELEASE_IMMEDIATELY, ABORT)

_SLEEP_MARGIN = 0.0005     # sleep until due - margin, then spin


class PacingViolation(RuntimeError):
    def __init__(self, event, lateness_us: float):
        super().__init__(f"pacing violation: event {event!r} late by {lateness_us:.0f}us")
        self.event = event
        self.lateness_us = lateness_us


@dataclass(frozen=True)
class PacingConfig:
    scale: float = 1.0                 # wall seconds per simulated second
    epoch: float = 0.0                 # monotonic reference instant
    late_policy: str = RELEASE_IMMEDIATELY
    tolerance_us: float = 1000.0

    def __post_init__(self):
        if not (self.scale > 0 and self.scale == self.scale and self.scale != float("inf")):
            raise ValueError("scale must be finite and positive")
        if self.tolerance_us < 0:
            raise ValueError("tolerance must be >= 0")
        if self.late_policy not in POLICIES:
            raise ValueError(f"unknown late policy {self.late_policy!r}")


@dataclass
class PacedEvent:
    event: object
    due_wall: float
    released_wall: Optional[float] = None
    lateness_us: float = 0.0


def map_sim_to_wall(t: SimTime, cfg: PacingConfig) -> float:
    """Wall instant (monotonic seconds) for simulated time ``t`` (us)."""
    return cfg.epoch + t * 1e-6 * cfg.scale


@dataclass
class PacingBuffer:
    _heap: list = field(default_factory=list)
    _seq: int = 0

    def __len__(self) -> int:
        return len(self._heap)

    def peek_due(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def schedule_release(self, ev, t: SimTime, cfg: PacingConfig) -> PacedEvent:
        paced = PacedEvent(ev, map_sim_to_wall(t, cfg))
        heappush(self._heap, (paced.due_wall, self._seq, paced))
        self._seq += 1
        return paced

    def release_due(self, now: float) -> list[PacedEvent]:
        out = []
        while self._heap and self._heap[0][0] <= now:
            _, _, paced = heappop(self._heap)
            paced.released_wall = now
            out.append(paced)
        return out


@dataclass
class PacingReport:
    on_time: int = 0
    late: int = 0
    dropped: int = 0
    max_lateness_us: float = 0.0
    latenesses_us: list = field(default_factory=list)

    def p99_lateness_us(self) -> float:
        if not self.latenesses_us:
            return 0.0
        ordered = sorted(self.latenesses_us)
        rank = max(1, -(-99 * len(ordered) // 100))     # ceil, nearest-rank
        return ordered[rank - 1]

    def as_metrics(self) -> dict:
        return {"pacing_on_time": self.on_time, "pacing_late": self.late,
                "pacing_dropped": self.dropped,
                "pacing_max_lateness_us": round(self.max_lateness_us, 1),
                "pacing_p99_lateness_us": round(self.p99_lateness_us(), 1)}


def handle_late(paced: PacedEvent, lateness_us: float, cfg: PacingConfig,
                report: PacingReport) -> Optional[PacedEvent]:
    """Apply the late policy; returns the event if it should still go out."""
    if cfg.late_policy == DROP:
        report.dropped += 1
        return None
    if cfg.late_policy == ABORT:
        raise PacingViolation(paced.event, lateness_us)
    report.late += 1
    paced.lateness_us = lateness_us
    return paced


def _wait_until(due: float) -> float:
    """Sleep-then-spin to ``due``; returns the first instant at/after it."""
    now = _wall.monotonic()
    if due - now > _SLEEP_MARGIN:
        _wall.sleep(due - now - _SLEEP_MARGIN)
    while True:
        now = _wall.monotonic()
        if now >= due:
            return now


def paced_run(events: Iterable[tuple[SimTime, object]], cfg: PacingConfig,
              consume: Callable[[object], None],
              report: Optional[PacingReport] = None) -> PacingReport:
    """Drive a stream of (sim_time, event) through the pacing buffer.

    The iterable is pulled on a producer thread, so per-event computation
    runs ahead of wall time and finished events buffer until due; the pacing
    loop itself only waits and releases. Event sim times must be
    nondecreasing (a kernel-ordered stream), so nothing produced later can
    jump ahead of an event already being waited on. The consumer never runs
    before an event's due instant and should be cheap.
    """
    import queue as _queue
    import threading as _threading

    report = report if report is not None else PacingReport()
    buffer = PacingBuffer()
    q: _queue.Queue = _queue.Queue()
    done = object()
    failure: list[BaseException] = []

    def produce():
        last = None
        try:
            for t, ev in events:
                if last is not None and t < last:
                    raise ValueError(f"paced stream went backwards: {t} after {last}")
                last = t
                q.put((t, ev))
        except BaseException as e:
            failure.append(e)
        finally:
            q.put(done)

    _threading.Thread(target=produce, daemon=True).start()
    exhausted = False
    while True:
        if not len(buffer):
            if exhausted:
                break
            item = q.get()
            if item is done:
                exhausted = True
                continue
            buffer.schedule_release(item[1], item[0], cfg)
            continue
        while not exhausted:
            try:
                item = q.get_nowait()
            except _queue.Empty:
                break
            if item is done:
                exhausted = True
            else:
                buffer.schedule_release(item[1], item[0], cfg)
        now = _wait_until(buffer.peek_due())
        for p in buffer.release_due(now):
            _account(p, cfg, report, consume)
    if failure:
        raise failure[0]
    return report


def _account(p: PacedEvent, cfg: PacingConfig, report: PacingReport,
             consume: Callable[[object], None]) -> None:
    lateness_us = (p.released_wall - p.due_wall) * 1e6
    report.latenesses_us.append(lateness_us)
    report.max_lateness_us = max(report.max_lateness_us, lateness_us)
    if lateness_us > cfg.tolerance_us:
        if handle_late(p, lateness_us, cfg, report) is None:
            return
    else:
        report.on_time += 1
    consume(p.event)

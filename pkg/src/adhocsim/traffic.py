"""Application traffic sources: constant-bitrate, bursty, and trace-driven.

Timing conventions (fixed, and relied on by tests):
- cbr at rate r fires at k * round(1e6/r) for k = 1, 2, ...
- bursty spaces packets inter_packet apart within a burst; after the last
  packet of a burst, the next burst's first packet follows idle_gap +
  inter_packet later. Example: burst_len 5, inter_packet 10ms, idle_gap 1s
  gives packets at 10..50ms and 1060..1100ms; the 11th would land at 2110ms.
- trace fires at the scheduled absolute times, then goes passive.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .devs import Atomic, Event
from .packets import DATA, Packet, synth_payload
from .simtime import INFINITY, SimTime

CBR = "cbr"
BURSTY = "bursty"
TRACE = "trace"

DEFAULT_TTL = 32


@dataclass(frozen=True)
class TrafficSpec:
    kind: str
    dst: int = 0
    payload_len: int = 64
    rate: float = 1.0                      # cbr: packets per second
    burst_len: int = 1                     # bursty
    idle_gap: SimTime = 1_000_000          # bursty: silence between bursts, us
    inter_packet: SimTime = 10_000         # bursty: spacing inside a burst, us
    schedule: tuple = ()                   # trace: ((time_us, dst, payload_len), ...)
    ttl: int = DEFAULT_TTL

    def __post_init__(self):
        if self.kind not in (CBR, BURSTY, TRACE):
            raise ValueError(f"unknown traffic kind {self.kind!r}")
        if self.kind == CBR and self.rate <= 0:
            raise ValueError("cbr rate must be positive")
        if self.kind == BURSTY:
            if self.burst_len < 1 or self.inter_packet < 1 or self.idle_gap < 0:
                raise ValueError("bursty needs burst_len >= 1, inter_packet >= 1us, idle_gap >= 0")
        if self.kind == TRACE:
            times = [t for t, _, _ in self.schedule]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("trace schedule times must be strictly increasing")

    def period(self) -> int:
        return max(1, round(1e6 / self.rate))


@dataclass
class TrafficState:
    next_time: SimTime
    count: int = 0          # packets emitted so far; doubles as seq
    burst_pos: int = 0
    now: SimTime = 0        # local clock, maintained by the wrapping atomic


def initial_traffic_state(spec: TrafficSpec) -> TrafficState:
    if spec.kind == CBR:
        return TrafficState(spec.period())
    if spec.kind == BURSTY:
        return TrafficState(spec.inter_packet)
    return TrafficState(spec.schedule[0][0] if spec.schedule else INFINITY)


def traffic_next(spec: TrafficSpec, state: TrafficState, src: int) -> tuple[Optional[Packet], SimTime, TrafficState]:
    """Emit the packet due at ``state.next_time`` and advance the schedule.

    Returns (packet or None, next firing time, new state).
    """
    now = state.next_time
    if now == INFINITY:
        return None, INFINITY, state
    if spec.kind == CBR:
        pkt = _packet(spec, src, spec.dst, spec.payload_len, state.count, now)
        return pkt, now + spec.period(), TrafficState(now + spec.period(), state.count + 1)
    if spec.kind == BURSTY:
        pkt = _packet(spec, src, spec.dst, spec.payload_len, state.count, now)
        pos = state.burst_pos + 1
        if pos >= spec.burst_len:
            gap, pos = spec.idle_gap + spec.inter_packet, 0
        else:
            gap = spec.inter_packet
        return pkt, now + gap, TrafficState(now + gap, state.count + 1, pos)
    # trace
    _, dst, length = spec.schedule[state.count]
    pkt = _packet(spec, src, dst, length, state.count, now)
    nxt = spec.schedule[state.count + 1][0] if state.count + 1 < len(spec.schedule) else INFINITY
    return pkt, nxt, TrafficState(nxt, state.count + 1)


def _packet(spec: TrafficSpec, src: int, dst: int, length: int, seq: int, now: SimTime) -> Packet:
    return Packet(DATA, src, dst, seq, spec.ttl, length, now,
                  payload=synth_payload(src, dst, seq, length))


class TrafficGen(Atomic):
    """Emits fully-formed data packets on ``send`` at the spec's times."""

    def __init__(self, spec: TrafficSpec, src: int):
        super().__init__()
        self.spec = spec
        self.src = src
        self.out_port("send", schema="pkt")

    def initial_state(self):
        return initial_traffic_state(self.spec)

    def time_advance(self, state: TrafficState):
        return INFINITY if state.next_time == INFINITY else state.next_time - state.now

    def output(self, state: TrafficState):
        pkt, _, _ = traffic_next(self.spec, state, self.src)
        return [Event("send", pkt.encode())] if pkt is not None else []

    def internal(self, state: TrafficState):
        fired_at = state.next_time
        _, _, new_state = traffic_next(self.spec, state, self.src)
        return replace(new_state, now=fired_at)

    def external(self, state, elapsed, events):
        return replace(state, now=state.now + elapsed)

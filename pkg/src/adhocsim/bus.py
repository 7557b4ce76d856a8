"""Protocol converters that make external event endpoints composable as
ordinary atomics, a binary frame format for talking to them, and the
conservative time-synchronization handshake (request / report / grant).

An *endpoint* is anything implementing the small ``Endpoint`` duck type
below: it reports its next local event time and executes up to a granted
time, returning (time, port, payload) outputs. ``wrap`` turns a described
endpoint into an ``Atomic`` so it can be coupled and validated like any
native model; conservative causality is enforced at that boundary, and a
violation aborts the run.
"""

from __future__ import annotations

import struct
import time as _wall
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol

from .devs import Atomic, Event
from .simtime import INFINITY, SimTime

MAGIC = b"\xde\x55"
VERSION = 1

MSG_EVENT = 0
MSG_NEXT_TIME_REQUEST = 1
MSG_NEXT_TIME_GRANT = 2
MSG_ACK = 3
MSG_FAULT = 4
_MSG_NAMES = {MSG_EVENT: "event", MSG_NEXT_TIME_REQUEST: "next_time_request",
              MSG_NEXT_TIME_GRANT: "next_time_grant", MSG_ACK: "ack", MSG_FAULT: "fault"}

_INF_WIRE = 0xFFFF_FFFF_FFFF_FFFF
_HEAD = struct.Struct("<2sBBIQ")           # magic, version, msg_type, endpoint_id, time_us

UNTIMED = "untimed"
DISCRETE_TIME = "discrete_time"
DISCRETE_EVENT = "discrete_event"

VCS_SIDE = "vcs_side"
SIMULATOR_SIDE = "simulator_side"


class BusError(ValueError):
    pass


class CausalityFault(RuntimeError):
    """An endpoint produced a timestamp below its last granted time."""


@dataclass(frozen=True)
class BusMessage:
    msg_type: int
    time: SimTime = 0
    endpoint_id: int = 0
    port_name: str = ""
    payload: bytes = b""


def encode_bus(msg: BusMessage) -> bytes:
    if msg.msg_type not in _MSG_NAMES:
        raise BusError(f"unknown msg_type {msg.msg_type}")
    t = _INF_WIRE if msg.time == INFINITY else msg.time
    if not 0 <= t <= _INF_WIRE:
        raise BusError(f"time {msg.time} out of wire range")
    name = msg.port_name.encode()
    if len(name) > 0xFFFF:
        raise BusError("port name too long")
    if len(msg.payload) > 0xFFFF_FFFF:
        raise BusError("payload too long")
    return (_HEAD.pack(MAGIC, VERSION, msg.msg_type, msg.endpoint_id, t)
            + struct.pack("<H", len(name)) + name
            + struct.pack("<I", len(msg.payload)) + msg.payload)


def decode_bus(data: bytes) -> BusMessage:
    if len(data) < _HEAD.size + 6:
        raise BusError(f"frame truncated at {len(data)} bytes")
    magic, version, msg_type, endpoint_id, t = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise BusError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BusError(f"unsupported version {version}")
    if msg_type not in _MSG_NAMES:
        raise BusError(f"unknown msg_type {msg_type}")
    off = _HEAD.size
    (name_len,) = struct.unpack_from("<H", data, off)
    off += 2
    if len(data) < off + name_len + 4:
        raise BusError("frame truncated inside port name")
    name = data[off:off + name_len].decode()
    off += name_len
    (pay_len,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) != off + pay_len:
        raise BusError(f"frame length {len(data)} does not match header ({off + pay_len})")
    payload = data[off:off + pay_len]
    time_us: SimTime = INFINITY if t == _INF_WIRE else t
    return BusMessage(msg_type, time_us, endpoint_id, name, payload)


def read_frame(sock) -> bytes:
    """Read one self-delimiting frame from a stream socket."""

    def exact(n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                raise BusError("stream closed mid-frame")
            buf += chunk
        return buf

    head = exact(_HEAD.size)
    name_len = struct.unpack("<H", exact(2))[0]
    name = exact(name_len)
    pay_len = struct.unpack("<I", exact(4))[0]
    return head + struct.pack("<H", name_len) + name + struct.pack("<I", pay_len) + exact(pay_len)


@dataclass(frozen=True)
class ConverterContract:
    endpoint_id: int
    inputs: tuple = ()                     # (port_name, schema) pairs
    outputs: tuple = ()
    time_nature: str = DISCRETE_EVENT
    step: SimTime = 0                      # discrete_time only

    def __post_init__(self):
        if self.time_nature not in (UNTIMED, DISCRETE_TIME, DISCRETE_EVENT):
            raise BusError(f"unknown time nature {self.time_nature!r}")
        if self.time_nature == DISCRETE_TIME and self.step <= 0:
            raise BusError("discrete_time needs a positive step")


class Endpoint(Protocol):
    def next_time(self) -> SimTime: ...
    def collect(self, granted: SimTime) -> list[tuple[SimTime, str, bytes]]: ...
    def advance(self, granted: SimTime) -> None: ...
    def receive(self, time: SimTime, port: str, payload: bytes) -> list[tuple[SimTime, str, bytes]]: ...


@dataclass
class _WrapState:
    now: SimTime = 0
    last_grant: SimTime = 0
    tn: SimTime = INFINITY
    outbox: list = field(default_factory=list)     # (time, port, payload), time >= now


class BusAtomic(Atomic):
    """A wrapped endpoint, presentable to the kernel as a plain atomic.

    ``collect`` (side-effect free) supplies the outputs for the granted time
    and ``advance`` commits the endpoint transition, mirroring the output /
    internal split of a native atomic, so a wrapped deterministic automaton
    leaves the same trace as its native twin. Outputs stamped below the last
    grant raise CausalityFault and abort the run. Untimed endpoints never
    schedule on their own and their outputs are stamped at the grant;
    discrete_time endpoints fire at multiples of their step.
    """

    def __init__(self, contract: ConverterContract, endpoint: Endpoint):
        super().__init__()
        self.contract = contract
        self.endpoint = endpoint
        for name, schema in contract.inputs:
            self.in_port(name, schema=schema)
        for name, schema in contract.outputs:
            self.out_port(name, schema=schema)

    def initial_state(self) -> _WrapState:
        return _WrapState(tn=self._local_next(0))

    def _local_next(self, now: SimTime) -> SimTime:
        if self.contract.time_nature == UNTIMED:
            return INFINITY
        if self.contract.time_nature == DISCRETE_TIME:
            return (now // self.contract.step + 1) * self.contract.step
        return max(self.endpoint.next_time(), now)

    def _stamp(self, outs, granted: SimTime) -> list[tuple[SimTime, str, bytes]]:
        stamped = []
        for t, port, payload in outs:
            if self.contract.time_nature == UNTIMED:
                t = granted
            if t < granted:
                raise CausalityFault(
                    f"endpoint {self.contract.endpoint_id} emitted time {t} "
                    f"below grant {granted}")
            stamped.append((t, port, payload))
        return stamped

    def time_advance(self, state: _WrapState) -> SimTime:
        due = min((t for t, _, _ in state.outbox), default=INFINITY)
        return min(due, state.tn) - state.now

    def output(self, state: _WrapState) -> list[Event]:
        t = state.now + self.time_advance(state)
        outs = [Event(port, payload) for when, port, payload in state.outbox if when == t]
        if t == state.tn:
            outs.extend(Event(port, payload) for when, port, payload
                        in self._stamp(self.endpoint.collect(t), t) if when == t)
        return outs

    def internal(self, state: _WrapState) -> _WrapState:
        t = state.now + self.time_advance(state)
        keep = [o for o in state.outbox if o[0] != t]
        st = replace(state, now=t, outbox=keep, last_grant=t)
        if t == state.tn:
            late = [o for o in self._stamp(self.endpoint.collect(t), t) if o[0] > t]
            self.endpoint.advance(t)
            st.outbox = keep + late
            st.tn = self._local_next(t)
        return st

    def external(self, state: _WrapState, elapsed: SimTime, events: list[Event]) -> _WrapState:
        t = state.now + elapsed
        st = replace(state, now=t, last_grant=max(state.last_grant, t),
                     outbox=list(state.outbox))
        for ev in events:
            st.outbox.extend(self._stamp(self.endpoint.receive(t, ev.port, ev.payload), t))
        if self.contract.time_nature == DISCRETE_EVENT:
            st.tn = max(self.endpoint.next_time(), t)
        return st


def wrap(contract: ConverterContract, endpoint: Endpoint) -> BusAtomic:
    return BusAtomic(contract, endpoint)


class Bus:
    """Barrier-style coordinator for a set of registered endpoints.

    One grant round: ask every endpoint for its next local time, grant
    min(kernel tn, all reports) to all of them, and collect the outputs they
    produce at the grant. Endpoints that fail to answer within the wall-clock
    timeout fault the round.
    """

    def __init__(self, timeout: float = 5.0):
        self.timeout = timeout
        self.endpoints: dict[int, Endpoint] = {}
        self.last_grant: SimTime = 0
        self.log: list[tuple[SimTime, int, str, bytes]] = []

    def register(self, endpoint_id: int, endpoint: Endpoint) -> None:
        if endpoint_id in self.endpoints:
            raise BusError(f"endpoint id {endpoint_id} already registered")
        self.endpoints[endpoint_id] = endpoint

    def _ask(self, eid: int, ep: Endpoint) -> SimTime:
        deadline = _wall.monotonic() + self.timeout
        t = ep.next_time()
        if t is None:                       # an endpoint may defer; poll until deadline
            while t is None and _wall.monotonic() < deadline:
                t = ep.next_time()
            if t is None:
                raise BusError(f"endpoint {eid} timed out answering next_time_request")
        return t

    def sync_advance(self, kernel_tn: SimTime) -> SimTime:
        reports = {eid: self._ask(eid, ep) for eid, ep in self.endpoints.items()}
        granted = min([kernel_tn] + list(reports.values()))
        if granted == INFINITY:
            return INFINITY
        for eid, ep in self.endpoints.items():
            if reports[eid] <= granted:
                for t, port, payload in ep.collect(granted):
                    if t < granted:
                        raise CausalityFault(
                            f"endpoint {eid} emitted time {t} below grant {granted}")
                    self.log.append((t, eid, port, payload))
                ep.advance(granted)
        self.last_grant = granted
        return granted


@dataclass(frozen=True)
class BusRole:
    role: str
    mode: str
    time_filter: bool      # hold outputs until the grant reaches their stamp
    route: Optional[str]   # simulator_side target, None when inert


def bus_role(role: str, mode: str) -> BusRole:
    """Converter behavior per bus side and run mode."""
    from .vcs import EXECUTION, EMULATION, SIMULATION    # local: avoid cycle

    if role not in (VCS_SIDE, SIMULATOR_SIDE):
        raise BusError(f"unknown bus role {role!r}")
    if mode not in (EXECUTION, EMULATION, SIMULATION):
        raise BusError(f"unknown mode {mode!r}")
    if role == VCS_SIDE:
        return BusRole(role, mode, time_filter=(mode == SIMULATION), route=None)
    if mode == SIMULATION:
        return BusRole(role, mode, time_filter=False, route="channel")
    if mode == EMULATION:
        return BusRole(role, mode, time_filter=False, route="loopback")
    return BusRole(role, mode, time_filter=False, route=None)    # execution: inert


class ScriptedEndpoint:
    """Deterministic test endpoint.

    ``plan`` maps local event times to lists of (port, payload) to emit when
    granted that time; ``on_receive`` optionally maps inputs to immediate
    outputs. ``skew`` subtracts from emitted stamps to provoke causality
    faults on purpose.
    """

    def __init__(self, plan: dict[SimTime, list[tuple[str, bytes]]],
                 on_receive=None, skew: SimTime = 0):
        self.plan = dict(sorted(plan.items()))
        self.on_receive = on_receive
        self.skew = skew
        self.granted: list[SimTime] = []

    def next_time(self) -> SimTime:
        return min(self.plan, default=INFINITY)

    def collect(self, granted: SimTime):
        return [(t - self.skew, port, payload)
                for t in self.plan if t <= granted
                for port, payload in self.plan[t]]

    def advance(self, granted: SimTime) -> None:
        self.granted.append(granted)
        for t in [t for t in self.plan if t <= granted]:
            del self.plan[t]

    def receive(self, time: SimTime, port: str, payload: bytes):
        if self.on_receive is None:
            return []
        return [(t - self.skew, p, b) for t, p, b in self.on_receive(time, port, payload)]

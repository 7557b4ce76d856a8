"""Abstract simulator for the modeling layer: a coordinator tree over a
validated coupled model, with deterministic event scheduling.

Scheduling follows the classic single-transition discipline: each step picks
exactly one due unit, either the internal transition of the highest-priority
imminent leaf or the delivery of one injected event to one leaf. Priority
within a time point is the depth-first rank of the leaf (children visited in
their parent's select_order), which makes tie-breaking total, hierarchical
and reproducible. Outputs of an internal transition are routed along the
precomputed coupling closure and applied as external transitions within the
same unit, receivers in rank order.

Threading: the kernel is single-threaded. ``inject`` is the only call that
may be issued from another thread; events land in a staging queue that the
kernel drains at unit boundaries.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from hashlib import blake2b
from heapq import heappop, heappush
from typing import Callable, Optional

from .devs import Atomic, Coupled, Event, ModelError, iter_atomics, resolve_routes, validate_coupling
from .simtime import INFINITY, SimTime, add_time, check_time, fmt_time

ROOT_PATH = "root"

KIND_INTERNAL = "internal"
KIND_EXTERNAL = "external"
KIND_OUTPUT = "output"
KIND_INJECTED = "injected"


class KernelError(RuntimeError):
    """Simulation aborted: a model or scheduling contract was violated."""

    def __init__(self, message: str, path: str = "", time: Optional[SimTime] = None):
        where = f" [{path} @ {fmt_time(time)}us]" if path else ""
        super().__init__(message + where)
        self.path = path
        self.time = time


class StaleInjectionError(KernelError):
    """An injected event carries a timestamp behind the kernel clock; this
    signals a synchronization fault in whatever fed the event in."""


def payload_digest(payload: bytes) -> str:
    return blake2b(payload, digest_size=8).hexdigest()


@dataclass(frozen=True)
class TraceRecord:
    time: SimTime
    source: str
    kind: str
    port: Optional[str]
    digest: Optional[str]

    def line(self) -> str:
        return f"{self.time} {self.source} {self.kind} {self.port or '-'} {self.digest or '-'}"


def parse_trace_line(line: str) -> TraceRecord:
    parts = line.split()
    if len(parts) != 5:
        raise ValueError(f"malformed trace line: {line!r}")
    t, source, kind, port, digest = parts
    return TraceRecord(int(t), source, kind, None if port == "-" else port,
                       None if digest == "-" else digest)


@dataclass(frozen=True)
class InjectReceipt:
    seq: int
    time: SimTime


class Simulator:
    """Leaf simulator owning one atomic model's state and times."""

    __slots__ = ("atomic", "path", "rank", "state", "t_last", "t_next", "version")

    def __init__(self, atomic: Atomic, path: str, rank: int):
        self.atomic = atomic
        self.path = path
        self.rank = rank
        self.state = atomic.initial_state()
        self.t_last: SimTime = 0
        self.t_next: SimTime = INFINITY
        self.version = 0


class Coordinator:
    """Structural tree node mirroring one coupled model."""

    __slots__ = ("name", "path", "model", "children")

    def __init__(self, name: str, path: str, model: Coupled):
        self.name = name
        self.path = path
        self.model = model
        self.children: dict[str, "Coordinator | Simulator"] = {}

    def depth(self) -> int:
        kids = [c.depth() for c in self.children.values() if isinstance(c, Coordinator)]
        return 1 + max(kids, default=1)


class RootCoordinator:
    """Drives a validated coupled model: scheduling, routing, injection, trace."""

    def __init__(self, model: Coupled, trace_sink: Optional[Callable[[TraceRecord], None]] = None):
        errors = validate_coupling(model)
        if errors:
            raise ModelError("invalid model: " + "; ".join(map(str, errors)))
        self.model = model
        self.clock: SimTime = 0
        self.trace_sink = trace_sink
        self.output_listener: Optional[Callable[[SimTime, str, Event], None]] = None
        self.events_per_second_limit: Optional[int] = None

        self.leaves: list[Simulator] = []
        self._by_path: dict[str, Simulator] = {}
        self.tree = Coordinator(ROOT_PATH, ROOT_PATH, model)
        for parts, atomic in iter_atomics(model):
            leaf = Simulator(atomic, "/".join(parts), len(self.leaves))
            if leaf.path in self._by_path:
                raise ModelError(f"two atomics share the effective path {leaf.path!r}")
            self.leaves.append(leaf)
            self._by_path[leaf.path] = leaf
            node = self.tree
            for i, part in enumerate(parts[:-1]):
                nxt = node.children.get(part)
                if nxt is None:
                    sub = node.model.component(part)
                    assert isinstance(sub, Coupled)
                    nxt = Coordinator(part, "/".join(parts[: i + 1]), sub)
                    node.children[part] = nxt
                assert isinstance(nxt, Coordinator)
                node = nxt
            node.children[parts[-1]] = leaf

        routes = resolve_routes(model)
        self._input_routes: dict[str, list[tuple[Simulator, str]]] = {
            port: [(self._by_path["/".join(p)], q) for p, q in targets]
            for port, targets in routes.from_input.items()
        }
        self._output_routes: dict[tuple[int, str], tuple[list[tuple[Simulator, str]], list[str]]] = {}
        for (path, port), (targets, root_outs) in routes.from_atomic.items():
            leaf = self._by_path["/".join(path)]
            dests = [(self._by_path["/".join(p)], q) for p, q in targets]
            self._output_routes[(leaf.rank, port)] = (dests, root_outs)

        self._heap: list[tuple[SimTime, int, int, Simulator]] = []
        for leaf in self.leaves:
            self._reschedule(leaf, 0)

        # injected deliveries: (time, target rank, seq, leaf|None, port|None, group)
        self._deliveries: list[tuple[SimTime, int, int, Optional[Simulator], Optional[str], "_Injected"]] = []
        self._staged: deque = deque()
        self._inject_lock = threading.Lock()
        self._inject_seq = 0
        self._window_start: SimTime = 0
        self._window_count = 0

    # -- structure -----------------------------------------------------

    def find_leaf(self, path: str) -> Simulator:
        try:
            return self._by_path[path]
        except KeyError:
            raise KeyError(f"no simulator leaf at {path!r}") from None

    # -- scheduling core -----------------------------------------------

    def _reschedule(self, leaf: Simulator, now: SimTime) -> None:
        ta = leaf.atomic.time_advance(leaf.state)
        if ta != INFINITY and (not isinstance(ta, int) or ta < 0):
            raise KernelError(f"time_advance returned {ta!r}", leaf.path, now)
        leaf.t_last = now
        leaf.t_next = add_time(now, ta)
        leaf.version += 1
        if leaf.t_next != INFINITY:
            heappush(self._heap, (leaf.t_next, leaf.rank, leaf.version, leaf))

    def _peek_internal(self) -> Optional[tuple[SimTime, int, Simulator]]:
        while self._heap:
            t, rank, version, leaf = self._heap[0]
            if version == leaf.version and leaf.t_next == t:
                return t, rank, leaf
            heappop(self._heap)
        return None

    def next_event_time(self) -> SimTime:
        """Earliest pending unit: imminent internal or queued injection."""
        self._drain_staged()
        head = self._peek_internal()
        t = head[0] if head else INFINITY
        if self._deliveries and self._deliveries[0][0] < t:
            t = self._deliveries[0][0]
        return t

    def step(self) -> list[TraceRecord]:
        """Process exactly one due unit; returns the records it emitted."""
        self._drain_staged()
        head = self._peek_internal()
        internal_key = (head[0], head[1]) if head else None
        delivery_key = (self._deliveries[0][0], self._deliveries[0][1]) if self._deliveries else None
        if internal_key is None and delivery_key is None:
            raise KernelError("step called with no pending events (next event time is infinite)")

        # Internal wins rank ties: an external arriving exactly at a leaf's
        # imminent time applies to the post-internal state.
        records: list[TraceRecord] = []
        if delivery_key is not None and (internal_key is None or delivery_key < internal_key):
            t, _, _, leaf, port, group = heappop(self._deliveries)
            self._advance_clock(t)
            if not group.recorded:
                group.recorded = True
                self._emit(records, TraceRecord(t, ROOT_PATH, KIND_INJECTED, group.port, group.digest))
            if leaf is not None:
                ev = Event(port, group.payload, t, group.schema)
                self._deliver(records, leaf, t, [ev])
        else:
            assert head is not None
            t, _, leaf = head
            heappop(self._heap)
            self._advance_clock(t)
            self._run_internal(records, leaf, t)
        return records

    def run_until(self, t_end: SimTime, collect: bool = True) -> list[TraceRecord]:
        """Step while the next unit is due at or before ``t_end``."""
        if t_end != INFINITY:
            check_time(t_end)
        if t_end < self.clock:
            raise KernelError(f"run_until({fmt_time(t_end)}) is behind the clock {fmt_time(self.clock)}")
        out: list[TraceRecord] = []
        while True:
            t = self.next_event_time()
            if t == INFINITY or t > t_end:
                break
            records = self.step()
            if collect:
                out.extend(records)
        return out

    def inject(self, ev: Event) -> InjectReceipt:
        """Queue an external event for a top-level input port.

        Safe to call from other threads; the kernel folds staged events in at
        unit boundaries. Stale timestamps (behind the clock) are rejected.
        """
        port = self.model.input_ports.get(ev.port)
        if port is None:
            raise KernelError(f"inject: {ev.port!r} is not a top-level input port")
        if ev.time is None or ev.time == INFINITY:
            raise KernelError(f"inject on {ev.port!r}: a finite timestamp is required")
        check_time(ev.time)
        schema = ev.schema if ev.schema is not None else port.schema
        if schema != port.schema:
            raise KernelError(f"inject on {ev.port!r}: schema {schema!r} does not match {port.schema!r}")
        if ev.time < self.clock:
            raise StaleInjectionError(
                f"injected event at {fmt_time(ev.time)}us is behind the clock {fmt_time(self.clock)}us",
                ev.port, ev.time)
        with self._inject_lock:
            seq = self._inject_seq
            self._inject_seq += 1
        self._staged.append((ev.time, seq, ev.port, ev.payload, schema))
        return InjectReceipt(seq, ev.time)

    # -- internals -----------------------------------------------------

    def _drain_staged(self) -> None:
        while True:
            try:
                time, seq, port, payload, schema = self._staged.popleft()
            except IndexError:
                return
            if time < self.clock:
                raise StaleInjectionError(
                    f"staged event at {fmt_time(time)}us is behind the clock {fmt_time(self.clock)}us",
                    port, time)
            group = _Injected(port, payload, schema, payload_digest(payload))
            targets = self._input_routes.get(port, [])
            if not targets:
                heappush(self._deliveries, (time, -1, seq, None, None, group))
            for leaf, dest_port in targets:
                heappush(self._deliveries, (time, leaf.rank, seq, leaf, dest_port, group))

    def _advance_clock(self, t: SimTime) -> None:
        if t < self.clock:
            raise KernelError(f"clock would move backwards: {t} < {self.clock}")
        self.clock = t
        if self.events_per_second_limit is not None:
            if t - self._window_start >= 1_000_000:
                self._window_start = t - (t % 1_000_000)
                self._window_count = 0
            self._window_count += 1
            if self._window_count > self.events_per_second_limit:
                raise KernelError(
                    f"event ceiling exceeded: >{self.events_per_second_limit} units in one simulated second",
                    ROOT_PATH, t)

    def _emit(self, records: list[TraceRecord], rec: TraceRecord) -> None:
        records.append(rec)
        if self.trace_sink is not None:
            self.trace_sink(rec)

    def _run_internal(self, records: list[TraceRecord], leaf: Simulator, t: SimTime) -> None:
        atomic = leaf.atomic
        outs = atomic.output(leaf.state)
        stamped: list[tuple[Event, str]] = []
        for ev in outs:
            port = atomic.output_ports.get(ev.port)
            if port is None:
                raise KernelError(f"output on undeclared port {ev.port!r}", leaf.path, t)
            schema = ev.schema if ev.schema is not None else port.schema
            if schema != port.schema:
                raise KernelError(
                    f"output schema {schema!r} does not match port {ev.port!r} schema {port.schema!r}",
                    leaf.path, t)
            if not isinstance(ev.payload, (bytes, bytearray)):
                raise KernelError(f"payload on port {ev.port!r} is not bytes", leaf.path, t)
            ev.time = t
            ev.schema = schema
            digest = payload_digest(ev.payload)
            stamped.append((ev, digest))
            self._emit(records, TraceRecord(t, leaf.path, KIND_OUTPUT, ev.port, digest))

        leaf.state = atomic.internal(leaf.state)
        self._emit(records, TraceRecord(t, leaf.path, KIND_INTERNAL, None, None))
        self._reschedule(leaf, t)

        if not stamped:
            return
        bags: dict[int, tuple[Simulator, list[tuple[Event, str]]]] = {}
        for ev, digest in stamped:
            dests, root_outs = self._output_routes.get((leaf.rank, ev.port), ([], []))
            for dest, dest_port in dests:
                translated = Event(dest_port, ev.payload, t, ev.schema)
                bags.setdefault(dest.rank, (dest, []))[1].append((translated, digest))
            if root_outs and self.output_listener is not None:
                for own_port in root_outs:
                    self.output_listener(t, own_port, ev)
        for rank in sorted(bags):
            dest, pairs = bags[rank]
            self._deliver(records, dest, t, [p[0] for p in pairs], [p[1] for p in pairs])

    def _deliver(self, records: list[TraceRecord], leaf: Simulator, t: SimTime,
                 events: list[Event], digests: Optional[list[str]] = None) -> None:
        elapsed = t - leaf.t_last
        if elapsed < 0 or t > leaf.t_next:
            raise KernelError(
                f"elapsed-time bound violated: t_last={fmt_time(leaf.t_last)} t_next={fmt_time(leaf.t_next)}",
                leaf.path, t)
        if digests is None:
            digests = [payload_digest(ev.payload) for ev in events]
        for ev, digest in zip(events, digests):
            self._emit(records, TraceRecord(t, leaf.path, KIND_EXTERNAL, ev.port, digest))
        leaf.state = leaf.atomic.external(leaf.state, elapsed, events)
        self._reschedule(leaf, t)


class _Injected:
    __slots__ = ("port", "payload", "schema", "digest", "recorded")

    def __init__(self, port: str, payload: bytes, schema: str, digest: str):
        self.port = port
        self.payload = payload
        self.schema = schema
        self.digest = digest
        self.recorded = False


def build_root(model: Coupled, trace_sink: Optional[Callable[[TraceRecord], None]] = None) -> RootCoordinator:
    """Validate ``model`` and stand up its coordinator tree, clock at zero."""
    return RootCoordinator(model, trace_sink=trace_sink)

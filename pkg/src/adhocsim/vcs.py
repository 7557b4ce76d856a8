"""Virtual communication stack: datagram sockets that look the same to the
application whether the network underneath is simulated in-process or the
real OS loopback stack.

Three modes:

- simulation: the per-node stack is a kernel atomic; sends become data
  packets handed to the routing engine, receives are queued per socket.
- emulation: same simulated network, but delivered payloads are also
  mirrored over real loopback datagrams as the run progresses.
- execution: no simulators at all; sends go straight onto loopback UDP with
  a deterministic node/port address mapping, one reader thread per socket.

Packets carry an inner datagram header (src_port, dst_port) so the stack can
demultiplex to sockets; the routing layer treats it as opaque payload.
"""

from __future__ import annotations

import socket as _socket
import struct
import threading
import time as _wall
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

from .devs import Atomic, Event
from .packets import DATA, Packet, RoutingTableEntry, decode_packet, is_fresher
from .simtime import INFINITY, SimTime

SIMULATION = "simulation"
EMULATION = "emulation"
EXECUTION = "execution"
MODES = (SIMULATION, EMULATION, EXECUTION)

APP_PORT = 5000            # well-known port the traffic generators talk to
DEFAULT_BASE_PORT = 20000
DEFAULT_MTU = 1500
DEFAULT_QUEUE_LIMIT = 1024

_DGRAM = struct.Struct("<HH")      # src_port, dst_port; prefixes the app payload
_LOOP = struct.Struct("<IHH")      # src_node, src_port, dst_port; loopback frame


class VcsError(ValueError):
    pass


def identity_bytes(src: int, dst: int, payload: bytes) -> bytes:
    """Mode-independent identity of one application datagram."""
    return struct.pack("<II", src, dst) + payload


def encode_datagram(src_port: int, dst_port: int, payload: bytes) -> bytes:
    return _DGRAM.pack(src_port, dst_port) + payload


def decode_datagram(data: bytes) -> tuple[int, int, bytes]:
    if len(data) < _DGRAM.size:
        raise VcsError(f"datagram truncated at {len(data)} bytes")
    src_port, dst_port = _DGRAM.unpack_from(data)
    return src_port, dst_port, data[_DGRAM.size:]


def encode_loopback(src_node: int, src_port: int, dst_port: int, payload: bytes) -> bytes:
    return _LOOP.pack(src_node, src_port, dst_port) + payload


def decode_loopback(data: bytes) -> tuple[int, int, int, bytes]:
    if len(data) < _LOOP.size:
        raise VcsError(f"loopback frame truncated at {len(data)} bytes")
    src_node, src_port, dst_port = _LOOP.unpack_from(data)
    return src_node, src_port, dst_port, data[_LOOP.size:]


def map_os_port(node_id: int, vcs_port: int, base_port: int = DEFAULT_BASE_PORT) -> int:
    """Deterministic loopback address of a virtual socket."""
    p = base_port + node_id * 256 + (vcs_port % 256)
    if p > 65535:
        raise VcsError(f"node {node_id} port {vcs_port} maps beyond the OS port space ({p})")
    return p


@dataclass(frozen=True)
class VirtualSocket:
    socket_id: int
    node_id: int
    port: int
    mode: str


@dataclass(frozen=True)
class VcsEvent:
    kind: str                                  # send | receive | routing_update
    time: SimTime
    socket: Optional[int] = None
    packet: Optional[tuple] = None             # (src, dst, payload) identity
    route_change: Optional[RoutingTableEntry] = None

    def __post_init__(self):
        if self.kind not in ("send", "receive", "routing_update"):
            raise VcsError(f"unknown event kind {self.kind!r}")
        if self.kind == "routing_update":
            if self.route_change is None or self.packet is not None:
                raise VcsError("routing_update carries route_change only")
        elif self.packet is None or self.route_change is not None:
            raise VcsError(f"{self.kind} carries packet only")


_RTUP = struct.Struct("<IIBIQB")


def encode_route_update(e: RoutingTableEntry) -> bytes:
    return _RTUP.pack(e.dest, e.next_hop, e.hop_count, e.dest_seq,
                      e.lifetime, 1 if e.valid else 0)


def decode_route_update(data: bytes) -> RoutingTableEntry:
    if len(data) != _RTUP.size:
        raise VcsError(f"route update must be {_RTUP.size} bytes, got {len(data)}")
    dest, nh, hops, seq, life, valid = _RTUP.unpack(data)
    return RoutingTableEntry(dest, nh, hops, seq, life, bool(valid))


def apply_routing_update(table: dict, delta: RoutingTableEntry) -> tuple[dict, bool]:
    """Freshness-guarded table merge; returns (new table, accepted)."""
    existing = table.get(delta.dest)
    if existing is not None and not is_fresher(existing, delta.dest_seq, delta.hop_count):
        return table, False
    out = dict(table)
    out[delta.dest] = delta
    return out, True


@dataclass
class SocketBox:
    socket_id: int
    port: int
    queue: deque = field(default_factory=deque)    # (src_node, src_port, payload)
    dropped: int = 0


@dataclass
class VcsState:
    now: SimTime = 0
    next_socket_id: int = 1
    seq: int = 0
    sockets: dict = field(default_factory=dict)    # port -> SocketBox
    table: dict = field(default_factory=dict)      # dest -> RoutingTableEntry
    events: list = field(default_factory=list)     # VcsEvent log
    stale_updates: int = 0
    outbox: list = field(default_factory=list)     # (port_name, bytes)


class VcsAtomic(Atomic):
    """One node's stack in simulation/emulation mode.

    ``app_send`` takes locally originated data packets (the packet payload is
    the application payload); they get wrapped with the inner datagram header
    and re-emitted on ``net_send`` toward the routing engine. ``net_deliver``
    unwraps arriving packets into per-socket FIFO queues. ``orig`` and
    ``recv`` are accounting taps carrying the mode-independent identity
    bytes; ``app_out`` re-emits delivered messages as loopback frames for the
    emulation mirror.
    """

    def __init__(self, node_id: int, mode: str = SIMULATION,
                 mtu: int = DEFAULT_MTU, queue_limit: int = DEFAULT_QUEUE_LIMIT):
        super().__init__()
        if mode not in (SIMULATION, EMULATION):
            raise VcsError(f"the kernel-resident stack runs in simulation or emulation, not {mode!r}")
        self.node_id = node_id
        self.mode = mode
        self.mtu = mtu
        self.queue_limit = queue_limit
        self.in_port("app_send", schema="pkt")
        self.in_port("net_deliver", schema="pkt")
        self.in_port("route_in", schema="rtup")
        self.out_port("net_send", schema="pkt")
        self.out_port("orig", schema="id")
        self.out_port("recv", schema="id")
        self.out_port("drop_nosock", schema="id")
        self.out_port("app_out", schema="frame")

    def initial_state(self) -> VcsState:
        st = VcsState()
        st.sockets[APP_PORT] = SocketBox(st.next_socket_id, APP_PORT)
        st.next_socket_id += 1
        return st

    def time_advance(self, state: VcsState) -> SimTime:
        return 0 if state.outbox else INFINITY

    def output(self, state: VcsState):
        return [Event(port, payload) for port, payload in state.outbox]

    def internal(self, state: VcsState) -> VcsState:
        return replace(state, outbox=[])

    def external(self, state: VcsState, elapsed: SimTime, events) -> VcsState:
        st = replace(state, now=state.now + elapsed, sockets=dict(state.sockets),
                     table=dict(state.table), events=list(state.events),
                     outbox=list(state.outbox))
        for ev in events:
            if ev.port == "app_send":
                self._on_app_send(st, decode_packet(ev.payload))
            elif ev.port == "net_deliver":
                self._on_net_deliver(st, decode_packet(ev.payload))
            elif ev.port == "route_in":
                self._on_route_update(st, decode_route_update(ev.payload))
        return st

    def _on_app_send(self, st: VcsState, pkt: Packet) -> None:
        if len(pkt.payload) > self.mtu:
            raise VcsError(f"payload {len(pkt.payload)} exceeds mtu {self.mtu}")
        ident = identity_bytes(self.node_id, pkt.dst, pkt.payload)
        st.outbox.append(("orig", ident))
        st.events.append(VcsEvent("send", st.now, st.sockets[APP_PORT].socket_id,
                                  (self.node_id, pkt.dst, pkt.payload)))
        if pkt.dst == self.node_id:
            self._enqueue(st, APP_PORT, self.node_id, APP_PORT, pkt.payload)
            return
        dgram = encode_datagram(APP_PORT, APP_PORT, pkt.payload)
        wire = Packet(DATA, self.node_id, pkt.dst, pkt.seq, pkt.ttl,
                      len(dgram), st.now, payload=dgram)
        st.outbox.append(("net_send", wire.encode()))

    def _on_net_deliver(self, st: VcsState, pkt: Packet) -> None:
        src_port, dst_port, payload = decode_datagram(pkt.payload)
        self._enqueue(st, dst_port, pkt.src, src_port, payload)

    def _enqueue(self, st: VcsState, dst_port: int, src_node: int,
                 src_port: int, payload: bytes) -> None:
        box = st.sockets.get(dst_port)
        ident = identity_bytes(src_node, self.node_id, payload)
        if box is None:
            st.outbox.append(("drop_nosock", ident))
            return
        box = SocketBox(box.socket_id, box.port, deque(box.queue), box.dropped)
        st.sockets[dst_port] = box
        if len(box.queue) >= self.queue_limit:
            box.queue.popleft()
            box.dropped += 1
        box.queue.append((src_node, src_port, payload))
        st.outbox.append(("recv", ident))
        st.outbox.append(("app_out", encode_loopback(src_node, src_port, dst_port, payload)))
        st.events.append(VcsEvent("receive", st.now, box.socket_id,
                                  (src_node, self.node_id, payload)))

    def _on_route_update(self, st: VcsState, delta: RoutingTableEntry) -> None:
        st.table, accepted = apply_routing_update(st.table, delta)
        if accepted:
            st.events.append(VcsEvent("routing_update", st.now, route_change=delta))
        else:
            st.stale_updates += 1


@dataclass(frozen=True)
class OsStackConfig:
    layers: int = 2
    per_layer_latency: SimTime = 0     # us added per layer per traversal
    mtu: int = DEFAULT_MTU


class OsStack(Atomic):
    """Modeled OS stack for the full_stack abstraction: each traversal (up
    from the stack toward the network, or down toward the application) costs
    layers x per_layer_latency and oversized datagrams are dropped."""

    def __init__(self, cfg: OsStackConfig = OsStackConfig()):
        super().__init__()
        self.cfg = cfg
        self.in_port("up_in", schema="pkt")
        self.in_port("down_in", schema="pkt")
        self.out_port("up_out", schema="pkt")
        self.out_port("down_out", schema="pkt")
        self.out_port("drop_mtu", schema="id")

    def initial_state(self):
        return {"now": 0, "pending": [], "seq": 0}    # pending: (due, seq, port, bytes)

    def time_advance(self, state) -> SimTime:
        return min((d for d, _, _, _ in state["pending"]), default=INFINITY) - state["now"]

    def output(self, state):
        due = state["now"] + self.time_advance(state)
        return [Event(port, payload) for d, _, port, payload in sorted(state["pending"]) if d == due]

    def internal(self, state):
        due = state["now"] + self.time_advance(state)
        return {"now": due, "seq": state["seq"],
                "pending": [p for p in state["pending"] if p[0] != due]}

    def external(self, state, elapsed, events):
        st = {"now": state["now"] + elapsed, "pending": list(state["pending"]),
              "seq": state["seq"]}
        delay = self.cfg.layers * self.cfg.per_layer_latency
        for ev in events:
            pkt = decode_packet(ev.payload)
            if ev.port == "up_in" and len(pkt.payload) - _DGRAM.size > self.cfg.mtu:
                _, _, app = decode_datagram(pkt.payload)
                st["pending"].append((st["now"], st["seq"],
                                      "drop_mtu", identity_bytes(pkt.src, pkt.dst, app)))
            else:
                out = "up_out" if ev.port == "up_in" else "down_out"
                st["pending"].append((st["now"] + delay, st["seq"], out, ev.payload))
            st["seq"] += 1
        return st


class _ExecSocket:
    __slots__ = ("vsock", "os_sock", "queue", "thread", "closing")

    def __init__(self, vsock: VirtualSocket, os_sock):
        self.vsock = vsock
        self.os_sock = os_sock
        self.queue: deque = deque()
        self.thread: Optional[threading.Thread] = None
        self.closing = False


class VirtualStack:
    """Application-facing dispatcher; one instance per run, all modes.

    The API is identical in every mode: open/send/recv/close. In execution
    mode sockets are real loopback UDP sockets with the documented address
    mapping and a reader thread each; in simulation/emulation the dispatcher
    fronts a built kernel (injecting sends, reading the per-node stack's
    queues).
    """

    def __init__(self, mode: str, base_port: int = DEFAULT_BASE_PORT,
                 mtu: int = DEFAULT_MTU):
        if mode not in MODES:
            raise VcsError(f"unknown mode {mode!r}")
        self.mode = mode
        self.base_port = base_port
        self.mtu = mtu
        self._sockets: dict[tuple[int, int], object] = {}
        self._next_id = 1
        self._lock = threading.Lock()
        self.trace: list[tuple[int, str, str, str, bytes]] = []   # (t, path, kind, port, ident)
        self._epoch = _wall.monotonic()
        self._root = None
        self._node_paths: dict[int, str] = {}

    def attach_kernel(self, root, node_paths: dict[int, str]) -> None:
        """Bind a built simulation to serve simulation/emulation sockets."""
        self._root = root
        self._node_paths = dict(node_paths)

    def _wall_us(self) -> int:
        return int((_wall.monotonic() - self._epoch) * 1e6)

    def open(self, node_id: int, port: int) -> VirtualSocket:
        key = (node_id, port)
        with self._lock:
            if key in self._sockets:
                raise VcsError(f"(node {node_id}, port {port}) is already open")
            vsock = VirtualSocket(self._next_id, node_id, port, self.mode)
            self._next_id += 1
            if self.mode == EXECUTION:
                os_port = map_os_port(node_id, port, self.base_port)
                s = _socket.socket(_socket.AF_INET, _socket.SOCK_DGRAM)
                try:
                    s.bind(("127.0.0.1", os_port))
                except OSError as e:
                    s.close()
                    raise VcsError(f"cannot bind 127.0.0.1:{os_port} for "
                                   f"(node {node_id}, port {port}): {e}") from e
                s.settimeout(0.1)
                ex = _ExecSocket(vsock, s)
                ex.thread = threading.Thread(target=self._reader, args=(ex,), daemon=True)
                self._sockets[key] = ex
                ex.thread.start()
            else:
                self._sockets[key] = vsock
        return vsock

    def _reader(self, ex: _ExecSocket) -> None:
        while not ex.closing:
            try:
                data, _ = ex.os_sock.recvfrom(65536)
            except _socket.timeout:
                continue
            except OSError:
                break
            try:
                src_node, src_port, dst_port, payload = decode_loopback(data)
            except VcsError:
                continue
            with self._lock:
                ex.queue.append((src_node, src_port, payload))
                self.trace.append((self._wall_us(), f"n{ex.vsock.node_id}/vcs", "output",
                                   "recv", identity_bytes(src_node, ex.vsock.node_id, payload)))

    def _live(self, sock: VirtualSocket):
        entry = self._sockets.get((sock.node_id, sock.port))
        if entry is None:
            raise VcsError(f"socket (node {sock.node_id}, port {sock.port}) is closed")
        return entry

    def send(self, sock: VirtualSocket, dst_node: int, dst_port: int,
             payload: bytes, at: Optional[SimTime] = None) -> int:
        entry = self._live(sock)
        if len(payload) > self.mtu:
            raise VcsError(f"payload {len(payload)} exceeds mtu {self.mtu}")
        if self.mode == EXECUTION:
            addr = ("127.0.0.1", map_os_port(dst_node, dst_port, self.base_port))
            frame = encode_loopback(sock.node_id, sock.port, dst_port, payload)
            entry.os_sock.sendto(frame, addr)
            with self._lock:
                self.trace.append((self._wall_us(), f"n{sock.node_id}/vcs", "output",
                                   "orig", identity_bytes(sock.node_id, dst_node, payload)))
            return len(payload)
        if self._root is None:
            raise VcsError("no kernel attached for simulated sockets")
        t = self._root.clock if at is None else at
        pkt = Packet(DATA, sock.node_id, dst_node, 0, 32, len(payload), t, payload=payload)
        self._root.inject(Event(f"send_{sock.node_id}", pkt.encode(), time=t))
        return len(payload)

    def recv(self, sock: VirtualSocket) -> Optional[tuple[int, int, bytes]]:
        entry = self._live(sock)
        if self.mode == EXECUTION:
            with self._lock:
                return entry.queue.popleft() if entry.queue else None
        leaf = self._root.find_leaf(self._node_paths[sock.node_id])
        box = leaf.state.sockets.get(sock.port)
        if box is None or not box.queue:
            return None
        return box.queue.popleft()

    def close(self, sock: VirtualSocket) -> None:
        entry = self._sockets.pop((sock.node_id, sock.port), None)
        if entry is None:
            raise VcsError(f"socket (node {sock.node_id}, port {sock.port}) is closed")
        if self.mode == EXECUTION:
            entry.closing = True
            entry.os_sock.close()
            # the reader may be inside recvfrom, which defers the real fd
            # close; join so the port is released when we return
            if entry.thread is not None:
                entry.thread.join(timeout=1.0)

    def close_all(self) -> None:
        entries = [self._sockets.pop(key) for key in list(self._sockets)]
        for entry in entries:
            if isinstance(entry, _ExecSocket):
                entry.closing = True
                entry.os_sock.close()
        for entry in entries:
            if isinstance(entry, _ExecSocket) and entry.thread is not None:
                entry.thread.join(timeout=1.0)

    def trace_lines(self) -> list[str]:
        """Render the dispatcher trace in the kernel's line format, sorted."""
        from .coordinator import TraceRecord, payload_digest

        rows = sorted(self.trace, key=lambda r: r[0])
        return [TraceRecord(t, path, kind, port, payload_digest(ident)).line()
                for t, path, kind, port, ident in rows]

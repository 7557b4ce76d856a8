"""On-demand distance-vector routing following standard AODV semantics:
RREQ flooding with duplicate suppression, RREP unicast along reverse paths,
RERR propagation on broken links, and sequence-number freshness.

The node model also carries data packets end to end: send requests arrive
from the local application layer (traffic generator or socket layer), get
buffered during discovery, and are forwarded hop by hop via the table.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .devs import Atomic, Event
from .packets import (
    DATA,
    RERR,
    RREP,
    RREQ,
    Packet,
    RoutingTableEntry,
    RreqExt,
    RrepExt,
    decode_channel_down,
    decode_packet,
    decode_rerr,
    decode_rreq,
    decode_rrep,
    encode_rerr,
    encode_tx,
    is_fresher,
    ARRIVAL,
    TX_FAILED,
)
from .simtime import INFINITY, SimTime


@dataclass(frozen=True)
class AodvConfig:
    ttl_default: int = 32
    rreq_retries: int = 2
    route_lifetime: SimTime = 3_000_000
    buffer_limit: int = 64
    discovery_timeout: SimTime = 200_000   # per RREQ attempt
    seen_limit: int = 1024                 # (origin, rreq_id) memory


@dataclass
class Discovery:
    rreq_id: int
    retries_left: int
    deadline: SimTime


@dataclass
class AodvState:
    now: SimTime = 0
    own_seq: int = 0
    rreq_id: int = 0
    rerr_seq: int = 0
    table: dict = field(default_factory=dict)          # dest -> RoutingTableEntry
    seen: dict = field(default_factory=dict)           # (origin, rreq_id) -> time
    buffer: list = field(default_factory=list)         # packets awaiting a route
    pending: dict = field(default_factory=dict)        # dest -> Discovery
    outbox: list = field(default_factory=list)         # (port, bytes) ready to emit


class AodvNode(Atomic):
    """Routing and forwarding engine of one node.

    Ports: ``from_app`` takes locally originated data packets, ``from_ch``
    takes channel arrivals and failure reports; ``xmit_*`` feed the channel;
    ``deliver`` hands data for this node to the application layer; ``orig``
    and ``drop_*`` are accounting taps.
    """

    def __init__(self, node_id: int, cfg: AodvConfig = AodvConfig()):
        super().__init__()
        self.node_id = node_id
        self.cfg = cfg
        self.in_port("from_app", schema="pkt")
        self.in_port("from_ch", schema="chdown")
        self.out_port("xmit_data", schema="chtx")
        self.out_port("xmit_rreq", schema="chtx")
        self.out_port("xmit_rrep", schema="chtx")
        self.out_port("xmit_rerr", schema="chtx")
        self.out_port("deliver", schema="pkt")
        self.out_port("orig", schema="pkt")
        self.out_port("drop_ttl", schema="pkt")
        self.out_port("drop_buffer", schema="pkt")
        self.out_port("drop_loss", schema="pkt")

    # -- DEVS surface ----------------------------------------------------

    def initial_state(self):
        return AodvState()

    def time_advance(self, state: AodvState) -> SimTime:
        if state.outbox:
            return 0
        deadline = min((d.deadline for d in state.pending.values()), default=INFINITY)
        return deadline - state.now if deadline != INFINITY else INFINITY

    def output(self, state: AodvState):
        return [Event(port, payload) for port, payload in state.outbox]

    def internal(self, state: AodvState):
        st = _shallow_copy(state)
        st.now = state.now + self.time_advance(state)
        st.outbox = []
        if not state.outbox:
            self._handle_timeouts(st)
        return st

    def external(self, state: AodvState, elapsed: SimTime, events):
        st = _shallow_copy(state)
        st.now = state.now + elapsed
        for ev in events:
            if ev.port == "from_app":
                self._on_send_request(st, decode_packet(ev.payload))
            elif ev.port == "from_ch":
                tag, sender, pkt = decode_channel_down(ev.payload)
                if tag == ARRIVAL:
                    self._on_arrival(st, sender, pkt)
                elif tag == TX_FAILED:
                    self._on_tx_failed(st, pkt)
        return st

    # -- engine ----------------------------------------------------------

    def _emit(self, st: AodvState, port: str, pkt: Packet) -> None:
        if port.startswith("xmit"):
            st.outbox.append((port, encode_tx(self.node_id, pkt)))
        else:
            st.outbox.append((port, pkt.encode()))

    def _route(self, st: AodvState, dest: int) -> Optional[RoutingTableEntry]:
        entry = st.table.get(dest)
        if entry is not None and entry.valid and entry.lifetime >= st.now:
            return entry
        return None

    def _learn(self, st: AodvState, dest: int, next_hop: int, hop_count: int, dest_seq: int) -> None:
        if dest == self.node_id:
            return
        entry = st.table.get(dest)
        stale = entry is None or not entry.valid or entry.lifetime < st.now
        if is_fresher(entry, dest_seq, hop_count) or (stale and entry is not None and dest_seq >= entry.dest_seq):
            st.table[dest] = RoutingTableEntry(dest, next_hop, hop_count, dest_seq,
                                               st.now + self.cfg.route_lifetime)

    def _learn_neighbor(self, st: AodvState, sender: int) -> None:
        # direct reception refreshes a 1-hop route, but never stomps a
        # fresher multi-hop entry's sequence knowledge
        entry = st.table.get(sender)
        if entry is None or not entry.valid or entry.lifetime < st.now:
            seq = entry.dest_seq if entry is not None else 0
            st.table[sender] = RoutingTableEntry(sender, sender, 1, seq,
                                                 st.now + self.cfg.route_lifetime)
        elif entry.next_hop == sender:
            entry.lifetime = st.now + self.cfg.route_lifetime

    def _refresh(self, st: AodvState, *dests: int) -> None:
        for d in dests:
            entry = st.table.get(d)
            if entry is not None and entry.valid:
                entry.lifetime = max(entry.lifetime, st.now + self.cfg.route_lifetime)

    def _on_send_request(self, st: AodvState, pkt: Packet) -> None:
        self._emit(st, "orig", pkt)
        if pkt.dst == self.node_id:
            self._emit(st, "deliver", pkt)
            return
        self._forward_or_discover(st, pkt)

    def _forward_or_discover(self, st: AodvState, pkt: Packet) -> None:
        route = self._route(st, pkt.dst)
        if route is not None:
            self._refresh(st, pkt.dst, route.next_hop)
            self._emit(st, "xmit_data", replace(pkt, next_hop=route.next_hop))
            return
        if len(st.buffer) >= self.cfg.buffer_limit:
            oldest = st.buffer.pop(0)
            self._emit(st, "drop_buffer", oldest)
        st.buffer.append(pkt)
        if pkt.dst not in st.pending:
            self._start_discovery(st, pkt.dst)

    def _start_discovery(self, st: AodvState, dest: int) -> None:
        st.own_seq += 1
        st.rreq_id += 1
        st.pending[dest] = Discovery(st.rreq_id, self.cfg.rreq_retries,
                                     st.now + self.cfg.discovery_timeout)
        self._send_rreq(st, dest, st.rreq_id)

    def _send_rreq(self, st: AodvState, dest: int, rreq_id: int) -> None:
        known = st.table.get(dest)
        ext = RreqExt(st.own_seq, known.dest_seq if known else 0, known is not None, 0)
        pkt = Packet(RREQ, self.node_id, dest, rreq_id, self.cfg.ttl_default, 0,
                     st.now, None, ext.encode())
        self._remember(st, self.node_id, rreq_id)
        self._emit(st, "xmit_rreq", pkt)

    def _remember(self, st: AodvState, origin: int, rreq_id: int) -> None:
        st.seen[(origin, rreq_id)] = st.now
        while len(st.seen) > self.cfg.seen_limit:
            st.seen.pop(next(iter(st.seen)))

    def _handle_timeouts(self, st: AodvState) -> None:
        for dest in list(st.pending):
            disc = st.pending[dest]
            if disc.deadline > st.now:
                continue
            if self._route(st, dest) is not None:
                del st.pending[dest]
                continue
            if disc.retries_left > 0:
                st.own_seq += 1
                st.rreq_id += 1
                st.pending[dest] = Discovery(st.rreq_id, disc.retries_left - 1,
                                             st.now + self.cfg.discovery_timeout)
                self._send_rreq(st, dest, st.rreq_id)
            else:
                del st.pending[dest]
                kept = []
                for pkt in st.buffer:
                    if pkt.dst == dest:
                        self._emit(st, "drop_loss", pkt)
                    else:
                        kept.append(pkt)
                st.buffer = kept

    def _on_arrival(self, st: AodvState, sender: int, pkt: Packet) -> None:
        self._learn_neighbor(st, sender)
        if pkt.kind == DATA:
            self._on_data(st, sender, pkt)
        elif pkt.kind == RREQ:
            self._on_rreq(st, sender, pkt)
        elif pkt.kind == RREP:
            self._on_rrep(st, sender, pkt)
        elif pkt.kind == RERR:
            self._on_rerr(st, sender, pkt)

    def _on_data(self, st: AodvState, sender: int, pkt: Packet) -> None:
        if pkt.dst == self.node_id:
            self._emit(st, "deliver", pkt)
            return
        hopped = replace(pkt, ttl=pkt.ttl - 1)
        if hopped.ttl <= 0:
            self._emit(st, "drop_ttl", hopped)
            return
        route = self._route(st, pkt.dst)
        if route is None:
            # no usable route at a relay: report back and count the loss
            self._emit(st, "drop_loss", hopped)
            self._send_rerr(st, [(pkt.dst, st.table[pkt.dst].dest_seq if pkt.dst in st.table else 0)])
            return
        self._refresh(st, pkt.dst, route.next_hop, pkt.src)
        self._emit(st, "xmit_data", replace(hopped, next_hop=route.next_hop))

    def _on_rreq(self, st: AodvState, sender: int, pkt: Packet) -> None:
        ext = decode_rreq(pkt.ext)
        key = (pkt.src, pkt.seq)
        if key in st.seen:
            return
        self._remember(st, *key)
        self._learn(st, pkt.src, sender, ext.hop_count + 1, ext.origin_seq)
        if pkt.dst == self.node_id:
            st.own_seq = max(st.own_seq, ext.dest_seq if ext.dest_seq_known else 0)
            self._send_rrep(st, route_dest=self.node_id, dest_seq=st.own_seq,
                            origin=pkt.src, hop_count=0, via=sender)
            return
        route = self._route(st, pkt.dst)
        if route is not None and ext.dest_seq_known and route.dest_seq >= ext.dest_seq:
            self._send_rrep(st, route_dest=pkt.dst, dest_seq=route.dest_seq,
                            origin=pkt.src, hop_count=route.hop_count, via=sender)
            return
        if pkt.ttl - 1 <= 0:
            return
        fwd = replace(pkt, ttl=pkt.ttl - 1, ext=replace(ext, hop_count=ext.hop_count + 1).encode())
        self._emit(st, "xmit_rreq", fwd)

    def _send_rrep(self, st: AodvState, route_dest: int, dest_seq: int, origin: int,
                   hop_count: int, via: int) -> None:
        ext = RrepExt(route_dest, dest_seq, origin, hop_count)
        pkt = Packet(RREP, self.node_id, origin, dest_seq, self.cfg.ttl_default, 0,
                     st.now, via, ext.encode())
        self._emit(st, "xmit_rrep", pkt)

    def _on_rrep(self, st: AodvState, sender: int, pkt: Packet) -> None:
        ext = decode_rrep(pkt.ext)
        self._learn(st, ext.route_dest, sender, ext.hop_count + 1, ext.dest_seq)
        if ext.origin == self.node_id:
            self._complete_discovery(st, ext.route_dest)
            return
        reverse = self._route(st, ext.origin)
        if reverse is None or pkt.ttl - 1 <= 0:
            return
        fwd = replace(pkt, ttl=pkt.ttl - 1, next_hop=reverse.next_hop,
                      ext=replace(ext, hop_count=ext.hop_count + 1).encode())
        self._refresh(st, ext.origin, reverse.next_hop)
        self._emit(st, "xmit_rrep", fwd)

    def _complete_discovery(self, st: AodvState, dest: int) -> None:
        st.pending.pop(dest, None)
        route = self._route(st, dest)
        if route is None:
            return
        kept = []
        for pkt in st.buffer:
            if pkt.dst == dest:
                self._refresh(st, dest, route.next_hop)
                self._emit(st, "xmit_data", replace(pkt, next_hop=route.next_hop))
            else:
                kept.append(pkt)
        st.buffer = kept

    def _send_rerr(self, st: AodvState, unreachable: list[tuple[int, int]]) -> None:
        st.rerr_seq += 1
        pkt = Packet(RERR, self.node_id, 0, st.rerr_seq, 1, 0, st.now, None,
                     encode_rerr(unreachable))
        self._emit(st, "xmit_rerr", pkt)

    def _on_rerr(self, st: AodvState, sender: int, pkt: Packet) -> None:
        dropped = []
        for dest, dest_seq in decode_rerr(pkt.ext):
            entry = st.table.get(dest)
            if entry is not None and entry.valid and entry.next_hop == sender:
                entry.valid = False
                entry.dest_seq = max(entry.dest_seq, dest_seq)
                dropped.append((dest, entry.dest_seq))
        if dropped:
            self._send_rerr(st, dropped)

    def _on_tx_failed(self, st: AodvState, pkt: Packet) -> None:
        broken_hop = pkt.next_hop
        if broken_hop is None:
            return
        unreachable = []
        for dest, entry in st.table.items():
            if entry.valid and entry.next_hop == broken_hop:
                entry.valid = False
                entry.dest_seq += 1
                unreachable.append((dest, entry.dest_seq))
        if pkt.kind == DATA:
            self._emit(st, "drop_loss", pkt)
        if unreachable:
            self._send_rerr(st, unreachable)


def _shallow_copy(state: AodvState) -> AodvState:
    return AodvState(
        now=state.now,
        own_seq=state.own_seq,
        rreq_id=state.rreq_id,
        rerr_seq=state.rerr_seq,
        table={d: replace(e) for d, e in state.table.items()},
        seen=dict(state.seen),
        buffer=list(state.buffer),
        pending=dict(state.pending),
        outbox=list(state.outbox),
    )


def aodv_transition(node: AodvNode, state: AodvState, event: Event,
                    elapsed: SimTime = 0) -> tuple[AodvState, list[Event]]:
    """Apply one received event and drain the resulting zero-time output
    cascade; the unit-test surface for the routing engine."""
    state = node.external(state, elapsed, [event])
    outs: list[Event] = []
    while node.time_advance(state) == 0:
        outs.extend(node.output(state))
        state = node.internal(state)
    return state, outs

"""Shared radio channel: position tracking, per-hop latency, Bernoulli loss,
and deterministic failure feedback for unreachable unicast targets.

The MAC abstraction is per-hop latency (serialization + fixed propagation)
plus independent loss draws; there is no contention model. Draws happen in
ascending receiver id, one per candidate, so runs replay exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from heapq import heappop, heappush

import numpy as np

from .devs import Atomic, Event
from .mobility import NodeState
from .packets import DATA, Packet, decode_tx, encode_arrival, encode_tx_failed
from .radio import RadioModel, delivery_probability
from .simtime import INFINITY, SimTime

_POS = struct.Struct("<Idd")
_CTL = struct.Struct("<IB")


def encode_position(node_id: int, x: float, y: float) -> bytes:
    return _POS.pack(node_id, x, y)


def decode_position(data: bytes) -> tuple[int, float, float]:
    return _POS.unpack(data)


def encode_node_ctl(node_id: int, enabled: bool) -> bytes:
    return _CTL.pack(node_id, int(enabled))


def decode_node_ctl(data: bytes) -> tuple[int, bool]:
    node_id, flag = _CTL.unpack(data)
    return node_id, bool(flag)


@dataclass(frozen=True)
class ChannelConfig:
    bitrate: float = 1_000_000.0   # bits per second
    propagation: SimTime = 5       # fixed per-hop delay, us

    def __post_init__(self):
        if self.bitrate <= 0:
            raise ValueError("bitrate must be positive")
        if self.propagation < 1:
            raise ValueError("propagation must be >= 1us to keep hops causal")

    def latency(self, payload_len: int) -> SimTime:
        return self.propagation + round(payload_len * 8 * 1e6 / self.bitrate)


def channel_transmit(pkt: Packet, sender: int, states: dict[int, NodeState],
                     radio: RadioModel, rng: np.random.Generator,
                     cfg: ChannelConfig = ChannelConfig(), now: SimTime = 0) -> list[tuple[int, Event]]:
    """Successful receptions of one transmission: (receiver, arrival event)
    pairs, arrival stamped now + latency. One loss draw per candidate, in
    ascending node id."""
    latency = cfg.latency(pkt.payload_len)
    me = states[sender]
    if pkt.next_hop is None:
        candidates = sorted(nid for nid, s in states.items() if nid != sender and s.enabled)
    else:
        tgt = states.get(pkt.next_hop)
        candidates = [pkt.next_hop] if tgt is not None and tgt.enabled and pkt.next_hop != sender else []
    payload = pkt.encode()
    out = []
    for nid in candidates:
        p = delivery_probability(me, states[nid], radio)
        if rng.random() < p:
            out.append((nid, Event(f"out_{nid}", encode_arrival(sender, payload), now + latency)))
    return out


@dataclass
class _ChannelState:
    nodes: dict                      # id -> NodeState
    rng: np.random.Generator
    now: SimTime = 0
    pending: list = field(default_factory=list)   # heap of (due, seq, port, payload)
    seq: int = 0


class Channel(Atomic):
    """One broadcast medium shared by every node.

    ``tx`` takes per-hop frames; ``pos``/``ctl`` track mobility and node
    enablement; arrivals and failure reports leave on ``out_<k>``; data lost
    to the air surfaces on ``drop_loss`` for accounting.
    """

    def __init__(self, node_ids: list[int], positions: dict[int, tuple[float, float]],
                 radio: RadioModel, rng: np.random.Generator, cfg: ChannelConfig = ChannelConfig()):
        super().__init__()
        self.node_ids = sorted(node_ids)
        self.positions = dict(positions)
        self.radio = radio
        self.cfg = cfg
        self._rng0 = rng
        self.in_port("tx", schema="chtx")
        self.in_port("pos", schema="pos")
        self.in_port("ctl", schema="ctl")
        self.out_port("drop_loss", schema="pkt")
        for nid in self.node_ids:
            self.out_port(f"out_{nid}", schema="chdown")

    def initial_state(self):
        nodes = {nid: NodeState(nid, self.positions[nid]) for nid in self.node_ids}
        return _ChannelState(nodes=nodes, rng=self._rng0)

    def time_advance(self, state: _ChannelState) -> SimTime:
        return state.pending[0][0] - state.now if state.pending else INFINITY

    def output(self, state: _ChannelState):
        due = state.pending[0][0]
        return [Event(port, payload)
                for d, _, port, payload in sorted(state.pending) if d == due]

    def internal(self, state: _ChannelState):
        st = _ChannelState(dict(state.nodes), state.rng, state.pending[0][0],
                           list(state.pending), state.seq)
        while st.pending and st.pending[0][0] == st.now:
            heappop(st.pending)
        return st

    def external(self, state: _ChannelState, elapsed: SimTime, events):
        st = _ChannelState(dict(state.nodes), state.rng, state.now + elapsed,
                           list(state.pending), state.seq)
        for ev in events:
            if ev.port == "pos":
                nid, x, y = decode_position(ev.payload)
                old = st.nodes[nid]
                st.nodes[nid] = NodeState(nid, (x, y), enabled=old.enabled)
            elif ev.port == "ctl":
                nid, enabled = decode_node_ctl(ev.payload)
                old = st.nodes[nid]
                st.nodes[nid] = NodeState(nid, old.position, enabled=enabled)
            elif ev.port == "tx":
                self._transmit(st, ev.payload)
        return st

    def _push(self, st: _ChannelState, due: SimTime, port: str, payload: bytes) -> None:
        heappush(st.pending, (due, st.seq, port, payload))
        st.seq += 1

    def _transmit(self, st: _ChannelState, frame: bytes) -> None:
        sender, pkt = decode_tx(frame)
        me = st.nodes.get(sender)
        if me is None or not me.enabled:
            if pkt.kind == DATA:
                self._push(st, st.now, "drop_loss", pkt.encode())
            return
        if pkt.next_hop is not None:
            tgt = st.nodes.get(pkt.next_hop)
            if tgt is None or not tgt.enabled or pkt.next_hop == sender:
                self._push(st, st.now + self.cfg.propagation, f"out_{sender}",
                           encode_tx_failed(pkt.encode()))
                return
            if delivery_probability(me, tgt, self.radio) <= 0.0:
                # out of range: deterministic link-break feedback
                self._push(st, st.now + self.cfg.propagation, f"out_{sender}",
                           encode_tx_failed(pkt.encode()))
                return
        arrivals = channel_transmit(pkt, sender, st.nodes, self.radio, st.rng, self.cfg, st.now)
        if pkt.next_hop is not None and not arrivals and pkt.kind == DATA:
            # in range but lost to the draw: gone without feedback
            self._push(st, st.now, "drop_loss", pkt.encode())
        for _, ev in arrivals:
            self._push(st, ev.time, ev.port, ev.payload)

"""Packet structures, their byte encodings, and routing-table state.

All fields are little-endian. A Packet is the end-to-end unit; ChannelTx and
ChannelDown are the per-hop envelopes exchanged with the shared channel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

from .simtime import SimTime

DATA = "data"
RREQ = "rreq"
RREP = "rrep"
RERR = "rerr"

_KIND_CODE = {DATA: 0, RREQ: 1, RREP: 2, RERR: 3}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}

NO_NODE = 0xFFFFFFFF

_HEADER = struct.Struct("<BIIIBIQIH")
_RREQ_EXT = struct.Struct("<IIBB")
_RREP_EXT = struct.Struct("<IIIB")
_RERR_ENTRY = struct.Struct("<II")


class PacketError(ValueError):
    pass


@dataclass
class Packet:
    """End-to-end packet; ``next_hop`` is the per-hop unicast address
    (None broadcasts), ``ext`` carries kind-specific control fields."""

    kind: str
    src: int
    dst: int
    seq: int
    ttl: int
    payload_len: int
    created: SimTime
    next_hop: Optional[int] = None
    ext: bytes = b""
    payload: bytes = b""

    def encode(self) -> bytes:
        if self.kind == DATA and len(self.payload) != self.payload_len:
            raise PacketError(f"payload length {len(self.payload)} != declared {self.payload_len}")
        nh = NO_NODE if self.next_hop is None else self.next_hop
        head = _HEADER.pack(_KIND_CODE[self.kind], self.src, self.dst, self.seq,
                            self.ttl, self.payload_len, self.created, nh, len(self.ext))
        return head + self.ext + self.payload

    def identity(self) -> tuple:
        """Per-hop-invariant identity for cross-run and cross-mode matching
        (TTL and timestamps mutate per hop, so they are excluded)."""
        return (self.kind, self.src, self.dst, self.seq, self.payload)


def decode_packet(data: bytes) -> Packet:
    if len(data) < _HEADER.size:
        raise PacketError(f"short packet: {len(data)} bytes")
    code, src, dst, seq, ttl, payload_len, created, nh, ext_len = _HEADER.unpack_from(data)
    if code not in _CODE_KIND:
        raise PacketError(f"unknown packet kind code {code}")
    kind = _CODE_KIND[code]
    body = data[_HEADER.size:]
    ext, payload = body[:ext_len], body[ext_len:]
    if len(ext) != ext_len:
        raise PacketError("truncated extension block")
    if kind == DATA and len(payload) != payload_len:
        raise PacketError(f"payload length {len(payload)} != declared {payload_len}")
    return Packet(kind, src, dst, seq, ttl, payload_len, created,
                  None if nh == NO_NODE else nh, ext, payload)


# kind-specific extension blocks


@dataclass(frozen=True)
class RreqExt:
    origin_seq: int
    dest_seq: int       # last known; meaningful only if dest_seq_known
    dest_seq_known: bool
    hop_count: int      # hops travelled so far

    def encode(self) -> bytes:
        return _RREQ_EXT.pack(self.origin_seq, self.dest_seq, int(self.dest_seq_known), self.hop_count)


def decode_rreq(ext: bytes) -> RreqExt:
    o, d, k, h = _RREQ_EXT.unpack(ext)
    return RreqExt(o, d, bool(k), h)


@dataclass(frozen=True)
class RrepExt:
    route_dest: int     # node the route leads to
    dest_seq: int
    origin: int         # discovery originator the reply travels to
    hop_count: int      # hops between sender of this RREP and route_dest

    def encode(self) -> bytes:
        return _RREP_EXT.pack(self.route_dest, self.dest_seq, self.origin, self.hop_count)


def decode_rrep(ext: bytes) -> RrepExt:
    return RrepExt(*_RREP_EXT.unpack(ext))


def encode_rerr(unreachable: list[tuple[int, int]]) -> bytes:
    out = [struct.pack("<B", len(unreachable))]
    for dest, dest_seq in unreachable:
        out.append(_RERR_ENTRY.pack(dest, dest_seq))
    return b"".join(out)


def decode_rerr(ext: bytes) -> list[tuple[int, int]]:
    (count,) = struct.unpack_from("<B", ext)
    entries = []
    for i in range(count):
        entries.append(_RERR_ENTRY.unpack_from(ext, 1 + i * _RERR_ENTRY.size))
    return entries


# per-hop envelopes

_TX_HEAD = struct.Struct("<I")
ARRIVAL = 0
TX_FAILED = 1


def encode_tx(sender: int, packet: Packet) -> bytes:
    return _TX_HEAD.pack(sender) + packet.encode()


def decode_tx(data: bytes) -> tuple[int, Packet]:
    (sender,) = _TX_HEAD.unpack_from(data)
    return sender, decode_packet(data[_TX_HEAD.size:])


def encode_arrival(sender: int, packet_bytes: bytes) -> bytes:
    return bytes([ARRIVAL]) + _TX_HEAD.pack(sender) + packet_bytes


def encode_tx_failed(packet_bytes: bytes) -> bytes:
    return bytes([TX_FAILED]) + packet_bytes


def decode_channel_down(data: bytes) -> tuple[int, Optional[int], Packet]:
    """Returns (tag, sender or None, packet)."""
    tag = data[0]
    if tag == ARRIVAL:
        (sender,) = _TX_HEAD.unpack_from(data, 1)
        return ARRIVAL, sender, decode_packet(data[1 + _TX_HEAD.size:])
    if tag == TX_FAILED:
        return TX_FAILED, None, decode_packet(data[1:])
    raise PacketError(f"unknown channel event tag {tag}")


# routing table


@dataclass
class RoutingTableEntry:
    dest: int
    next_hop: int
    hop_count: int      # >= 1
    dest_seq: int
    lifetime: SimTime   # expiry instant
    valid: bool = True


def is_fresher(existing: Optional[RoutingTableEntry], dest_seq: int, hop_count: int) -> bool:
    """Replacement rule: only a higher sequence number, or an equal one with
    a strictly smaller hop count, may replace an entry. Refreshing the
    lifetime of the same route is not a replacement."""
    if existing is None:
        return True
    if dest_seq > existing.dest_seq:
        return True
    return dest_seq == existing.dest_seq and hop_count < existing.hop_count


def synth_payload(src: int, dst: int, seq: int, length: int) -> bytes:
    """Deterministic filler so identical flows carry identical bytes in every
    execution mode."""
    if length == 0:
        return b""
    pattern = struct.pack("<III", src, dst, seq)
    reps = length // len(pattern) + 1
    return (pattern * reps)[:length]

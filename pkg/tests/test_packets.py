import pytest
from hypothesis import given, strategies as st

from adhocsim.packets import (
    ARRIVAL,
    DATA,
    RERR,
    RREP,
    RREQ,
    TX_FAILED,
    Packet,
    PacketError,
    RoutingTableEntry,
    RreqExt,
    RrepExt,
    decode_channel_down,
    decode_packet,
    decode_rerr,
    decode_rreq,
    decode_rrep,
    decode_tx,
    encode_arrival,
    encode_rerr,
    encode_tx,
    encode_tx_failed,
    is_fresher,
    synth_payload,
)

u32 = st.integers(0, 2**32 - 1)
u8 = st.integers(0, 255)


@given(u32, u32, u32, u8, st.binary(max_size=200), st.one_of(st.none(), u32.filter(lambda v: v != 0xFFFFFFFF)))
def test_data_packet_roundtrip(src, dst, seq, ttl, payload, next_hop):
    pkt = Packet(DATA, src, dst, seq, ttl, len(payload), 123456, next_hop, b"", payload)
    assert decode_packet(pkt.encode()) == pkt


@given(st.sampled_from([RREQ, RREP, RERR]), st.binary(max_size=64))
def test_control_packet_roundtrip(kind, ext):
    pkt = Packet(kind, 1, 2, 3, 30, 0, 99, None, ext, b"")
    assert decode_packet(pkt.encode()) == pkt


def test_data_payload_length_mismatch_rejected():
    with pytest.raises(PacketError):
        Packet(DATA, 1, 2, 3, 4, 10, 0, payload=b"short").encode()
    good = Packet(DATA, 1, 2, 3, 4, 5, 0, payload=b"abcde").encode()
    with pytest.raises(PacketError):
        decode_packet(good[:-1])


def test_short_and_garbage_inputs_rejected():
    with pytest.raises(PacketError):
        decode_packet(b"\x01\x02")
    valid = Packet(DATA, 1, 2, 3, 4, 0, 0).encode()
    with pytest.raises(PacketError):
        decode_packet(b"\xff" + valid[1:])


@given(u32, u32, st.booleans(), u8)
def test_rreq_ext_roundtrip(oseq, dseq, known, hops):
    ext = RreqExt(oseq, dseq, known, hops)
    assert decode_rreq(ext.encode()) == ext


@given(u32, u32, u32, u8)
def test_rrep_ext_roundtrip(dest, dseq, origin, hops):
    ext = RrepExt(dest, dseq, origin, hops)
    assert decode_rrep(ext.encode()) == ext


@given(st.lists(st.tuples(u32, u32), max_size=20))
def test_rerr_ext_roundtrip(entries):
    assert decode_rerr(encode_rerr(entries)) == entries


def test_channel_envelopes():
    pkt = Packet(DATA, 1, 2, 3, 4, 3, 50, 7, b"", b"xyz")
    sender, decoded = decode_tx(encode_tx(9, pkt))
    assert sender == 9 and decoded == pkt

    tag, snd, p = decode_channel_down(encode_arrival(9, pkt.encode()))
    assert (tag, snd, p) == (ARRIVAL, 9, pkt)
    tag, snd, p = decode_channel_down(encode_tx_failed(pkt.encode()))
    assert (tag, snd, p) == (TX_FAILED, None, pkt)
    with pytest.raises(PacketError):
        decode_channel_down(b"\x07" + pkt.encode())


class TestFreshness:
    def entry(self, seq, hops):
        return RoutingTableEntry(dest=5, next_hop=2, hop_count=hops, dest_seq=seq, lifetime=1000)

    def test_no_existing_entry_always_accepts(self):
        assert is_fresher(None, 0, 99)

    def test_higher_seq_wins_regardless_of_hops(self):
        assert is_fresher(self.entry(3, 2), 4, 99)

    def test_lower_seq_never_wins(self):
        assert not is_fresher(self.entry(3, 9), 2, 1)

    def test_equal_seq_needs_strictly_fewer_hops(self):
        assert is_fresher(self.entry(3, 4), 3, 3)
        assert not is_fresher(self.entry(3, 4), 3, 4)
        assert not is_fresher(self.entry(3, 4), 3, 5)


@given(u32, u32, u32, st.integers(0, 300))
def test_synth_payload_deterministic_and_sized(src, dst, seq, n):
    p = synth_payload(src, dst, seq, n)
    assert len(p) == n
    assert p == synth_payload(src, dst, seq, n)

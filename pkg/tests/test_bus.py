"""Frame codec, converter wrapping, and the conservative sync handshake.

Frame layout oracle, computed independently of the codec: little-endian
magic(2) + version(1) + msg_type(1) + endpoint_id(4) + time(8) +
port_name_len(2) + name + payload_len(4) + payload. An empty ack is
therefore 2+1+1+4+8+2+4 = 22 bytes.
"""

from __future__ import annotations

import socket
import struct
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adhocsim import Coupled, Event, INFINITY, build_root
from adhocsim.bus import (
    DISCRETE_EVENT,
    DISCRETE_TIME,
    MSG_ACK,
    MSG_EVENT,
    MSG_FAULT,
    MSG_NEXT_TIME_GRANT,
    MSG_NEXT_TIME_REQUEST,
    SIMULATOR_SIDE,
    UNTIMED,
    VCS_SIDE,
    Bus,
    BusError,
    BusMessage,
    CausalityFault,
    ConverterContract,
    ScriptedEndpoint,
    bus_role,
    decode_bus,
    encode_bus,
    read_frame,
    wrap,
)
from adhocsim.devs import Atomic
from adhocsim.vcs import EMULATION, EXECUTION, SIMULATION


def frame_size(port_name: str, payload: bytes) -> int:
    # independent arithmetic over the documented field widths
    fixed = struct.calcsize("<2sBBIQ") + struct.calcsize("<H") + struct.calcsize("<I")
    return fixed + len(port_name.encode()) + len(payload)


class TestWireFormat:
    def test_empty_ack_is_22_bytes(self):
        assert frame_size("", b"") == 22
        frame = encode_bus(BusMessage(MSG_ACK, time=0))
        assert len(frame) == 22

    def test_field_layout(self):
        frame = encode_bus(BusMessage(MSG_EVENT, time=1500, endpoint_id=7,
                                      port_name="tx", payload=b"\x01\x02"))
        assert frame[0:2] == b"\xde\x55"
        assert frame[2] == 1                    # version
        assert frame[3] == MSG_EVENT
        assert struct.unpack_from("<I", frame, 4)[0] == 7
        assert struct.unpack_from("<Q", frame, 8)[0] == 1500
        assert struct.unpack_from("<H", frame, 16)[0] == 2
        assert frame[18:20] == b"tx"
        assert struct.unpack_from("<I", frame, 20)[0] == 2
        assert frame[24:] == b"\x01\x02"
        assert len(frame) == frame_size("tx", b"\x01\x02")

    def test_infinity_time_roundtrip(self):
        frame = encode_bus(BusMessage(MSG_NEXT_TIME_GRANT, time=INFINITY))
        assert struct.unpack_from("<Q", frame, 8)[0] == 2**64 - 1
        assert decode_bus(frame).time == INFINITY

    @settings(max_examples=300)
    @given(
        msg_type=st.sampled_from([MSG_EVENT, MSG_NEXT_TIME_REQUEST,
                                  MSG_NEXT_TIME_GRANT, MSG_ACK, MSG_FAULT]),
        time=st.one_of(st.integers(min_value=0, max_value=2**64 - 2), st.just(INFINITY)),
        endpoint_id=st.integers(min_value=0, max_value=2**32 - 1),
        port_name=st.text(max_size=40),
        payload=st.binary(max_size=200),
    )
    def test_roundtrip(self, msg_type, time, endpoint_id, port_name, payload):
        msg = BusMessage(msg_type, time, endpoint_id, port_name, payload)
        frame = encode_bus(msg)
        assert len(frame) == frame_size(port_name, payload)
        assert decode_bus(frame) == msg

    def test_bad_magic(self):
        frame = bytearray(encode_bus(BusMessage(MSG_ACK)))
        frame[0] ^= 0xFF
        with pytest.raises(BusError, match="magic"):
            decode_bus(bytes(frame))

    def test_bad_version(self):
        frame = bytearray(encode_bus(BusMessage(MSG_ACK)))
        frame[2] = 9
        with pytest.raises(BusError, match="version"):
            decode_bus(bytes(frame))

    def test_unknown_type(self):
        frame = bytearray(encode_bus(BusMessage(MSG_ACK)))
        frame[3] = 200
        with pytest.raises(BusError, match="msg_type"):
            decode_bus(bytes(frame))
        with pytest.raises(BusError, match="msg_type"):
            encode_bus(BusMessage(99))

    def test_truncation_everywhere(self):
        frame = encode_bus(BusMessage(MSG_EVENT, 10, 1, "port", b"abc"))
        for cut in range(len(frame)):
            with pytest.raises(BusError):
                decode_bus(frame[:cut])

    def test_trailing_garbage_rejected(self):
        frame = encode_bus(BusMessage(MSG_ACK))
        with pytest.raises(BusError, match="length"):
            decode_bus(frame + b"\x00")

    def test_negative_time_rejected(self):
        with pytest.raises(BusError, match="range"):
            encode_bus(BusMessage(MSG_EVENT, time=-1))

    def test_read_frame_over_stream(self):
        a, b = socket.socketpair()
        try:
            f1 = encode_bus(BusMessage(MSG_EVENT, 5, 1, "x", b"one"))
            f2 = encode_bus(BusMessage(MSG_ACK, 6, 2))
            a.sendall(f1 + f2)
            assert read_frame(b) == f1
            assert read_frame(b) == f2
        finally:
            a.close()
            b.close()

    def test_read_frame_closed_midway(self):
        a, b = socket.socketpair()
        try:
            frame = encode_bus(BusMessage(MSG_EVENT, 5, 1, "x", b"payload"))
            a.sendall(frame[:10])
            a.close()
            with pytest.raises(BusError, match="closed"):
                read_frame(b)
        finally:
            b.close()


class TestContract:
    def test_discrete_time_needs_step(self):
        with pytest.raises(BusError, match="step"):
            ConverterContract(1, time_nature=DISCRETE_TIME)
        ConverterContract(1, time_nature=DISCRETE_TIME, step=10)

    def test_unknown_nature(self):
        with pytest.raises(BusError, match="nature"):
            ConverterContract(1, time_nature="continuous")


def harness(atomic, with_input=False):
    m = Coupled()
    m.add("dut", atomic)
    for name, _ in atomic.contract.outputs:
        m.out_port(name)
        m.connect_output("dut", name, name)
    if with_input:
        for name, _ in atomic.contract.inputs:
            m.in_port(name)
            m.connect_input(name, "dut", name)
    return build_root(m)


class TestWrappedEndpoints:
    def test_scripted_fires_at_plan_times(self):
        ep = ScriptedEndpoint({3000: [("out", b"a")], 7000: [("out", b"b"), ("out", b"c")]})
        root = harness(wrap(ConverterContract(1, outputs=(("out", "bytes"),)), ep))
        recs = root.run_until(10_000)
        outs = [(r.time, r.port) for r in recs if r.kind == "output" and r.source == "dut"]
        assert outs == [(3000, "out"), (7000, "out"), (7000, "out")]
        assert ep.granted == [3000, 7000]
        assert root.next_event_time() == INFINITY

    def test_untimed_stamped_at_grant(self):
        # untimed endpoints never self-schedule; their replies carry the
        # grant time of the input that provoked them
        ep = ScriptedEndpoint({}, on_receive=lambda t, p, b: [(0, "out", b + b"!")])
        contract = ConverterContract(2, inputs=(("in", "bytes"),),
                                     outputs=(("out", "bytes"),), time_nature=UNTIMED)
        root = harness(wrap(contract, ep), with_input=True)
        root.inject(Event("in", b"hi", time=4000))
        recs = root.run_until(10_000)
        outs = [(r.time, r.port) for r in recs if r.kind == "output" and r.source == "dut"]
        assert outs == [(4000, "out")]
        assert root.next_event_time() == INFINITY

    def test_discrete_time_fires_on_multiples(self):
        class Ticker:
            def next_time(self):
                return 0
            def collect(self, granted):
                return [(granted, "tick", granted.to_bytes(8, "little"))]
            def advance(self, granted):
                pass
            def receive(self, t, port, payload):
                return []

        contract = ConverterContract(3, outputs=(("tick", "bytes"),),
                                     time_nature=DISCRETE_TIME, step=10_000)
        root = harness(wrap(contract, Ticker()))
        recs = root.run_until(35_000)
        times = [r.time for r in recs if r.kind == "output" and r.source == "dut"]
        assert times == [10_000, 20_000, 30_000]

    def test_causality_fault_on_pre_grant_stamp(self):
        ep = ScriptedEndpoint({5000: [("out", b"x")]}, skew=1)
        root = harness(wrap(ConverterContract(4, outputs=(("out", "bytes"),)), ep))
        with pytest.raises(CausalityFault, match="below grant"):
            root.run_until(10_000)

    def test_causality_fault_on_stale_reply(self):
        ep = ScriptedEndpoint({}, on_receive=lambda t, p, b: [(t - 100, "out", b)])
        contract = ConverterContract(5, inputs=(("in", "bytes"),),
                                     outputs=(("out", "bytes"),))
        root = harness(wrap(contract, ep), with_input=True)
        root.inject(Event("in", b"z", time=2000))
        with pytest.raises(CausalityFault):
            root.run_until(10_000)

    def test_future_reply_held_until_due(self):
        ep = ScriptedEndpoint({}, on_receive=lambda t, p, b: [(t + 500, "out", b)])
        contract = ConverterContract(6, inputs=(("in", "bytes"),),
                                     outputs=(("out", "bytes"),))
        root = harness(wrap(contract, ep), with_input=True)
        root.inject(Event("in", b"q", time=1000))
        recs = root.run_until(10_000)
        outs = [(r.time, r.port) for r in recs if r.kind == "output" and r.source == "dut"]
        assert outs == [(1500, "out")]


class _NativePeriodic(Atomic):
    """Native twin of a periodic emitter, for trace equivalence."""

    def __init__(self, period, payload):
        super().__init__()
        self.period = period
        self.payload = payload
        self.out_port("tick")

    def initial_state(self):
        return 0    # events emitted so far

    def time_advance(self, state):
        return self.period

    def output(self, state):
        return [Event("tick", self.payload)]

    def internal(self, state):
        return state + 1


class TestTraceEquivalence:
    def test_wrapped_equals_native(self):
        # the same deterministic automaton, once native and once behind the
        # converter, must leave byte-identical traces
        period, payload = 10_000, b"beat"

        class Twin:
            def next_time(self):
                return 0
            def collect(self, granted):
                return [(granted, "tick", payload)]
            def advance(self, granted):
                pass
            def receive(self, t, port, p):
                return []

        lines = []
        for dut in (_NativePeriodic(period, payload),
                    wrap(ConverterContract(9, outputs=(("tick", "bytes"),),
                                           time_nature=DISCRETE_TIME, step=period), Twin())):
            m = Coupled()
            m.add("dut", dut)
            m.out_port("tick")
            m.connect_output("dut", "tick", "tick")
            root = build_root(m)
            recs = root.run_until(50_000)
            lines.append([r.line() for r in recs])
        assert lines[0] == lines[1]
        assert len(lines[0]) == 10    # 5 outputs + 5 internals


class TestBusSync:
    def test_grant_is_min_of_kernel_and_reports(self):
        bus = Bus()
        bus.register(1, ScriptedEndpoint({3_000_000: [("a", b"")]}))
        bus.register(2, ScriptedEndpoint({7_000_000: [("b", b"")]}))
        granted = bus.sync_advance(kernel_tn=5_000_000)
        assert granted == 3_000_000
        assert [(t, eid) for t, eid, _, _ in bus.log] == [(3_000_000, 1)]

    def test_all_idle_grants_kernel_time(self):
        bus = Bus()
        bus.register(1, ScriptedEndpoint({}))
        assert bus.sync_advance(kernel_tn=5000) == 5000
        assert bus.log == []

    def test_everything_idle_is_infinity(self):
        bus = Bus()
        bus.register(1, ScriptedEndpoint({}))
        assert bus.sync_advance(kernel_tn=INFINITY) == INFINITY

    def test_duplicate_registration(self):
        bus = Bus()
        bus.register(1, ScriptedEndpoint({}))
        with pytest.raises(BusError, match="already registered"):
            bus.register(1, ScriptedEndpoint({}))

    def test_pre_grant_collect_faults(self):
        bus = Bus()
        bus.register(1, ScriptedEndpoint({1000: [("out", b"")]}, skew=5))
        with pytest.raises(CausalityFault):
            bus.sync_advance(kernel_tn=INFINITY)

    def test_unresponsive_endpoint_times_out(self):
        class Mute:
            def next_time(self):
                return None
            def collect(self, granted):
                return []
            def advance(self, granted):
                pass
            def receive(self, t, p, b):
                return []

        bus = Bus(timeout=0.05)
        bus.register(1, Mute())
        with pytest.raises(BusError, match="timed out"):
            bus.sync_advance(kernel_tn=1000)

    def test_three_party_rounds_stay_ordered(self):
        bus = Bus()
        plans = [
            {t: [("p", bytes([t % 251]))] for t in range(1000, 11_000, 1000)},
            {t: [("q", b"")] for t in range(1500, 11_500, 2000)},
            {t: [("r", b"")] for t in range(700, 9_700, 3000)},
        ]
        for eid, plan in enumerate(plans):
            bus.register(eid, ScriptedEndpoint(dict(plan)))
        grants = []
        for _ in range(10):
            g = bus.sync_advance(kernel_tn=INFINITY)
            if g == INFINITY:
                break
            grants.append(g)
        assert grants == sorted(grants)
        stamps = [t for t, _, _, _ in bus.log]
        assert stamps == sorted(stamps)
        assert bus.last_grant == grants[-1]


class TestBusRole:
    def test_matrix(self):
        assert bus_role(VCS_SIDE, SIMULATION).time_filter is True
        assert bus_role(VCS_SIDE, EMULATION).time_filter is False
        assert bus_role(VCS_SIDE, EXECUTION).time_filter is False
        assert bus_role(SIMULATOR_SIDE, SIMULATION).route == "channel"
        assert bus_role(SIMULATOR_SIDE, EMULATION).route == "loopback"
        assert bus_role(SIMULATOR_SIDE, EXECUTION).route is None

    def test_rejects_unknowns(self):
        with pytest.raises(BusError):
            bus_role("middle", SIMULATION)
        with pytest.raises(BusError):
            bus_role(VCS_SIDE, "replay")

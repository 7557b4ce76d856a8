"""Routing engine behavior on small assembled networks.

Discovery hand-trace for the 3-node line (range 10, nodes at 0/8/16 m,
control latency 5us, inject at t=1000):
  1000 A broadcasts RREQ; 1005 B hears it and rebroadcasts; 1010 C hears it
  and unicasts RREP to B; 1015 B forwards RREP to A; 1020 A learns the
  2-hop route and releases the buffered packet. Data latency for a 10-byte
  payload is 85us per hop, so delivery lands at 1020 + 2*85 = 1190.
"""

from __future__ import annotations

import networkx as nx
import numpy as np
import pytest

from adhocsim import Coupled, Event, INFINITY, build_root
from adhocsim.aodv import AodvConfig, AodvNode, aodv_transition
from adhocsim.channel import Channel, ChannelConfig, encode_position
from adhocsim.mobility import NodeState
from adhocsim.packets import (
    DATA,
    RREQ,
    Packet,
    RreqExt,
    encode_arrival,
    synth_payload,
)
from adhocsim.radio import UNIT_DISK, RadioModel


def build_net(positions, radio=None, cfg=AodvConfig(), ch_cfg=ChannelConfig(), seed=0):
    radio = radio or RadioModel(UNIT_DISK, range=10)
    m = Coupled()
    ids = list(range(len(positions)))
    for k in ids:
        m.add(f"n{k}", AodvNode(k, cfg))
    m.add("ch", Channel(ids, dict(enumerate(positions)), radio, np.random.default_rng(seed), ch_cfg))
    for k in ids:
        for port in ("xmit_data", "xmit_rreq", "xmit_rrep", "xmit_rerr"):
            m.connect(f"n{k}", port, "ch", "tx")
        m.connect("ch", f"out_{k}", f"n{k}", "from_ch")
        m.in_port(f"send_{k}", schema="pkt")
        m.connect_input(f"send_{k}", f"n{k}", "from_app")
    m.in_port("pos", schema="pos")
    m.connect_input("pos", "ch", "pos")
    return build_root(m)


def send(root, src, dst, t, n=10, seq=0, ttl=32):
    pkt = Packet(DATA, src, dst, seq, ttl, n, t, payload=synth_payload(src, dst, seq, n))
    root.inject(Event(f"send_{src}", pkt.encode(), time=t))


def outputs(records, source=None, port=None):
    return [r for r in records if r.kind == "output"
            and (source is None or r.source == source)
            and (port is None or r.port == port)]


LINE3 = [(0.0, 0.0), (8.0, 0.0), (16.0, 0.0)]


class TestDiscovery:
    def test_three_node_line_hand_trace(self):
        root = build_net(LINE3)
        send(root, 0, 2, t=1000)
        records = root.run_until(1_000_000)

        assert [r.time for r in outputs(records, "n0", "xmit_rreq")] == [1000]
        assert [r.time for r in outputs(records, "n1", "xmit_rreq")] == [1005]
        assert [r.time for r in outputs(records, "n2", "xmit_rrep")] == [1010]
        assert [r.time for r in outputs(records, "n1", "xmit_rrep")] == [1015]
        assert [r.time for r in outputs(records, "n0", "xmit_data")] == [1020]
        assert [r.time for r in outputs(records, "n2", "deliver")] == [1190]

        route = root.find_leaf("n0").state.table[2]
        assert route.hop_count == 2 and route.next_hop == 1 and route.valid

    def test_hop_count_matches_bfs_oracle(self):
        root = build_net(LINE3)
        send(root, 0, 2, t=1000)
        root.run_until(1_000_000)
        g = nx.Graph()
        g.add_nodes_from(range(3))
        g.add_edges_from([(0, 1), (1, 2)])
        assert root.find_leaf("n0").state.table[2].hop_count == nx.shortest_path_length(g, 0, 2)

    def test_neighbor_route_cache_hit_skips_discovery(self):
        root = build_net([(0.0, 0.0), (5.0, 0.0)])
        send(root, 0, 1, t=1000, seq=0)
        send(root, 0, 1, t=50_000, seq=1)
        records = root.run_until(1_000_000)
        assert len(outputs(records, "n0", "xmit_rreq")) == 1
        assert len(outputs(records, "n1", "deliver")) == 2
        # second send goes straight out as data at its injection time
        assert 50_000 in [r.time for r in outputs(records, "n0", "xmit_data")]

    def test_duplicate_rreq_is_suppressed(self):
        node = AodvNode(1)
        state = node.initial_state()
        ext = RreqExt(origin_seq=1, dest_seq=0, dest_seq_known=False, hop_count=0)
        rreq = Packet(RREQ, 0, 9, 1, 32, 0, 0, None, ext.encode())
        ev = Event("from_ch", encode_arrival(0, rreq.encode()))
        state, first = aodv_transition(node, state, ev)
        assert any(e.port == "xmit_rreq" for e in first)
        state, second = aodv_transition(node, state, Event("from_ch", encode_arrival(0, rreq.encode())))
        assert second == []


class TestDrops:
    def test_ttl_exhaustion_drops_at_relay(self):
        root = build_net(LINE3)
        send(root, 0, 2, t=1000, seq=0)           # warm up routes
        root.run_until(500_000)
        send(root, 0, 2, t=600_000, seq=1, ttl=1)  # relay decrements to 0
        records = root.run_until(1_000_000)
        assert len(outputs(records, "n1", "drop_ttl")) == 1
        assert len(outputs(records, "n2", "deliver")) == 0

    def test_buffer_overflow_drops_oldest(self):
        cfg = AodvConfig(buffer_limit=2)
        root = build_net([(0.0, 0.0)], cfg=cfg)   # no neighbors: nothing reachable
        for i in range(4):
            send(root, 0, 9, t=1000 + i, seq=i)
        records = root.run_until(60_000)
        drops = outputs(records, "n0", "drop_buffer")
        assert len(drops) == 2

    def test_failed_discovery_drops_buffered_packets(self):
        cfg = AodvConfig(rreq_retries=2, discovery_timeout=100_000)
        root = build_net([(0.0, 0.0)], cfg=cfg)
        send(root, 0, 9, t=1000)
        records = root.run_until(2_000_000)
        # initial attempt + 2 retries, then the buffered packet is abandoned
        assert len(outputs(records, "n0", "xmit_rreq")) == 3
        assert len(outputs(records, "n0", "drop_loss")) == 1
        assert root.find_leaf("n0").state.pending == {}
        assert root.find_leaf("n0").state.buffer == []

    def test_conservation_after_quiescence(self):
        root = build_net(LINE3 + [(24.0, 0.0), (200.0, 0.0)])
        plan = [(0, 2), (0, 3), (1, 4), (2, 0), (3, 5)]   # node 5 unreachable
        for i, (s, d) in enumerate(plan):
            send(root, s, d, t=1000 + 731 * i, seq=i)
        records = root.run_until(30_000_000)
        assert root.next_event_time() == INFINITY
        orig = len(outputs(records, port="orig"))
        delivered = len(outputs(records, port="deliver"))
        dropped = sum(len(outputs(records, port=p))
                      for p in ("drop_ttl", "drop_buffer", "drop_loss"))
        assert orig == len(plan)
        assert orig == delivered + dropped


class TestLinkBreak:
    def test_tx_failure_invalidates_and_sends_rerr(self):
        root = build_net(LINE3)
        send(root, 0, 2, t=1000, seq=0)
        root.run_until(500_000)
        # move C out of everyone's range, then push more data through B
        root.inject(Event("pos", encode_position(2, 500.0, 0.0), time=600_000))
        send(root, 0, 2, t=700_000, seq=1)
        records = root.run_until(2_000_000)
        assert len(outputs(records, "n1", "xmit_rerr")) >= 1
        assert len(outputs(records, "n1", "drop_loss")) == 1
        entry = root.find_leaf("n1").state.table[2]
        assert not entry.valid
        a_entry = root.find_leaf("n0").state.table[2]
        assert not a_entry.valid

    def test_route_reestablished_after_break_and_return(self):
        root = build_net(LINE3)
        send(root, 0, 2, t=1000, seq=0)
        root.run_until(500_000)
        root.inject(Event("pos", encode_position(2, 500.0, 0.0), time=600_000))
        send(root, 0, 2, t=700_000, seq=1)
        root.run_until(1_500_000)
        root.inject(Event("pos", encode_position(2, 16.0, 0.0), time=1_600_000))
        send(root, 0, 2, t=1_700_000, seq=2)
        records = root.run_until(4_000_000)
        delivered = outputs(records, "n2", "deliver")
        assert any(r.time >= 1_700_000 for r in delivered)


class TestInvariants:
    def random_connected_net(self, seed):
        rng = np.random.default_rng(seed)
        while True:
            n = int(rng.integers(4, 9))
            pos = [(float(x), float(y)) for x, y in zip(rng.uniform(0, 60, n), rng.uniform(0, 60, n))]
            states = [NodeState(i, p) for i, p in enumerate(pos)]
            from adhocsim.radio import connectivity_graph

            adj = connectivity_graph(states, RadioModel(UNIT_DISK, range=25))
            g = nx.Graph()
            g.add_nodes_from(adj)
            g.add_edges_from((u, v) for u, vs in adj.items() for v in vs)
            if n > 1 and nx.is_connected(g):
                return pos, g

    @pytest.mark.parametrize("seed", [1, 2, 5])
    def test_route_optimality_and_completeness_static_lossless(self, seed):
        pos, g = self.random_connected_net(seed)
        radio = RadioModel(UNIT_DISK, range=25)
        root = build_net(pos, radio=radio)
        rng = np.random.default_rng(seed + 100)
        pairs = []
        for i in range(3):
            s, d = rng.choice(len(pos), size=2, replace=False)
            pairs.append((int(s), int(d)))
            send(root, int(s), int(d), t=1000 + 40_000 * i, seq=i)
        records = root.run_until(20_000_000)
        delivered = outputs(records, port="deliver")
        assert len(delivered) == len(pairs)
        for s, d in pairs:
            entry = root.find_leaf(f"n{s}").state.table.get(d)
            assert entry is not None
            assert entry.hop_count == nx.shortest_path_length(g, s, d)

    @pytest.mark.parametrize("seed", [3, 8])
    def test_loop_freedom_snapshot(self, seed):
        pos, _ = self.random_connected_net(seed)
        root = build_net(pos, radio=RadioModel(UNIT_DISK, range=25))
        rng = np.random.default_rng(seed)
        for i in range(5):
            s, d = rng.choice(len(pos), size=2, replace=False)
            send(root, int(s), int(d), t=1000 + 30_000 * i, seq=i)
        root.run_until(10_000_000)
        tables = {k: root.find_leaf(f"n{k}").state.table for k in range(len(pos))}
        for dest in range(len(pos)):
            for start in range(len(pos)):
                seen, at = set(), start
                while True:
                    entry = tables[at].get(dest)
                    if entry is None or not entry.valid or at == dest:
                        break
                    assert at not in seen, f"routing loop toward {dest} via {sorted(seen)}"
                    seen.add(at)
                    at = entry.next_hop

"""Assembly of a scenario into one coupled model: per-node subtrees
(traffic generators, socket stack, optional modeled OS stack, routing
engine, mobility driver) around a shared channel.

Component paths are stable and the metrics module keys on them:
``n<k>/vcs``, ``n<k>/aodv``, ``n<k>/os``, ``n<k>/mob``, ``ch``. Every RNG
consumer gets its own labelled stream, so adding a node or model never
perturbs the draws of another.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aodv import AodvNode
from .channel import Channel, encode_position
from .coordinator import RootCoordinator, build_root
from .devs import Atomic, Coupled, Event
from .mobility import Box, NodeState, manhattan_step, parse_mobility_trace, random_waypoint_step
from .packets import DATA, decode_channel_down, decode_packet
from .rng import SeedBank
from .scenario import (
    FULL_STACK,
    MANHATTAN,
    RANDOM_WAYPOINT,
    STATIC,
    TRACE_MOBILITY,
    MobilityConfig,
    ScenarioConfig,
    ScenarioError,
)
from .simtime import INFINITY, SimTime
from .traffic import TrafficGen
from .vcs import EMULATION, SIMULATION, OsStack, VcsAtomic

_MOVE, _EMIT = 0, 1


class MobilityDriver(Atomic):
    """Advances one node's position every update period and publishes it.

    Two-phase so the emitted stamp matches the movement instant: an internal
    at t moves the node, a zero-delay follow-up emits position(t).
    """

    def __init__(self, node_id: int, mcfg: MobilityConfig, box: Box,
                 rng: np.random.Generator, start: tuple[float, float]):
        super().__init__()
        self.node_id = node_id
        self.mcfg = mcfg
        self.box = box
        self.rng = rng
        self.start = start
        self.out_port("pos_out", schema="pos")

    def initial_state(self):
        node = NodeState(self.node_id, self.start)
        if self.mcfg.kind == MANHATTAN:
            node.speed = float(self.rng.uniform(self.mcfg.v_min, self.mcfg.v_max))
        return {"node": node, "phase": _MOVE}

    def time_advance(self, state) -> SimTime:
        return self.mcfg.update_period if state["phase"] == _MOVE else 0

    def output(self, state):
        if state["phase"] == _MOVE:
            return []
        x, y = state["node"].position
        return [Event("pos_out", encode_position(self.node_id, x, y))]

    def internal(self, state):
        if state["phase"] == _EMIT:
            return {"node": state["node"], "phase": _MOVE}
        dt = self.mcfg.update_period
        if self.mcfg.kind == RANDOM_WAYPOINT:
            node = random_waypoint_step(state["node"], dt, self.rng, self.box,
                                        (self.mcfg.v_min, self.mcfg.v_max),
                                        pause=self.mcfg.pause)
        else:
            node = manhattan_step(state["node"], self.mcfg.pitch, dt, self.rng, self.box)
        return {"node": node, "phase": _EMIT}

    def external(self, state, elapsed, events):
        return state


class TracePlayback(Atomic):
    """Replays a parsed mobility trace as position updates."""

    def __init__(self, rows: list[tuple[int, int, float, float]]):
        super().__init__()
        self.rows = [r for r in rows if r[0] > 0]    # t=0 rows are initial placement
        self.out_port("pos_out", schema="pos")

    def initial_state(self):
        return {"idx": 0, "now": 0}

    def time_advance(self, state) -> SimTime:
        if state["idx"] >= len(self.rows):
            return INFINITY
        return self.rows[state["idx"]][0] - state["now"]

    def output(self, state):
        due = self.rows[state["idx"]][0]
        return [Event("pos_out", encode_position(node, x, y))
                for t, node, x, y in self.rows[state["idx"]:] if t == due]

    def internal(self, state):
        due = self.rows[state["idx"]][0]
        idx = state["idx"]
        while idx < len(self.rows) and self.rows[idx][0] == due:
            idx += 1
        return {"idx": idx, "now": due}

    def external(self, state, elapsed, events):
        return {"idx": state["idx"], "now": state["now"] + elapsed}


def initial_positions(cfg: ScenarioConfig, bank: SeedBank) -> list[tuple[float, float]]:
    if cfg.positions is not None:
        return [tuple(p) for p in cfg.positions]
    if cfg.mobility.kind == TRACE_MOBILITY:
        rows = parse_mobility_trace(_read(cfg.mobility.path))
        start = {}
        for t, node, x, y in rows:
            if t == 0 and node not in start:
                start[node] = (x, y)
        missing = [k for k in range(cfg.node_count) if k not in start]
        if missing:
            raise ScenarioError([f"mobility trace has no t=0 position for nodes {missing}"])
        return [start[k] for k in range(cfg.node_count)]
    rng = bank.stream("placement")
    if cfg.mobility.kind == MANHATTAN:
        pitch = cfg.mobility.pitch
        nx = int(cfg.box.width // pitch)
        ny = int(cfg.box.height // pitch)
        return [(pitch * int(rng.integers(0, nx + 1)), pitch * int(rng.integers(0, ny + 1)))
                for _ in range(cfg.node_count)]
    return [(float(rng.uniform(0, cfg.box.width)), float(rng.uniform(0, cfg.box.height)))
            for _ in range(cfg.node_count)]


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


@dataclass
class BuiltNet:
    root: RootCoordinator
    positions: list
    node_paths: dict     # node_id -> vcs leaf path


def build_network(cfg: ScenarioConfig, bank: SeedBank, trace_sink=None) -> BuiltNet:
    """Wire the full scenario model and return its root coordinator."""
    positions = initial_positions(cfg, bank)
    in_kernel_mode = EMULATION if cfg.mode == EMULATION else SIMULATION
    net = Coupled()
    ids = list(range(cfg.node_count))

    for k in ids:
        node = Coupled()
        node.in_port("from_ch", schema="chdown")
        node.in_port("send", schema="pkt")
        node.out_port("chtx", schema="chtx")
        node.out_port("app_out", schema="frame")

        vcs = VcsAtomic(k, mode=in_kernel_mode, mtu=cfg.os_stack.mtu)
        node.add("vcs", vcs)
        node.add("aodv", AodvNode(k, cfg.aodv))
        for i, flow in enumerate(f for f in cfg.traffic if f.src == k):
            node.add(f"traffic{i}", TrafficGen(flow.spec, k))
        node.connect_input("send", "vcs", "app_send")
        node.connect_input("from_ch", "aodv", "from_ch")
        for i, _ in enumerate(f for f in cfg.traffic if f.src == k):
            node.connect(f"traffic{i}", "send", "vcs", "app_send")
        if cfg.stack == FULL_STACK:
            node.add("os", OsStack(cfg.os_stack))
            node.connect("vcs", "net_send", "os", "up_in")
            node.connect("os", "up_out", "aodv", "from_app")
            node.connect("aodv", "deliver", "os", "down_in")
            node.connect("os", "down_out", "vcs", "net_deliver")
        else:
            node.connect("vcs", "net_send", "aodv", "from_app")
            node.connect("aodv", "deliver", "vcs", "net_deliver")
        for port in ("xmit_data", "xmit_rreq", "xmit_rrep", "xmit_rerr"):
            node.connect_output("aodv", port, "chtx")
        node.connect_output("vcs", "app_out", "app_out")

        if cfg.mobility.kind in (RANDOM_WAYPOINT, MANHATTAN):
            node.add("mob", MobilityDriver(k, cfg.mobility, cfg.box,
                                           bank.stream(f"mob:{k}"), positions[k]))
            node.out_port("pos", schema="pos")
            node.connect_output("mob", "pos_out", "pos")
        net.add(f"n{k}", node)

    net.add("ch", Channel(ids, dict(enumerate(positions)), cfg.radio,
                          bank.stream("channel"), cfg.channel))
    if cfg.mobility.kind == TRACE_MOBILITY:
        net.add("mobtrace", TracePlayback(parse_mobility_trace(_read(cfg.mobility.path))))
        net.connect("mobtrace", "pos_out", "ch", "pos")

    for k in ids:
        net.connect(f"n{k}", "chtx", "ch", "tx")
        net.connect("ch", f"out_{k}", f"n{k}", "from_ch")
        if cfg.mobility.kind in (RANDOM_WAYPOINT, MANHATTAN):
            net.connect(f"n{k}", "pos", "ch", "pos")
        net.in_port(f"send_{k}", schema="pkt")
        net.connect_input(f"send_{k}", f"n{k}", "send")
        net.out_port(f"recv_{k}", schema="frame")
        net.connect_output(f"n{k}", "app_out", f"recv_{k}")
    net.in_port("pos", schema="pos")
    net.connect_input("pos", "ch", "pos")
    net.in_port("ctl", schema="ctl")
    net.connect_input("ctl", "ch", "ctl")

    root = build_root(net, trace_sink=trace_sink)
    node_paths = {k: f"n{k}/vcs" for k in ids}
    return BuiltNet(root, positions, node_paths)


def count_in_flight(root: RootCoordinator) -> int:
    """Data packets somewhere between a stack's orig and recv taps."""
    total = 0
    for leaf in root.leaves:
        if leaf.path.endswith("/aodv"):
            total += len(leaf.state.buffer)
        elif leaf.path.endswith("/os"):
            total += len(leaf.state["pending"])
        elif leaf.path == "ch":
            for _, _, port, payload in leaf.state.pending:
                if port == "drop_loss":
                    if decode_packet(payload).kind == DATA:
                        total += 1
                elif port.startswith("out_"):
                    _, _, pkt = decode_channel_down(payload)
                    if pkt.kind == DATA:
                        total += 1
    return total

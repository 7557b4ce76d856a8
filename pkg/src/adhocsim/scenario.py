"""Scenario configuration: a single TOML file describing nodes, mobility,
radio, traffic, mode and horizon.

Parsing is strict: unknown keys anywhere are field-level errors (typo
safety), the seed is mandatory (no wall-clock seeding), and node references
are range-checked. All durations in the file carry a ``_us`` suffix. The
full default set is printable via ``default_scenario_text`` so a run is
reproducible from its file alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib as _toml
except ModuleNotFoundError:            # Python < 3.11
    import tomli as _toml

from .aodv import AodvConfig
from .channel import ChannelConfig
from .mobility import Box
from .pacing import PacingConfig, POLICIES
from .radio import LOSSY, RadioModel, UNIT_DISK
from .simtime import SimTime
from .traffic import BURSTY, CBR, TRACE, TrafficSpec
from .vcs import DEFAULT_BASE_PORT, DEFAULT_MTU, MODES, OsStackConfig, SIMULATION

STATIC = "static"
RANDOM_WAYPOINT = "random_waypoint"
MANHATTAN = "manhattan"
TRACE_MOBILITY = "trace"
MOBILITY_KINDS = (STATIC, RANDOM_WAYPOINT, MANHATTAN, TRACE_MOBILITY)

FULL_STACK = "full_stack"
DIRECT_ROUTE = "direct_route"
STACKS = (FULL_STACK, DIRECT_ROUTE)

DEFAULT_UPDATE_PERIOD = 100_000        # us between mobility updates


class ScenarioError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class MobilityConfig:
    kind: str = STATIC
    v_min: float = 1.0
    v_max: float = 10.0
    pause: float = 0.0                 # seconds
    pitch: float = 50.0
    turn_probs: tuple = (0.5, 0.25, 0.25)
    path: str = ""
    update_period: SimTime = DEFAULT_UPDATE_PERIOD


@dataclass(frozen=True)
class Flow:
    src: int
    dst: int
    spec: TrafficSpec


@dataclass(frozen=True)
class ScenarioConfig:
    node_count: int
    seed: int
    horizon: SimTime
    mode: str = SIMULATION
    stack: str = DIRECT_ROUTE
    box: Box = Box(300.0, 300.0)
    mobility: MobilityConfig = MobilityConfig()
    radio: RadioModel = RadioModel()
    channel: ChannelConfig = ChannelConfig()
    aodv: AodvConfig = AodvConfig()
    os_stack: OsStackConfig = OsStackConfig()
    pacing: Optional[PacingConfig] = None
    base_port: int = DEFAULT_BASE_PORT
    traffic: tuple = ()                            # Flow tuples
    positions: Optional[tuple] = None              # ((x, y), ...) if explicit


class _Reader:
    """Strict dict walker collecting unknown-key and type errors."""

    def __init__(self, errors: list[str]):
        self.errors = errors

    def take(self, table: dict, where: str, key: str, kinds, default=None, required=False):
        if key not in table:
            if required:
                self.errors.append(f"{where}: missing required key '{key}'")
            return default
        v = table.pop(key)
        if kinds is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if not isinstance(v, kinds) or isinstance(v, bool) and kinds is not bool:
            want = kinds.__name__ if isinstance(kinds, type) else "/".join(k.__name__ for k in kinds)
            self.errors.append(f"{where}: key '{key}' must be {want}, got {type(v).__name__}")
            return default
        return v

    def done(self, table: dict, where: str):
        for key in table:
            self.errors.append(f"{where}: unknown key '{key}'")


def _parse_traffic(r: _Reader, i: int, t: dict, node_count: int) -> Optional[Flow]:
    where = f"traffic[{i}]"
    src = r.take(t, where, "src", int, required=True)
    dst = r.take(t, where, "dst", int, required=True)
    kind = r.take(t, where, "kind", str, default=CBR)
    payload_len = r.take(t, where, "payload_len", int, default=64)
    ttl = r.take(t, where, "ttl", int, default=32)
    kwargs = dict(payload_len=payload_len, ttl=ttl)
    if kind == CBR:
        kwargs["rate"] = r.take(t, where, "rate", float, default=1.0)
    elif kind == BURSTY:
        kwargs["burst_len"] = r.take(t, where, "burst_len", int, default=1)
        kwargs["idle_gap"] = r.take(t, where, "idle_gap_us", int, default=1_000_000)
        kwargs["inter_packet"] = r.take(t, where, "inter_packet_us", int, default=10_000)
    elif kind == TRACE:
        sched = r.take(t, where, "schedule_us", list, default=[])
        if dst is not None:
            kwargs["schedule"] = tuple((int(ts), dst, payload_len) for ts in sched)
    else:
        r.errors.append(f"{where}: unknown traffic kind {kind!r}")
        r.done(t, where)
        return None
    r.done(t, where)
    if src is None or dst is None:
        return None
    for label, node in (("src", src), ("dst", dst)):
        if not 0 <= node < node_count:
            r.errors.append(f"{where}: {label} {node} out of range for {node_count} nodes")
    try:
        spec = TrafficSpec(kind, dst=dst, **kwargs)
    except ValueError as e:
        r.errors.append(f"{where}: {e}")
        return None
    return Flow(src, dst, spec)


def _parse_mobility(r: _Reader, m: dict) -> MobilityConfig:
    kind = r.take(m, "mobility", "kind", str, default=STATIC)
    cfg = dict(kind=kind,
               update_period=r.take(m, "mobility", "update_period_us", int,
                                     default=DEFAULT_UPDATE_PERIOD))
    if kind == RANDOM_WAYPOINT:
        cfg["v_min"] = r.take(m, "mobility", "v_min", float, default=1.0)
        cfg["v_max"] = r.take(m, "mobility", "v_max", float, default=10.0)
        cfg["pause"] = r.take(m, "mobility", "pause_s", float, default=0.0)
        if cfg["v_min"] <= 0 or cfg["v_max"] < cfg["v_min"]:
            r.errors.append("mobility: need 0 < v_min <= v_max")
        if cfg["pause"] < 0:
            r.errors.append("mobility: pause_s must be >= 0")
    elif kind == MANHATTAN:
        cfg["pitch"] = r.take(m, "mobility", "pitch", float, default=50.0)
        cfg["v_min"] = r.take(m, "mobility", "v_min", float, default=1.0)
        cfg["v_max"] = r.take(m, "mobility", "v_max", float, default=10.0)
        probs = r.take(m, "mobility", "turn_probs", list, default=[0.5, 0.25, 0.25])
        if len(probs) != 3 or any(p < 0 for p in probs) or sum(probs) <= 0:
            r.errors.append("mobility: turn_probs must be 3 nonnegative weights with a positive sum")
        else:
            cfg["turn_probs"] = tuple(float(p) for p in probs)
        if cfg["pitch"] <= 0:
            r.errors.append("mobility: pitch must be positive")
        if cfg["v_min"] <= 0 or cfg["v_max"] < cfg["v_min"]:
            r.errors.append("mobility: need 0 < v_min <= v_max")
    elif kind == TRACE_MOBILITY:
        cfg["path"] = r.take(m, "mobility", "path", str, required=True, default="")
    elif kind != STATIC:
        r.errors.append(f"mobility: unknown kind {kind!r}")
        cfg["kind"] = STATIC
    r.done(m, "mobility")
    if cfg.get("update_period", 1) <= 0:
        r.errors.append("mobility: update_period_us must be positive")
    return MobilityConfig(**cfg)


def parse_scenario(text: str) -> ScenarioConfig:
    errors: list[str] = []
    try:
        raw = _toml.loads(text)
    except _toml.TOMLDecodeError as e:
        raise ScenarioError([f"not valid TOML: {e}"]) from e
    r = _Reader(errors)

    node_count = r.take(raw, "scenario", "node_count", int, required=True, default=1)
    seed = r.take(raw, "scenario", "seed", int, required=True)
    horizon = r.take(raw, "scenario", "horizon_us", int, required=True, default=1)
    mode = r.take(raw, "scenario", "mode", str, default=SIMULATION)
    stack = r.take(raw, "scenario", "stack", str, default=DIRECT_ROUTE)

    bb = r.take(raw, "scenario", "bounding_box", dict, default={})
    width = r.take(bb, "bounding_box", "width", float, default=300.0)
    height = r.take(bb, "bounding_box", "height", float, default=300.0)
    r.done(bb, "bounding_box")

    mobility = _parse_mobility(r, r.take(raw, "scenario", "mobility", dict, default={}))

    rad = r.take(raw, "scenario", "radio", dict, default={})
    radio_kwargs = dict(
        mode=r.take(rad, "radio", "mode", str, default=UNIT_DISK),
        range=r.take(rad, "radio", "range", float, default=100.0),
        path_loss_exponent=r.take(rad, "radio", "path_loss_exponent", float, default=2.0),
        reference_loss_prob=r.take(rad, "radio", "reference_loss_prob", float, default=0.0),
        reference_distance=r.take(rad, "radio", "reference_distance", float),
    )
    r.done(rad, "radio")

    ch = r.take(raw, "scenario", "channel", dict, default={})
    channel_kwargs = dict(
        bitrate=r.take(ch, "channel", "bitrate", float, default=1_000_000.0),
        propagation=r.take(ch, "channel", "propagation_us", int, default=5),
    )
    r.done(ch, "channel")

    ao = r.take(raw, "scenario", "aodv", dict, default={})
    aodv_kwargs = dict(
        ttl_default=r.take(ao, "aodv", "ttl_default", int, default=32),
        rreq_retries=r.take(ao, "aodv", "rreq_retries", int, default=2),
        route_lifetime=r.take(ao, "aodv", "route_lifetime_us", int, default=3_000_000),
        buffer_limit=r.take(ao, "aodv", "buffer_limit", int, default=64),
        discovery_timeout=r.take(ao, "aodv", "discovery_timeout_us", int, default=200_000),
    )
    r.done(ao, "aodv")

    osd = r.take(raw, "scenario", "os_stack", dict, default={})
    os_kwargs = dict(
        layers=r.take(osd, "os_stack", "layers", int, default=2),
        per_layer_latency=r.take(osd, "os_stack", "per_layer_latency_us", int, default=0),
        mtu=r.take(osd, "os_stack", "mtu", int, default=DEFAULT_MTU),
    )
    r.done(osd, "os_stack")

    pacing = None
    if "pacing" in raw:
        pa = r.take(raw, "scenario", "pacing", dict, default={})
        pacing_kwargs = dict(
            scale=r.take(pa, "pacing", "scale", float, default=1.0),
            late_policy=r.take(pa, "pacing", "late_policy", str, default="release_immediately"),
            tolerance_us=r.take(pa, "pacing", "tolerance_us", float, default=1000.0),
        )
        r.done(pa, "pacing")
        if pacing_kwargs["late_policy"] not in POLICIES:
            errors.append(f"pacing: unknown late_policy {pacing_kwargs['late_policy']!r}")
        else:
            try:
                pacing = PacingConfig(**pacing_kwargs)
            except ValueError as e:
                errors.append(f"pacing: {e}")

    base_port = r.take(raw, "scenario", "base_port", int, default=DEFAULT_BASE_PORT)

    flows = []
    for i, t in enumerate(r.take(raw, "scenario", "traffic", list, default=[])):
        if not isinstance(t, dict):
            errors.append(f"traffic[{i}]: must be a table")
            continue
        flow = _parse_traffic(r, i, t, node_count if node_count else 1)
        if flow is not None:
            flows.append(flow)
    pairs = [(f.src, f.dst) for f in flows]
    for pair in sorted(set(p for p in pairs if pairs.count(p) > 1)):
        errors.append(f"traffic: duplicate flow {pair}; one flow per (src, dst)")

    positions = None
    nodes = r.take(raw, "scenario", "nodes", list, default=None)
    if nodes is not None:
        positions = []
        for i, n in enumerate(nodes):
            if not isinstance(n, dict):
                errors.append(f"nodes[{i}]: must be a table")
                continue
            x = r.take(n, f"nodes[{i}]", "x", float, required=True, default=0.0)
            y = r.take(n, f"nodes[{i}]", "y", float, required=True, default=0.0)
            r.done(n, f"nodes[{i}]")
            positions.append((x, y))
        if node_count is not None and len(positions) != node_count:
            errors.append(f"nodes: {len(positions)} positions for node_count {node_count}")
        positions = tuple(positions)

    r.done(raw, "scenario")

    if node_count is not None and node_count < 1:
        errors.append("scenario: node_count must be >= 1")
    if seed is None:
        pass    # already reported as missing
    elif not 0 <= seed < 2 ** 64:
        errors.append("scenario: seed must fit in u64")
    if horizon is not None and horizon <= 0:
        errors.append("scenario: horizon_us must be positive")
    if mode not in MODES:
        errors.append(f"scenario: unknown mode {mode!r}")
    if stack not in STACKS:
        errors.append(f"scenario: unknown stack {stack!r}")
    if radio_kwargs["mode"] not in (UNIT_DISK, LOSSY):
        errors.append(f"radio: unknown mode {radio_kwargs['mode']!r}")

    radio = channel = aodv = os_stack = None
    if not errors:
        try:
            radio = RadioModel(**radio_kwargs)
        except ValueError as e:
            errors.append(f"radio: {e}")
        try:
            channel = ChannelConfig(**channel_kwargs)
        except ValueError as e:
            errors.append(f"channel: {e}")
        try:
            aodv = AodvConfig(**aodv_kwargs)
        except ValueError as e:
            errors.append(f"aodv: {e}")
        os_stack = OsStackConfig(**os_kwargs)
    if errors:
        raise ScenarioError(errors)
    return ScenarioConfig(node_count=node_count, seed=seed, horizon=horizon,
                          mode=mode, stack=stack, box=Box(width, height),
                          mobility=mobility, radio=radio, channel=channel,
                          aodv=aodv, os_stack=os_stack, pacing=pacing,
                          base_port=base_port, traffic=tuple(flows),
                          positions=positions)


def default_scenario_text() -> str:
    """A complete, runnable scenario with every default spelled out."""
    return f"""\
# Minimal runnable scenario; every key below its default unless marked required.
node_count = 2          # required
seed = 1                # required
horizon_us = 1000000    # required
mode = "{SIMULATION}"
stack = "{DIRECT_ROUTE}"
base_port = {DEFAULT_BASE_PORT}

[bounding_box]
width = 300.0
height = 300.0

[mobility]
kind = "{STATIC}"
update_period_us = {DEFAULT_UPDATE_PERIOD}
# random_waypoint: v_min = 1.0, v_max = 10.0, pause_s = 0.0
# manhattan: pitch = 50.0, v_min = 1.0, v_max = 10.0, turn_probs = [0.5, 0.25, 0.25]
# trace: path = "mobility.trace"

[radio]
mode = "{UNIT_DISK}"
range = 100.0
path_loss_exponent = 2.0
reference_loss_prob = 0.0
# reference_distance defaults to range

[channel]
bitrate = 1000000.0
propagation_us = 5

[aodv]
ttl_default = 32
rreq_retries = 2
route_lifetime_us = 3000000
buffer_limit = 64
discovery_timeout_us = 200000

[os_stack]
layers = 2
per_layer_latency_us = 0
mtu = {DEFAULT_MTU}

# [pacing]            # absent by default; presence enables pacing
# scale = 1.0
# late_policy = "release_immediately"
# tolerance_us = 1000.0

[[traffic]]
src = 0
dst = 1
kind = "{CBR}"
rate = 1.0
payload_len = 64
ttl = 32
# bursty: burst_len = 1, idle_gap_us = 1000000, inter_packet_us = 10000
# trace: schedule_us = [100000, 200000]

# [[nodes]]           # optional explicit positions, one table per node
# x = 0.0
# y = 0.0
"""

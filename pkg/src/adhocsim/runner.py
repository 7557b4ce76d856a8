"""Run orchestration for all three modes.

simulation / emulation: build the coupled model, execute to the horizon,
stream the kernel trace, compute metrics (with the end-state in-flight
count, so the conservation identity is checked exactly). Emulation
additionally mirrors every application delivery over real loopback
datagrams as the run progresses; the kernel trace is unchanged by the
mirror, so determinism is unaffected.

execution: no simulators; the traffic schedule is replayed through real
loopback sockets and the dispatcher's own trace (same line format, wall
microsecond stamps) feeds the same metrics pipeline.
"""

from __future__ import annotations

import socket as _socket
import time as _wall
from dataclasses import dataclass, replace
from typing import Optional

from .metrics import RunMetrics, compute_metrics
from .netbuild import build_network, count_in_flight
from .pacing import PacingReport, paced_run
from .rng import SeedBank
from .scenario import ScenarioConfig
from .simtime import INFINITY
from .traffic import initial_traffic_state, traffic_next
from .vcs import (
    APP_PORT,
    EMULATION,
    EXECUTION,
    VirtualStack,
    decode_loopback,
    map_os_port,
)


@dataclass
class RunResult:
    metrics: RunMetrics
    trace_lines: Optional[list[str]]     # None when streamed to trace_path
    trace_path: Optional[str]
    pacing_report: Optional[PacingReport] = None


def traffic_schedule(cfg: ScenarioConfig) -> list[tuple[int, int, int, bytes]]:
    """All (time_us, src, dst, payload) the scenario's flows emit by the
    horizon, in time order. The same schedule drives every mode."""
    out = []
    for flow in cfg.traffic:
        state = initial_traffic_state(flow.spec)
        while state.next_time <= cfg.horizon:
            pkt, _, state = traffic_next(flow.spec, state, flow.src)
            if pkt is not None:
                out.append((pkt.created, flow.src, pkt.dst, pkt.payload))
            if state.next_time == INFINITY:
                break
    out.sort(key=lambda e: (e[0], e[1], e[2]))
    return out


def _open_sink(trace_path: Optional[str]):
    if trace_path is None:
        lines: list[str] = []
        return lines, (lambda rec: lines.append(rec.line())), (lambda: None)
    f = open(trace_path, "w", encoding="utf-8")
    return None, (lambda rec: f.write(rec.line() + "\n")), f.close


def run_scenario(cfg: ScenarioConfig, trace_path: Optional[str] = None) -> RunResult:
    if cfg.mode == EXECUTION:
        return _run_execution(cfg, trace_path)
    return _run_kernel(cfg, trace_path)


def _run_kernel(cfg: ScenarioConfig, trace_path: Optional[str]) -> RunResult:
    bank = SeedBank(cfg.seed)
    lines, sink, close = _open_sink(trace_path)
    mirror = _Mirror(cfg) if cfg.mode == EMULATION else None
    pacing_report = None
    mirror_count = None
    try:
        built = build_network(cfg, bank, trace_sink=sink)
        root = built.root
        if mirror is not None:
            root.output_listener = mirror.on_root_output
        if cfg.pacing is not None:
            pacing_report = _run_paced(root, cfg)
        else:
            root.run_until(cfg.horizon, collect=False)
        in_flight = count_in_flight(root)
        if mirror is not None:
            mirror_count = mirror.delivered()
    finally:
        close()
        if mirror is not None:
            mirror.close()
    source = open(trace_path, "r", encoding="utf-8") if trace_path else lines
    try:
        metrics = compute_metrics(source, in_flight=in_flight)
    finally:
        if trace_path:
            source.close()
    if pacing_report is not None:
        metrics.pacing = pacing_report.as_metrics()
    if mirror_count is not None:
        metrics.pacing["emu_mirror_delivered"] = mirror_count
    return RunResult(metrics, lines, trace_path, pacing_report)


def _run_paced(root, cfg: ScenarioConfig) -> PacingReport:
    """Step the kernel on a producer thread; release application deliveries
    at their mapped wall dates."""
    pcfg = replace(cfg.pacing, epoch=_wall.monotonic() + 0.005)

    def stream():
        while True:
            t = root.next_event_time()
            if t == INFINITY or t > cfg.horizon:
                break
            for rec in root.step():
                if rec.kind == "output" and rec.port == "recv":
                    yield rec.time, rec

    released: list = []
    return paced_run(stream(), pcfg, released.append)


class _Mirror:
    """Emulation-side loopback transport: forwards each delivery frame to
    the destination node's mapped UDP address and counts real receipts."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.stack = VirtualStack(EXECUTION, base_port=cfg.base_port, mtu=cfg.os_stack.mtu)
        self.socks = {k: self.stack.open(k, APP_PORT) for k in range(cfg.node_count)}
        self._tx = _socket.socket(_socket.AF_INET, _socket.SOCK_DGRAM)

    def on_root_output(self, t, port, ev) -> None:
        if not port.startswith("recv_"):
            return
        dst_node = int(port[len("recv_"):])
        _, _, dst_port, _ = decode_loopback(ev.payload)
        addr = ("127.0.0.1", map_os_port(dst_node, dst_port, self.cfg.base_port))
        self._tx.sendto(ev.payload, addr)

    def delivered(self) -> int:
        deadline = _wall.monotonic() + 2.0
        last, stable_since = -1, _wall.monotonic()
        while _wall.monotonic() < deadline:
            n = len(self.stack.trace)
            if n != last:
                last, stable_since = n, _wall.monotonic()
            elif _wall.monotonic() - stable_since > 0.2:
                break
            _wall.sleep(0.02)
        return sum(1 for _, _, _, port, _ in self.stack.trace if port == "recv")

    def close(self) -> None:
        self._tx.close()
        self.stack.close_all()


def _run_execution(cfg: ScenarioConfig, trace_path: Optional[str]) -> RunResult:
    schedule = traffic_schedule(cfg)
    stack = VirtualStack(EXECUTION, base_port=cfg.base_port, mtu=cfg.os_stack.mtu)
    socks = {}
    pacing_report = None
    try:
        for k in range(cfg.node_count):
            socks[k] = stack.open(k, APP_PORT)
        if cfg.pacing is not None:
            pacing_report = paced_run(
                ((t, (src, dst, payload)) for t, src, dst, payload in schedule),
                replace(cfg.pacing, epoch=_wall.monotonic() + 0.005),
                lambda ev: stack.send(socks[ev[0]], ev[1], APP_PORT, ev[2]))
        else:
            for _, src, dst, payload in schedule:
                stack.send(socks[src], dst, APP_PORT, payload)
                _wall.sleep(0.0002)          # keep loopback bursts inside socket buffers
        _settle(stack, expected=len(schedule))
        lines = stack.trace_lines()
    finally:
        stack.close_all()
    if trace_path:
        with open(trace_path, "w", encoding="utf-8") as f:
            f.writelines(line + "\n" for line in lines)
    metrics = compute_metrics(lines)
    metrics.in_flight = metrics.sent - metrics.delivered - metrics.dropped
    if pacing_report is not None:
        metrics.pacing = pacing_report.as_metrics()
    return RunResult(metrics, None if trace_path else lines, trace_path, pacing_report)


def _settle(stack: VirtualStack, expected: int, timeout: float = 5.0) -> None:
    """Wait until receipts stop arriving (all in flight drained or lost)."""
    deadline = _wall.monotonic() + timeout
    last, stable_since = -1, _wall.monotonic()
    while _wall.monotonic() < deadline:
        n = len(stack.trace)
        if n >= 2 * expected:           # every send got its receipt
            return
        if n != last:
            last, stable_since = n, _wall.monotonic()
        elif _wall.monotonic() - stable_since > 0.25:
            return
        _wall.sleep(0.01)

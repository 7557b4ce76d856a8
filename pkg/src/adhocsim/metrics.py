"""Run metrics from trace files, and trace comparison.

The accounting conventions are tied to the stack's port names: data packets
count as sent when a node's stack records an ``orig`` output and as
delivered on its ``recv`` output (both carry mode-independent identity
digests, so cross-mode traces match). Drop taps are summed per cause from
any source, control overhead from the routing engine's ``xmit_*`` outputs.
Delays pair each ``recv`` with the oldest unmatched ``orig`` of the same
digest.
"""

from __future__ import annotations

from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .coordinator import TraceRecord, parse_trace_line

DROP_CAUSES = ("drop_ttl", "drop_buffer", "drop_loss", "drop_mtu", "drop_nosock")
CONTROL_PORTS = ("xmit_rreq", "xmit_rrep", "xmit_rerr")


class MetricsError(ValueError):
    pass


@dataclass
class RunMetrics:
    sent: int = 0
    delivered: int = 0
    dropped_by_cause: dict = field(default_factory=dict)
    in_flight: int = 0
    pdr: float = 1.0
    zero_traffic: bool = True
    mean_delay: float = 0.0
    p99_delay: float = 0.0
    routing_overhead: float = 0.0
    control_packets: int = 0
    unmatched_deliveries: int = 0
    pacing: dict = field(default_factory=dict)

    @property
    def dropped(self) -> int:
        return sum(self.dropped_by_cause.values())

    def conservation_holds(self) -> bool:
        return self.sent == self.delivered + self.dropped + self.in_flight


def p99(values: list) -> float:
    """Nearest-rank 99th percentile (index ceil(0.99 n) in 1-based terms)."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = -(-99 * len(ordered) // 100)
    return float(ordered[rank - 1])


def iter_records(lines: Iterable[str]) -> Iterable[TraceRecord]:
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield parse_trace_line(line)
        except (ValueError, TypeError) as e:
            raise MetricsError(f"line {i}: {e}") from e


def compute_metrics(lines: Iterable[str], in_flight: int = 0) -> RunMetrics:
    m = RunMetrics(in_flight=in_flight,
                   dropped_by_cause={cause: 0 for cause in DROP_CAUSES})
    open_sends: dict[str, deque] = defaultdict(deque)
    delays: list[int] = []
    for rec in iter_records(lines):
        if rec.kind != "output" or rec.port is None:
            continue
        if rec.port == "orig" and rec.source.endswith("/vcs"):
            m.sent += 1
            open_sends[rec.digest].append(rec.time)
        elif rec.port == "recv" and rec.source.endswith("/vcs"):
            m.delivered += 1
            if open_sends[rec.digest]:
                delays.append(rec.time - open_sends[rec.digest].popleft())
            else:
                m.unmatched_deliveries += 1
        elif rec.port in m.dropped_by_cause:
            m.dropped_by_cause[rec.port] += 1
        elif rec.port in CONTROL_PORTS:
            m.control_packets += 1
    m.zero_traffic = m.sent == 0
    m.pdr = 1.0 if m.zero_traffic else m.delivered / m.sent
    if delays:
        m.mean_delay = sum(delays) / len(delays)
        m.p99_delay = p99(delays)
    if m.delivered:
        m.routing_overhead = m.control_packets / m.delivered
    else:
        m.routing_overhead = float("inf") if m.control_packets else 0.0
    return m


def render_metrics(m: RunMetrics) -> str:
    rows = [("sent", m.sent), ("delivered", m.delivered)]
    rows += [(f"dropped_{cause}", n) for cause, n in sorted(m.dropped_by_cause.items())]
    rows += [("dropped_total", m.dropped), ("in_flight", m.in_flight),
             ("conservation_holds", int(m.conservation_holds())),
             ("pdr", f"{m.pdr:.6f}"), ("zero_traffic", int(m.zero_traffic)),
             ("mean_delay_us", f"{m.mean_delay:.1f}"),
             ("p99_delay_us", f"{m.p99_delay:.1f}"),
             ("control_packets", m.control_packets),
             ("routing_overhead", f"{m.routing_overhead:.6f}")]
    rows += sorted(m.pacing.items())
    return "".join(f"{k}={v}\n" for k, v in rows)


@dataclass(frozen=True)
class DiffReport:
    equivalent: bool
    lines_a: int
    lines_b: int
    first_divergence: Optional[tuple[int, str]] = None   # (line number, field)
    detail: str = ""

    def render(self) -> str:
        if self.equivalent:
            return "equivalent\n"
        if self.first_divergence is None:
            return f"divergent: {self.detail}\n"
        line, fieldname = self.first_divergence
        return f"divergent at line {line} ({fieldname}): {self.detail}\n"


_FIELDS = ("time", "source", "kind", "port", "digest")


def compare_traces(a_lines: Iterable[str], b_lines: Iterable[str],
                   payload_only: bool = False) -> DiffReport:
    a = [l.rstrip("\n") for l in a_lines if l.strip()]
    b = [l.rstrip("\n") for l in b_lines if l.strip()]
    if payload_only:
        return _compare_delivered(a, b)
    for i, (la, lb) in enumerate(zip(a, b), start=1):
        if la == lb:
            continue
        fa, fb = la.split(), lb.split()
        for name, va, vb in zip(_FIELDS, fa, fb):
            if va != vb:
                return DiffReport(False, len(a), len(b), (i, name),
                                  f"{va!r} vs {vb!r}")
        return DiffReport(False, len(a), len(b), (i, "layout"), f"{la!r} vs {lb!r}")
    if len(a) != len(b):
        longer = "a" if len(a) > len(b) else "b"
        return DiffReport(False, len(a), len(b), (min(len(a), len(b)) + 1, "length"),
                          f"trace {longer} has extra lines")
    return DiffReport(True, len(a), len(b))


def _delivered_multiset(lines: list[str]) -> Counter:
    bag: Counter = Counter()
    for rec in iter_records(lines):
        if rec.kind == "output" and rec.port == "recv" and rec.source.endswith("/vcs"):
            bag[rec.digest] += 1
    return bag


def _compare_delivered(a: list[str], b: list[str]) -> DiffReport:
    bag_a, bag_b = _delivered_multiset(a), _delivered_multiset(b)
    if bag_a == bag_b:
        return DiffReport(True, len(a), len(b))
    only_a = bag_a - bag_b
    only_b = bag_b - bag_a
    return DiffReport(False, len(a), len(b), None,
                      f"delivered multisets differ: {sum(only_a.values())} only in a, "
                      f"{sum(only_b.values())} only in b")

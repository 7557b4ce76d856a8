"""Node mobility: random-waypoint and Manhattan-grid motion, plus
trace-driven playback parsing.

Positions are meters in a [0,width]x[0,height] box; time deltas arrive in
microseconds and are converted to seconds here, at the float boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import hypot
from typing import Optional

import numpy as np

from .simtime import SimTime

_EPS = 1e-6


@dataclass(frozen=True)
class Box:
    width: float
    height: float

    def contains(self, x: float, y: float) -> bool:
        return -_EPS <= x <= self.width + _EPS and -_EPS <= y <= self.height + _EPS


@dataclass
class NodeState:
    node_id: int
    position: tuple[float, float]
    waypoint: Optional[tuple[float, float]] = None
    speed: float = 0.0
    enabled: bool = True
    pause_left: float = 0.0    # seconds of dwell remaining at the last waypoint


def _close(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return hypot(a[0] - b[0], a[1] - b[1]) < 1e-9


def random_waypoint_step(state: NodeState, dt: SimTime, rng: np.random.Generator,
                         box: Box, speed_range: tuple[float, float],
                         pause: float = 0.0) -> NodeState:
    """Move toward the waypoint for ``dt``; on arrival dwell ``pause`` seconds,
    then draw a fresh uniform waypoint and speed, possibly several times
    within one step."""
    pos, wp, speed = state.position, state.waypoint, state.speed
    pause_left = state.pause_left
    remaining = dt / 1e6
    while True:
        if pause_left > 0.0:
            used = min(pause_left, remaining)
            pause_left -= used
            remaining -= used
            if remaining <= 0.0:
                break
        if wp is None or _close(pos, wp):
            wp = (float(rng.uniform(0.0, box.width)), float(rng.uniform(0.0, box.height)))
            speed = float(rng.uniform(speed_range[0], speed_range[1]))
        if remaining <= 0 or speed <= 0:
            break
        dx, dy = wp[0] - pos[0], wp[1] - pos[1]
        dist = hypot(dx, dy)
        travel = speed * remaining
        if travel >= dist:
            pos = wp
            remaining -= dist / speed
            pause_left = pause
        else:
            f = travel / dist
            pos = (pos[0] + dx * f, pos[1] + dy * f)
            remaining = 0.0
    return replace(state, position=pos, waypoint=wp, speed=speed, pause_left=pause_left)


def _on_multiple(v: float, pitch: float) -> bool:
    return abs(v - round(v / pitch) * pitch) < _EPS


def _snap(v: float, pitch: float) -> float:
    return round(v / pitch) * pitch


def manhattan_step(state: NodeState, grid_pitch: float, dt: SimTime, rng: np.random.Generator,
                   box: Box, turn_probs: tuple[float, float, float] = (0.5, 0.25, 0.25)) -> NodeState:
    """Advance along grid lines; turn at intersections with probabilities
    (straight, left, right). Turns that would leave the box are excluded and
    the rest renormalized; a dead end reverses."""
    x, y = state.position
    on_v, on_h = _on_multiple(x, grid_pitch), _on_multiple(y, grid_pitch)
    if not (on_v or on_h):
        raise ValueError(f"position {state.position} is not on a grid line of pitch {grid_pitch}")

    def next_target(px: float, py: float, d: tuple[int, int]) -> Optional[tuple[float, float]]:
        if d[0]:
            tx = _snap(px, grid_pitch) + d[0] * grid_pitch
            if _on_multiple(px, grid_pitch) is False:
                # mid-segment: the nearest intersection in that direction
                tx = (np.floor(px / grid_pitch) + (1 if d[0] > 0 else 0)) * grid_pitch
            tgt = (float(tx), py)
        else:
            ty = _snap(py, grid_pitch) + d[1] * grid_pitch
            if _on_multiple(py, grid_pitch) is False:
                ty = (np.floor(py / grid_pitch) + (1 if d[1] > 0 else 0)) * grid_pitch
            tgt = (px, float(ty))
        return tgt if box.contains(*tgt) else None

    def pick_turn(pos: tuple[float, float], incoming: tuple[int, int]) -> tuple[float, float]:
        dxi, dyi = incoming
        options = [(turn_probs[0], incoming), (turn_probs[1], (-dyi, dxi)), (turn_probs[2], (dyi, -dxi))]
        viable = [(p, d) for p, d in options if next_target(pos[0], pos[1], d) is not None]
        if not viable:
            return next_target(pos[0], pos[1], (-dxi, -dyi)) or pos
        total = sum(p for p, _ in viable)
        if total <= 0:
            d = viable[0][1]
        else:
            u = rng.uniform(0.0, total)
            acc = 0.0
            d = viable[-1][1]
            for p, cand in viable:
                acc += p
                if u < acc:
                    d = cand
                    break
        return next_target(pos[0], pos[1], d)

    def draw_initial_target(pos: tuple[float, float]) -> tuple[float, float]:
        dirs = []
        if on_h:
            dirs += [(1, 0), (-1, 0)]
        if on_v:
            dirs += [(0, 1), (0, -1)]
        viable = [d for d in dirs if next_target(pos[0], pos[1], d) is not None] or dirs
        tgt = next_target(pos[0], pos[1], viable[int(rng.integers(0, len(viable)))])
        return tgt if tgt is not None else pos

    pos = (x, y)
    wp = state.waypoint
    if wp is None or _close(pos, wp):
        wp = draw_initial_target(pos)

    remaining = dt / 1e6
    speed = state.speed
    while remaining > 0 and speed > 0 and not _close(pos, wp):
        dx, dy = wp[0] - pos[0], wp[1] - pos[1]
        dist = hypot(dx, dy)
        travel = speed * remaining
        if travel < dist:
            f = travel / dist
            pos = (pos[0] + dx * f, pos[1] + dy * f)
            break
        remaining -= dist / speed
        pos = wp
        incoming = (int(np.sign(dx)), int(np.sign(dy)))
        wp = pick_turn(pos, incoming)
    return replace(state, position=pos, waypoint=wp)


def parse_mobility_trace(text: str) -> list[tuple[int, int, float, float]]:
    """Parse `<time_us> <node_id> <x_m> <y_m>` lines, returned sorted by
    (time, node)."""
    rows = []
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {i}: expected 4 fields, got {len(parts)}")
        try:
            t, node = int(parts[0]), int(parts[1])
            x, y = float(parts[2]), float(parts[3])
        except ValueError as exc:
            raise ValueError(f"line {i}: {exc}") from None
        if t < 0 or node < 0:
            raise ValueError(f"line {i}: negative time or node id")
        rows.append((t, node, x, y))
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows

"""Radio propagation: unit-disk and distance-lossy delivery models, and the
induced connectivity graph."""

from __future__ import annotations

from dataclasses import dataclass
from math import hypot
from typing import Optional

import numpy as np

from .mobility import NodeState

UNIT_DISK = "unit_disk"
LOSSY = "lossy"


@dataclass(frozen=True)
class RadioModel:
    mode: str = UNIT_DISK
    range: float = 100.0
    path_loss_exponent: float = 2.0
    reference_loss_prob: float = 0.0
    # distance at which reference_loss_prob applies; closer counts as this.
    # Defaults to range, making in-range success a flat 1 - reference_loss_prob;
    # set it smaller to get distance falloff.
    reference_distance: Optional[float] = None

    def __post_init__(self):
        if self.mode not in (UNIT_DISK, LOSSY):
            raise ValueError(f"unknown radio mode {self.mode!r}")
        if self.range <= 0:
            raise ValueError("range must be positive")
        if not 0.0 <= self.reference_loss_prob <= 1.0:
            raise ValueError("reference_loss_prob must lie in [0,1]")
        if self.path_loss_exponent < 1.0:
            raise ValueError("path_loss_exponent must be >= 1")
        if self.reference_distance is None:
            object.__setattr__(self, "reference_distance", self.range)
        if self.reference_distance <= 0:
            raise ValueError("reference_distance must be positive")


def probability_at(distance: float, radio: RadioModel) -> float:
    if distance > radio.range:
        return 0.0
    if radio.mode == UNIT_DISK:
        return 1.0
    d = max(distance, radio.reference_distance)
    p = (1.0 - radio.reference_loss_prob) * (radio.reference_distance / d) ** radio.path_loss_exponent
    return min(1.0, max(0.0, p))


def delivery_probability(a: NodeState, b: NodeState, radio: RadioModel) -> float:
    return probability_at(hypot(a.position[0] - b.position[0], a.position[1] - b.position[1]), radio)


def connectivity_graph(states: list[NodeState], radio: RadioModel) -> dict[int, set[int]]:
    """Adjacency over enabled nodes; an edge means a positive delivery
    probability (symmetric for these models)."""
    enabled = [s for s in states if s.enabled]
    adj: dict[int, set[int]] = {s.node_id: set() for s in enabled}
    if len(enabled) < 2:
        return adj
    if radio.mode == LOSSY and radio.reference_loss_prob >= 1.0:
        return adj
    ids = np.array([s.node_id for s in enabled])
    xy = np.array([s.position for s in enabled], dtype=float)
    dx = xy[:, 0:1] - xy[:, 0:1].T
    dy = xy[:, 1:2] - xy[:, 1:2].T
    close = np.hypot(dx, dy) <= radio.range
    np.fill_diagonal(close, False)
    for i, j in zip(*np.nonzero(close)):
        adj[int(ids[i])].add(int(ids[j]))
    return adj

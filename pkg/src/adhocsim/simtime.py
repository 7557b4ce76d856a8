"""Simulated time: non-negative integer microseconds plus an explicit infinity.

Finite times are plain ``int`` microseconds so that identical event dates
compare exactly on every endpoint; ``INFINITY`` is ``float("inf")``, which
orders above every finite value and absorbs finite addition, matching the
time-advance semantics of a passive model.
"""

from __future__ import annotations

from typing import Union

SimTime = Union[int, float]

INFINITY: SimTime = float("inf")

# Largest finite time representable on the wire (u64 with all-ones reserved
# for infinity).
MAX_TIME = 2**64 - 2


class TimeOverflowError(OverflowError):
    """Finite time arithmetic left the representable range."""


def is_finite(t: SimTime) -> bool:
    return t != INFINITY


def check_time(t: SimTime) -> SimTime:
    """Validate a finite time value: integral, non-negative, wire-representable."""
    if t == INFINITY:
        return t
    if not isinstance(t, int) or isinstance(t, bool):
        raise TypeError(f"finite times must be int microseconds, got {t!r}")
    if t < 0:
        raise ValueError(f"times are non-negative, got {t}")
    if t > MAX_TIME:
        raise TimeOverflowError(f"time {t} exceeds the representable maximum")
    return t


def add_time(a: SimTime, b: SimTime) -> SimTime:
    """Checked addition: infinity absorbs, finite overflow is an error."""
    if a == INFINITY or b == INFINITY:
        return INFINITY
    total = a + b
    if total > MAX_TIME:
        raise TimeOverflowError(f"{a} + {b} exceeds the representable maximum")
    return total


def fmt_time(t: SimTime) -> str:
    return "inf" if t == INFINITY else str(t)

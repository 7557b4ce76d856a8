"""Small atomic models and builders reused across kernel tests."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from adhocsim import Atomic, Coupled, Event, INFINITY


@dataclass
class GenState:
    count: int = 0


class Generator(Atomic):
    """Emits a tick on ``out`` every ``period`` microseconds; ignores input."""

    def __init__(self, period: int, payload: bytes = b"tick"):
        super().__init__()
        self.period = period
        self.payload = payload
        self.in_port("in")
        self.out_port("out")

    def initial_state(self):
        return GenState()

    def time_advance(self, state):
        return self.period

    def output(self, state):
        return [Event("out", self.payload + b":%d" % state.count)]

    def internal(self, state):
        return GenState(state.count + 1)

    def external(self, state, elapsed, events):
        return state


@dataclass
class CounterState:
    count: int = 0
    elapsed_log: list = field(default_factory=list)


class Counter(Atomic):
    """Passive sink counting received events and logging elapsed times."""

    def __init__(self):
        super().__init__()
        self.in_port("in")
        self.out_port("out")

    def initial_state(self):
        return CounterState()

    def time_advance(self, state):
        return INFINITY

    def external(self, state, elapsed, events):
        return CounterState(state.count + len(events), state.elapsed_log + [elapsed])


@dataclass
class RelayState:
    # pending: (countdown, payload) pairs, FIFO
    pending: tuple = ()


class Relay(Atomic):
    """Re-emits every input on ``out`` after a fixed positive delay."""

    def __init__(self, delay: int):
        super().__init__()
        if delay < 1:
            raise ValueError("relay delay must be >= 1us")
        self.delay = delay
        self.in_port("in")
        self.out_port("out")

    def initial_state(self):
        return RelayState()

    def time_advance(self, state):
        return min((c for c, _ in state.pending), default=INFINITY)

    def output(self, state):
        due = min(c for c, _ in state.pending)
        return [Event("out", p) for c, p in state.pending if c == due]

    def internal(self, state):
        due = min(c for c, _ in state.pending)
        return RelayState(tuple((c - due, p) for c, p in state.pending if c != due))

    def external(self, state, elapsed, events):
        aged = tuple((c - elapsed, p) for c, p in state.pending)
        fresh = tuple((self.delay, ev.payload) for ev in events)
        return RelayState(aged + fresh)


@dataclass
class TokenState:
    has_token: bool


class PingPong(Atomic):
    """Holds a token for ``period`` then passes it out; waits otherwise."""

    def __init__(self, period: int, start_with_token: bool):
        super().__init__()
        self.period = period
        self.start = start_with_token
        self.in_port("in")
        self.out_port("out")

    def initial_state(self):
        return TokenState(self.start)

    def time_advance(self, state):
        return self.period if state.has_token else INFINITY

    def output(self, state):
        return [Event("out", b"token")]

    def internal(self, state):
        return TokenState(False)

    def external(self, state, elapsed, events):
        return TokenState(True)


def ping_pong_pair(period: int = 2_000_000) -> Coupled:
    m = Coupled()
    m.add("a", PingPong(period, True))
    m.add("b", PingPong(period, False))
    m.connect("a", "out", "b", "in")
    m.connect("b", "out", "a", "in")
    return m


def random_model(rng: np.random.Generator, max_depth: int = 3, budget: int = 10) -> Coupled:
    """Random valid hierarchy of generators, relays and counters.

    Every component exposes ``in``/``out`` so couplings can be drawn freely;
    relays and generators keep at least 1us between receive and emit, so no
    instantaneous cycle can arise.
    """
    counter = [0]

    def make_atomic() -> Atomic:
        kind = rng.integers(0, 3)
        if kind == 0:
            return Generator(int(rng.integers(300_000, 1_700_000)))
        if kind == 1:
            return Relay(int(rng.integers(50_000, 400_000)))
        return Counter()

    def make_coupled(depth: int, budget: int) -> tuple[Coupled, int]:
        m = Coupled()
        m.in_port("in")
        m.out_port("out")
        n_children = int(rng.integers(1, 4))
        names = []
        for i in range(n_children):
            if budget <= 0:
                break
            name = f"c{counter[0]}"
            counter[0] += 1
            if depth < max_depth - 1 and budget >= 2 and rng.random() < 0.35:
                child, budget = make_coupled(depth + 1, budget)
                m.add(name, child)
            else:
                m.add(name, make_atomic())
                budget -= 1
            names.append(name)
        if not names:
            name = f"c{counter[0]}"
            counter[0] += 1
            m.add(name, make_atomic())
            budget -= 1
            names.append(name)
        for name in names:
            if rng.random() < 0.6:
                m.connect_input("in", name, "in")
        m.connect_output(str(rng.choice(names)), "out", "out")
        for src in names:
            for dst in names:
                if src != dst and rng.random() < 0.3:
                    m.connect(src, "out", dst, "in")
        return m, budget

    model, _ = make_coupled(0, budget)
    return model


def record_tuples(records):
    return [(r.time, r.source, r.kind, r.port, r.digest) for r in records]

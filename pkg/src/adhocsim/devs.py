"""Discrete-event model structures: atomic behaviours, coupled compositions,
structural validation and hierarchy flattening.

An atomic model is a behaviour specification (transition functions over an
opaque state); a coupled model composes components through input/output port
couplings. Compositions are closed under coupling: any valid coupled model is
flattenable to a single-level model with identical observable behaviour.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

from .simtime import SimTime

IN = "in"
OUT = "out"


@dataclass(frozen=True)
class Port:
    """A named, direction-fixed port with a declared payload schema tag."""

    name: str
    direction: str
    schema: str = "bytes"


@dataclass
class Event:
    """A timestamped payload crossing a port.

    ``schema`` defaults to the emitting port's declared schema; the kernel
    aborts routing when they disagree. ``time`` is stamped by the kernel for
    outputs and must be set explicitly for injected events.
    """

    port: str
    payload: bytes
    time: Optional[SimTime] = None
    schema: Optional[str] = None


class ModelError(ValueError):
    """Raised for structurally invalid models or ill-formed events."""


@dataclass(frozen=True)
class CouplingError:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class _Ported:
    """Shared port declaration surface for atomic and coupled models."""

    def __init__(self) -> None:
        self.input_ports: dict[str, Port] = {}
        self.output_ports: dict[str, Port] = {}

    def in_port(self, name: str, schema: str = "bytes") -> Port:
        return self._declare(name, IN, schema)

    def out_port(self, name: str, schema: str = "bytes") -> Port:
        return self._declare(name, OUT, schema)

    def _declare(self, name: str, direction: str, schema: str) -> Port:
        if name in self.input_ports or name in self.output_ports:
            raise ModelError(f"port {name!r} already declared on this model")
        port = Port(name, direction, schema)
        (self.input_ports if direction == IN else self.output_ports)[name] = port
        return port


class Atomic(_Ported):
    """Base class for atomic behaviours.

    The simulator owns the state object; it is created once per simulator
    leaf via ``initial_state`` (which must return a fresh object on every
    call) and threaded through the transition functions. Transition functions
    may mutate and return the same object.
    """

    def initial_state(self) -> object:
        raise NotImplementedError

    def time_advance(self, state: object) -> SimTime:
        """Time until the next internal transition. Must be deterministic."""
        raise NotImplementedError

    def output(self, state: object) -> list[Event]:
        """Output bag, produced only when imminent, before ``internal``."""
        return []

    def internal(self, state: object) -> object:
        raise NotImplementedError(f"{type(self).__name__} has no internal transition")

    def external(self, state: object, elapsed: SimTime, events: list[Event]) -> object:
        raise NotImplementedError(f"{type(self).__name__} does not accept input")


Component = Union[Atomic, "Coupled"]


@dataclass(frozen=True)
class Coupling:
    src_component: Optional[str]  # None = the coupled model's own input port
    src_port: str
    dst_component: Optional[str]  # None = the coupled model's own output port
    dst_port: str

    def __str__(self) -> str:
        src = self.src_port if self.src_component is None else f"{self.src_component}.{self.src_port}"
        dst = self.dst_port if self.dst_component is None else f"{self.dst_component}.{self.dst_port}"
        return f"{src} -> {dst}"


class Coupled(_Ported):
    """A composition of components with external-input, internal and
    external-output couplings plus a deterministic tie-breaking order.

    Construction is permissive (couplings may name components that do not
    exist yet); ``validate_coupling`` reports every structural violation.
    """

    def __init__(self, select_order: Optional[Sequence[str]] = None) -> None:
        super().__init__()
        self.components: list[tuple[str, Component]] = []
        self.eic: list[Coupling] = []
        self.ic: list[Coupling] = []
        self.eoc: list[Coupling] = []
        self._select_order: Optional[list[str]] = list(select_order) if select_order else None

    @property
    def select_order(self) -> list[str]:
        if self._select_order is not None:
            return self._select_order
        return [name for name, _ in self.components]

    @select_order.setter
    def select_order(self, order: Sequence[str]) -> None:
        self._select_order = list(order)

    def add(self, name: str, component: Component) -> Component:
        self.components.append((name, component))
        return component

    def component(self, name: str) -> Optional[Component]:
        for cname, comp in self.components:
            if cname == name:
                return comp
        return None

    def connect_input(self, own_port: str, component: str, port: str) -> None:
        self.eic.append(Coupling(None, own_port, component, port))

    def connect(self, src: str, src_port: str, dst: str, dst_port: str) -> None:
        self.ic.append(Coupling(src, src_port, dst, dst_port))

    def connect_output(self, component: str, port: str, own_port: str) -> None:
        self.eoc.append(Coupling(component, port, None, own_port))


def validate_coupling(model: Coupled, path: str = "") -> list[CouplingError]:
    """Check all structural invariants recursively; empty list means valid."""
    here = path or "<root>"
    errors: list[CouplingError] = []
    seen: dict[str, Component] = {}
    for name, comp in model.components:
        # "/" is legal: flattened models keep hierarchical path names. Path
        # collisions are caught when the coordinator indexes leaves.
        if name in seen:
            errors.append(CouplingError(here, f"duplicate component name {name!r}"))
        elif not name or " " in name:
            errors.append(CouplingError(here, f"component name {name!r} is empty or contains spaces"))
        else:
            seen[name] = comp

    order = model.select_order
    if sorted(order) != sorted(seen.keys()) or len(order) != len(model.components):
        errors.append(
            CouplingError(here, f"select_order {order!r} is not a total order over components")
        )

    def port_of(comp_name: Optional[str], port_name: str, need: str) -> Optional[Port]:
        if comp_name is None:
            owner: _Ported = model
        else:
            comp = seen.get(comp_name)
            if comp is None:
                return None
            owner = comp
        table = owner.input_ports if need == IN else owner.output_ports
        return table.get(port_name)

    def check(coupling: Coupling, src_dir: str, dst_dir: str, kind: str) -> None:
        src = port_of(coupling.src_component, coupling.src_port, src_dir)
        dst = port_of(coupling.dst_component, coupling.dst_port, dst_dir)
        if src is None:
            errors.append(CouplingError(here, f"{kind} coupling [{coupling}] names a missing source port"))
        if dst is None:
            errors.append(CouplingError(here, f"{kind} coupling [{coupling}] names a missing destination port"))
        if src is not None and dst is not None and src.schema != dst.schema:
            errors.append(
                CouplingError(
                    here,
                    f"{kind} coupling [{coupling}] schema mismatch: "
                    f"{src.name}:{src.schema} vs {dst.name}:{dst.schema}",
                )
            )

    for c in model.eic:
        check(c, IN, IN, "external-input")
    for c in model.eoc:
        check(c, OUT, OUT, "external-output")
    for c in model.ic:
        check(c, OUT, IN, "internal")
        if c.src_component is not None and c.src_component == c.dst_component:
            errors.append(CouplingError(here, f"internal coupling [{c}] connects a component to itself"))

    for name, comp in seen.items():
        if isinstance(comp, Coupled):
            errors.extend(validate_coupling(comp, f"{path}/{name}" if path else name))
    # The permissive containers cannot express a direct input->output
    # feedthrough (eic targets component inputs, eoc sources component
    # outputs), so that invariant holds by construction.
    return errors


def iter_atomics(model: Coupled, prefix: tuple[str, ...] = ()) -> Iterator[tuple[tuple[str, ...], Atomic]]:
    """Depth-first traversal of atomic leaves, children in select_order."""
    by_name = dict(model.components)
    for name in model.select_order:
        comp = by_name[name]
        if isinstance(comp, Coupled):
            yield from iter_atomics(comp, prefix + (name,))
        else:
            yield prefix + (name,), comp


@dataclass
class ResolvedRoutes:
    """Transitive closure of the coupling graph down to atomic ports.

    ``from_input`` maps a root input port to the atomic input ports it feeds;
    ``from_atomic`` maps an atomic output port to its atomic destinations and
    any root output ports it surfaces on.
    """

    from_input: dict[str, list[tuple[tuple[str, ...], str]]] = field(default_factory=dict)
    from_atomic: dict[tuple[tuple[str, ...], str], tuple[list[tuple[tuple[str, ...], str]], list[str]]] = field(
        default_factory=dict
    )


def resolve_routes(model: Coupled) -> ResolvedRoutes:
    """Flatten the coupling graph of a validated hierarchy."""

    def descend(coupled: Coupled, prefix: tuple[str, ...], port: str) -> list[tuple[tuple[str, ...], str]]:
        out: list[tuple[tuple[str, ...], str]] = []
        by_name = dict(coupled.components)
        for c in coupled.eic:
            if c.src_port != port:
                continue
            child = by_name[c.dst_component]
            if isinstance(child, Coupled):
                out.extend(descend(child, prefix + (c.dst_component,), c.dst_port))
            else:
                out.append((prefix + (c.dst_component,), c.dst_port))
        return out

    routes = ResolvedRoutes()
    for port in model.input_ports:
        routes.from_input[port] = descend(model, (), port)

    def ascend(
        coupled: Coupled, prefix: tuple[str, ...], parents: list[tuple[Coupled, tuple[str, ...], str]],
        comp_name: str, port: str,
    ) -> tuple[list[tuple[tuple[str, ...], str]], list[str]]:
        """Targets reachable from component ``comp_name``'s output ``port``
        inside ``coupled``; ``parents`` is the enclosing chain (model, prefix,
        our name within it) used to follow external-output couplings upward.
        """
        dests: list[tuple[tuple[str, ...], str]] = []
        root_outs: list[str] = []
        by_name = dict(coupled.components)
        for c in coupled.ic:
            if c.src_component != comp_name or c.src_port != port:
                continue
            child = by_name[c.dst_component]
            if isinstance(child, Coupled):
                dests.extend(descend(child, prefix + (c.dst_component,), c.dst_port))
            else:
                dests.append((prefix + (c.dst_component,), c.dst_port))
        for c in coupled.eoc:
            if c.src_component != comp_name or c.src_port != port:
                continue
            if parents:
                parent, parent_prefix, our_name = parents[-1]
                sub_dests, sub_roots = ascend(parent, parent_prefix, parents[:-1], our_name, c.dst_port)
                dests.extend(sub_dests)
                root_outs.extend(sub_roots)
            else:
                root_outs.append(c.dst_port)
        return dests, root_outs

    def walk(coupled: Coupled, prefix: tuple[str, ...], parents: list[tuple[Coupled, tuple[str, ...], str]]) -> None:
        for name, comp in coupled.components:
            if isinstance(comp, Coupled):
                walk(comp, prefix + (name,), parents + [(coupled, prefix, name)])
            else:
                for port in comp.output_ports:
                    routes.from_atomic[(prefix + (name,), port)] = ascend(
                        coupled, prefix, parents, name, port
                    )

    walk(model, (), [])
    return routes


def flatten(model: Coupled) -> Coupled:
    """Collapse a hierarchy into a single-level coupled model of atomics.

    Component names are the slash-joined hierarchical paths and the select
    order is the depth-first order of the original hierarchy, so a flattened
    run reproduces the hierarchical run's tie-breaking exactly.
    """
    errors = validate_coupling(model)
    if errors:
        raise ModelError("; ".join(map(str, errors)))

    flat = Coupled()
    for port in model.input_ports.values():
        flat.in_port(port.name, port.schema)
    for port in model.output_ports.values():
        flat.out_port(port.name, port.schema)

    for path, atomic in iter_atomics(model):
        flat.add("/".join(path), atomic)

    routes = resolve_routes(model)
    for own_port, targets in routes.from_input.items():
        for path, port in targets:
            flat.connect_input(own_port, "/".join(path), port)
    for (path, port), (targets, root_outs) in routes.from_atomic.items():
        src = "/".join(path)
        for dst_path, dst_port in targets:
            flat.connect(src, port, "/".join(dst_path), dst_port)
        for own_port in root_outs:
            flat.connect_output(src, port, own_port)
    return flat

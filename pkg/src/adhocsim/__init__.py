"""Discrete-event simulation toolkit for mobile ad-hoc networks, with a
mode-transparent virtual socket layer, external co-simulation bridging, and
real-time pacing."""

__version__ = "0.1.0"

from .devs import Atomic, Coupled, CouplingError, Event, ModelError, Port, flatten, validate_coupling
from .coordinator import (
    InjectReceipt,
    KernelError,
    RootCoordinator,
    StaleInjectionError,
    TraceRecord,
    build_root,
)
from .simtime import INFINITY, MAX_TIME, SimTime, TimeOverflowError
from .scenario import ScenarioConfig, ScenarioError, default_scenario_text, parse_scenario
from .runner import RunResult, run_scenario
from .metrics import (
    DiffReport,
    MetricsError,
    RunMetrics,
    compare_traces,
    compute_metrics,
    render_metrics,
)
from .pacing import PacingConfig, PacingReport, PacingViolation, paced_run
from .vcs import EMULATION, EXECUTION, MODES, SIMULATION, VcsError, VirtualStack
from .bus import Bus, BusError, BusMessage, CausalityFault, ConverterContract, wrap

__all__ = [
    "Atomic",
    "Bus",
    "BusError",
    "BusMessage",
    "CausalityFault",
    "ConverterContract",
    "Coupled",
    "CouplingError",
    "DiffReport",
    "EMULATION",
    "EXECUTION",
    "Event",
    "InjectReceipt",
    "INFINITY",
    "KernelError",
    "MAX_TIME",
    "MetricsError",
    "MODES",
    "ModelError",
    "PacingConfig",
    "PacingReport",
    "PacingViolation",
    "Port",
    "RootCoordinator",
    "RunMetrics",
    "RunResult",
    "ScenarioConfig",
    "ScenarioError",
    "SIMULATION",
    "SimTime",
    "StaleInjectionError",
    "TimeOverflowError",
    "TraceRecord",
    "VcsError",
    "VirtualStack",
    "build_root",
    "compare_traces",
    "compute_metrics",
    "default_scenario_text",
    "flatten",
    "paced_run",
    "parse_scenario",
    "render_metrics",
    "run_scenario",
    "validate_coupling",
    "wrap",
]

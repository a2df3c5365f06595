"""Deterministic coupled Monte Carlo laboratory for the three-state contact process on Z."""

from .streams import Construction, Event, StreamKey, StreamKind, site_streams, window_events
from .process import (
    Configuration,
    ProcessState,
    Trajectory,
    WindowBreachError,
    WindowPolicy,
    apply_event,
    contact_evolve,
    evolve,
)

__version__ = "0.1.0"

__all__ = [
    "Construction",
    "Event",
    "StreamKey",
    "StreamKind",
    "site_streams",
    "window_events",
    "Configuration",
    "ProcessState",
    "Trajectory",
    "WindowBreachError",
    "WindowPolicy",
    "apply_event",
    "contact_evolve",
    "evolve",
    "__version__",
]

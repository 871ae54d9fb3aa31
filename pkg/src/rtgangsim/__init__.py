"""Discrete-event simulator of gang scheduling with memory-bandwidth throttling on a multicore SoC."""
from .engine import Engine, EventKind, PastEvent, Trace
from .platform import PartitionConfig, PlatformSpec, default_platform
from .sim import InvariantViolation, SimConfig, SimResult, Simulation, simulate

__version__ = "0.1.0"

"""Per-core LLC budget regulation and the iGPU throttle actuator."""
from __future__ import annotations

from dataclasses import dataclass, field

from .platform import GpuSpec


class LevelOutOfRange(ValueError):
    pass


OK = "Ok"
THROTTLED = "Throttled"


@dataclass
class RefillCounter:
    """Models L1D_CACHE_REFILL: LLC accesses by best-effort work, per core."""

    num_cores: int
    line_bytes: int = 64
    counts: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.counts:
            self.counts = [0.0] * self.num_cores

    def add(self, core: int, accesses: float) -> None:
        self.counts[core] += accesses

    def bytes(self, core: int) -> float:
        return self.counts[core] * self.line_bytes

    def reset(self) -> None:
        self.counts = [0.0] * self.num_cores


@dataclass
class LlcRegulator:
    """MemGuard-style budget: ``threshold x period`` bytes per core per period.

    Only best-effort consumption is charged. A core whose consumption reaches
    the budget while real-time work is active stays throttled until the next
    replenish.
    """

    num_cores: int
    threshold_bytes_per_s: float = 100e6
    regulation_period_ns: int = 1_000_000
    line_bytes: int = 64
    enabled: bool = True
    consumed: list[float] = field(default_factory=list)
    throttled: list[bool] = field(default_factory=list)

    def __post_init__(self):
        self.consumed = [0.0] * self.num_cores
        self.throttled = [False] * self.num_cores

    @property
    def budget_bytes(self) -> float:
        return self.threshold_bytes_per_s * self.regulation_period_ns * 1e-9

    def remaining(self, core: int) -> float:
        return max(0.0, self.budget_bytes - self.consumed[core])

    def charge(self, core: int, nbytes: float, rt_active: bool = True) -> str:
        if not self.enabled or not rt_active:
            return THROTTLED if self.throttled[core] else OK
        if nbytes <= 0:
            return THROTTLED if self.throttled[core] else OK
        self.consumed[core] += nbytes
        if self.consumed[core] >= self.budget_bytes:
            self.throttled[core] = True
        return THROTTLED if self.throttled[core] else OK

    def account(self, core: int, nbytes: float) -> None:
        """Count consumption without a throttle decision (RT inactive)."""
        if self.enabled:
            self.consumed[core] += nbytes

    def exhausted(self, core: int) -> bool:
        return self.enabled and self.consumed[core] >= self.budget_bytes * (1 - 1e-12)

    def throttle(self, core: int) -> None:
        self.throttled[core] = True

    def replenish(self) -> list[int]:
        """Start a new period; returns the cores that resume."""
        resumed = [c for c in range(self.num_cores) if self.throttled[c]]
        self.consumed = [0.0] * self.num_cores
        self.throttled = [False] * self.num_cores
        return resumed


@dataclass(frozen=True)
class GpuThrottleState:
    level: int
    fraction: float


def set_gpu_level(level: int, gpu: GpuSpec) -> GpuThrottleState:
    if not isinstance(level, int) or not 0 <= level < gpu.num_throttle_levels:
        raise LevelOutOfRange(f"GPU throttle level {level} not in [0, {gpu.num_throttle_levels - 1}]")
    return GpuThrottleState(level, gpu.fraction(level))

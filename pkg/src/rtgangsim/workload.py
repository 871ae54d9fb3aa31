"""Task models for the AR-HUD case study and the DoS attacker family.

Everything here is a timing/demand model: a job is a bag of CPU cycles,
LLC hits and DRAM accesses (plus an optional GPU phase), not real work.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .engine import NS_PER_S
from .platform import PlatformSpec, default_platform


class WorkloadError(ValueError):
    pass


class InvalidCombination(WorkloadError):
    pass


class VirtualGangError(WorkloadError):
    pass


class Pattern(str, Enum):
    BW = "Bw"
    PLL = "PLL"
    BKPLL = "BkPLL"


class AccessType(str, Enum):
    READ = "read"
    WRITE = "write"


class Target(str, Enum):
    LLC = "LLC"
    DRAM = "DRAM"


@dataclass(frozen=True)
class DemandProfile:
    """Work of one job. ``bank=None`` means accesses spread uniformly over banks.

    Infinite counts mark a saturating stream (an attacker loop).
    """

    cpu_cycles: float = 0.0
    llc_accesses: float = 0.0
    dram_accesses: float = 0.0
    bank: int | None = None
    write: bool = False

    def __post_init__(self):
        if min(self.cpu_cycles, self.llc_accesses, self.dram_accesses) < 0:
            raise WorkloadError("demand counts must be >= 0")
        if self.bank is not None and not self.llc_accesses > 0:
            raise WorkloadError("SingleBank spread requires llc_accesses > 0")

    @property
    def saturating(self) -> bool:
        return math.isinf(self.llc_accesses) or math.isinf(self.dram_accesses) or math.isinf(self.cpu_cycles)

    def nominal_ns(self, platform: PlatformSpec) -> float:
        """Uncontended execution time: compute + LLC hits + DRAM accesses in series."""
        return (
            self.cpu_cycles / platform.core_freq_hz * NS_PER_S
            + self.llc_accesses * platform.llc.hit_latency_ns
            + self.dram_accesses * platform.dram.access_latency_ns
        )


def profile_from_times(compute_ms: float, llc_ms: float, dram_ms: float,
                       platform: PlatformSpec | None = None, write: bool = False) -> DemandProfile:
    platform = platform or default_platform()
    return DemandProfile(
        cpu_cycles=round(compute_ms * 1e-3 * platform.core_freq_hz),
        llc_accesses=round(llc_ms * 1e6 / platform.llc.hit_latency_ns),
        dram_accesses=round(dram_ms * 1e6 / platform.dram.access_latency_ns),
        write=write,
    )


@dataclass(frozen=True)
class Periodic:
    period_ns: int
    offset_ns: int = 0


@dataclass(frozen=True)
class EventDriven:
    trigger: str            # name of the thread whose completion fires this one
    probability: float = 1.0


@dataclass(frozen=True)
class GpuDemand:
    compute_ns: float
    mem_bytes: float


@dataclass(frozen=True)
class ThreadSpec:
    name: str
    activation: Periodic | EventDriven
    demand: DemandProfile
    deadline_ns: int | None = None
    cores: tuple[int, ...] | None = None   # None: any core of the gang
    drop_if_busy: bool = False
    queue_depth: int = 0
    gpu: GpuDemand | None = None

    def __post_init__(self):
        act = self.activation
        if isinstance(act, Periodic):
            if act.period_ns < 0:
                raise WorkloadError(f"{self.name}: period must be >= 0")
            if self.deadline_ns is not None and act.period_ns and self.deadline_ns > act.period_ns:
                raise WorkloadError(f"{self.name}: deadline must not exceed period")
        elif not 0.0 <= act.probability <= 1.0:
            raise WorkloadError(f"{self.name}: trigger probability must be in [0, 1]")

    @property
    def periodic(self) -> bool:
        return isinstance(self.activation, Periodic)


@dataclass(frozen=True)
class GangSpec:
    id: str
    threads: tuple[ThreadSpec, ...]
    cores: frozenset[int]
    rt_priority: int
    partition_id: str | None = None
    colors: frozenset[int] = frozenset()
    virtual_gang_group: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "cores", frozenset(self.cores))
        object.__setattr__(self, "colors", frozenset(self.colors))
        object.__setattr__(self, "threads", tuple(self.threads))
        names = [t.name for t in self.threads]
        if len(set(names)) != len(names):
            raise WorkloadError(f"gang {self.id}: duplicate thread names")
        if not self.cores:
            raise WorkloadError(f"gang {self.id}: empty core set")
        for t in self.threads:
            if t.cores is not None and not set(t.cores) <= self.cores:
                raise WorkloadError(f"gang {self.id}: thread {t.name} pinned outside gang cores")
            if isinstance(t.activation, EventDriven) and t.activation.trigger not in names:
                raise WorkloadError(f"gang {self.id}: {t.name} triggered by unknown thread")

    def thread(self, name: str) -> ThreadSpec:
        for t in self.threads:
            if t.name == name:
                return t
        raise KeyError(name)

    @property
    def period_ns(self) -> int | None:
        periods = [t.activation.period_ns for t in self.threads if t.periodic]
        return min(periods) if periods else None

    def affinity(self, thread: ThreadSpec) -> tuple[int, ...]:
        return tuple(sorted(thread.cores if thread.cores is not None else self.cores))


@dataclass(frozen=True)
class AttackerSpec:
    pattern: Pattern
    access_type: AccessType
    target: Target
    target_bank: int | None = None
    core: int | None = None          # None: may run on any free core
    colors: frozenset[int] = frozenset()
    id: str = ""

    @property
    def name(self) -> str:
        return f"{self.pattern.value}{self.access_type.value.capitalize()}({self.target.value})"

    @property
    def demand(self) -> DemandProfile:
        write = self.access_type is AccessType.WRITE
        if self.target is Target.LLC:
            return DemandProfile(llc_accesses=math.inf, bank=self.target_bank, write=write)
        return DemandProfile(dram_accesses=math.inf, write=write)


ATTACKER_NAMES = tuple(
    f"{p.value}{a.value.capitalize()}({t.value})"
    for p in Pattern for a in AccessType for t in Target
    if not (p is Pattern.BKPLL and t is Target.DRAM)
)


def build_attacker(pattern, access_type, target, bank: int | None = None, *,
                   core: int | None = None, colors: Iterable[int] = (2, 3), id: str = "") -> AttackerSpec:
    pattern, access_type, target = Pattern(pattern), AccessType(access_type), Target(target)
    if pattern is Pattern.BKPLL:
        if target is not Target.LLC:
            raise InvalidCombination("BkPLL attacks only target the LLC")
        bank = 0 if bank is None else bank
    elif bank is not None:
        raise InvalidCombination(f"{pattern.value} does not pin a bank")
    spec = AttackerSpec(pattern, access_type, target, bank, core, frozenset(colors), id)
    if not id:
        spec = AttackerSpec(pattern, access_type, target, bank, core, frozenset(colors),
                            f"{spec.name}@{'any' if core is None else core}")
    return spec


def parse_attacker_name(name: str) -> tuple[Pattern, AccessType, Target]:
    """Inverse of ``AttackerSpec.name``: ``"BkPLLWrite(LLC)"`` -> parts."""
    head, _, rest = name.partition("(")
    target = Target(rest.rstrip(")"))
    for acc in AccessType:
        suffix = acc.value.capitalize()
        if head.endswith(suffix):
            return Pattern(head[: -len(suffix)]), acc, target
    raise WorkloadError(f"cannot parse attacker name {name!r}")


@dataclass(frozen=True)
class SlamPipelineSpec:
    frame_rate_hz: float = 20.0
    keyframe_probability: float = 0.3
    front_end: DemandProfile = field(default_factory=lambda: profile_from_times(15.0, 12.0, 3.0))
    mapping: DemandProfile = field(default_factory=lambda: profile_from_times(20.0, 15.0, 5.0))
    state_opt: DemandProfile = field(default_factory=lambda: profile_from_times(16.0, 36.0, 8.0))
    cores: frozenset[int] = frozenset({0, 1})
    # the front end keeps a core of its own; the keyframe chain shares the other
    front_end_cores: tuple[int, ...] | None = (0,)
    backend_cores: tuple[int, ...] | None = (1,)
    rt_priority: int = 2
    partition_id: str = "A"
    colors: frozenset[int] = frozenset({0, 1})
    virtual_gang_group: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.keyframe_probability <= 1.0:
            raise WorkloadError("keyframe_probability must be in [0, 1]")
        if self.frame_rate_hz < 0:
            raise WorkloadError("frame_rate_hz must be >= 0")


def period_from_rate(rate_hz: float) -> int:
    return 0 if rate_hz == 0 else int(round(NS_PER_S / rate_hz))


def build_slam_gang(spec: SlamPipelineSpec = SlamPipelineSpec(), id: str = "slam") -> GangSpec:
    period = period_from_rate(spec.frame_rate_hz)
    threads = (
        ThreadSpec("FrontEnd", Periodic(period), spec.front_end,
                   deadline_ns=period or None, drop_if_busy=True, cores=spec.front_end_cores),
        ThreadSpec("Mapping", EventDriven("FrontEnd", spec.keyframe_probability), spec.mapping,
                   cores=spec.backend_cores),
        ThreadSpec("StateOpt", EventDriven("Mapping", 1.0), spec.state_opt, cores=spec.backend_cores),
    )
    return GangSpec(id, threads, spec.cores, spec.rt_priority, spec.partition_id,
                    spec.colors, spec.virtual_gang_group)


def playback_source(rate_hz: float = 20.0, core: int = 2, priority: int = 2, *,
                    demand: DemandProfile | None = None, partition_id: str = "A",
                    colors: Iterable[int] = (2, 3), virtual_gang_group: str | None = None,
                    id: str = "rosbag") -> GangSpec:
    # ~3.75 ms per 50 ms frame: 7.5 % of one core
    demand = demand or profile_from_times(3.0, 0.6, 0.15)
    period = period_from_rate(rate_hz)
    thread = ThreadSpec("Playback", Periodic(period), demand, deadline_ns=period or None)
    return GangSpec(id, (thread,), frozenset({core}), priority, partition_id,
                    frozenset(colors), virtual_gang_group)


@dataclass(frozen=True)
class DnnTaskSpec:
    rate_hz: float = 20.0
    cpu_launch_cycles: float = 286_000       # 0.2 ms of launch work
    launch_llc_accesses: float = 5_000
    gpu_compute_ns: float = 1.0e6
    gpu_mem_bytes: float = 594.54e6
    core: int = 3
    rt_priority: int = 1
    partition_id: str = "B"
    colors: frozenset[int] = frozenset({2, 3})

    def __post_init__(self):
        if min(self.rate_hz, self.cpu_launch_cycles, self.gpu_compute_ns, self.gpu_mem_bytes) < 0:
            raise WorkloadError("DNN task parameters must be >= 0")


def build_dnn_gang(spec: DnnTaskSpec = DnnTaskSpec(), id: str = "dnn") -> GangSpec:
    period = period_from_rate(spec.rate_hz)
    thread = ThreadSpec(
        "Inference", Periodic(period),
        DemandProfile(cpu_cycles=spec.cpu_launch_cycles, llc_accesses=spec.launch_llc_accesses),
        deadline_ns=period or None,
        gpu=GpuDemand(spec.gpu_compute_ns, spec.gpu_mem_bytes),
    )
    return GangSpec(id, (thread,), frozenset({spec.core}), spec.rt_priority,
                    spec.partition_id, spec.colors)


def periodic_release_times(thread: ThreadSpec, horizon_ns: int) -> list[int]:
    """All release instants of a periodic thread in [0, horizon)."""
    act = thread.activation
    if not isinstance(act, Periodic) or act.period_ns == 0:
        return []
    return list(range(act.offset_ns, horizon_ns, act.period_ns))


def keyframe_rng(seed: int, gang_id: str, thread: str) -> random.Random:
    # one stream per (gang, thread): scheduling changes cannot shift the draws
    return random.Random(f"{seed}:{gang_id}:{thread}")


def release_jobs(gang: GangSpec, completed: str, rngs: dict[str, random.Random]) -> list[str]:
    """Threads released by the completion of ``completed`` (event-driven chain)."""
    out = []
    for t in gang.threads:
        act = t.activation
        if isinstance(act, EventDriven) and act.trigger == completed:
            if act.probability >= 1.0:
                out.append(t.name)
            elif act.probability > 0.0 and rngs[t.name].random() < act.probability:
                out.append(t.name)
    return out


def validate_virtual_gangs(gangs: Sequence[GangSpec]) -> None:
    groups: dict[str, list[GangSpec]] = {}
    for g in gangs:
        if g.virtual_gang_group is not None:
            groups.setdefault(g.virtual_gang_group, []).append(g)
    for name, members in groups.items():
        prios = {g.rt_priority for g in members}
        periods = {g.period_ns for g in members}
        parts = {g.partition_id for g in members}
        if len(prios) > 1:
            raise VirtualGangError(f"virtual gang {name}: mixed priorities {sorted(prios)}")
        if len(periods) > 1:
            raise VirtualGangError(f"virtual gang {name}: mixed periods {sorted(p or 0 for p in periods)}")
        if len(parts) > 1:
            raise VirtualGangError(f"virtual gang {name}: members in different partitions")


def nominal_utilization(gang: GangSpec, platform: PlatformSpec) -> float:
    """Solo CPU utilization of a single-thread periodic task on its core."""
    t = gang.threads[0]
    period = t.activation.period_ns if t.periodic else 0
    return t.demand.nominal_ns(platform) / period if period else 0.0


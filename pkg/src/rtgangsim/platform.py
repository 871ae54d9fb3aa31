"""Static hardware description: cores, banked LLC, DRAM pool and iGPU.

Defaults are the Jetson Nano (Tegra X1) numbers. Quantities the vendor
does not publish (bank count, per-bank service rate, latencies) are model
parameters and can be overridden from a scenario file.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping


class PlatformError(ValueError):
    """Base class for platform/partition validation failures."""


class OverlappingPartitions(PlatformError):
    pass


class UnknownCore(PlatformError):
    pass


class InvalidColor(PlatformError):
    pass


def default_throttle_curve(levels: int = 32, knee: int = 15, floor: float = 0.47) -> tuple[float, ...]:
    """Bandwidth fraction per iGPU throttle level.

    Flat at 1.0 up to ``knee``, then linear down to ``floor`` at the last level.
    """
    last = levels - 1
    curve = []
    for level in range(levels):
        if level <= knee:
            curve.append(1.0)
        else:
            curve.append(1.0 - (1.0 - floor) * (level - knee) / (last - knee))
    return tuple(curve)


@dataclass(frozen=True)
class LlcSpec:
    size_bytes: int = 2 * 1024 * 1024
    ways: int = 16
    num_banks: int = 8
    bank_peak_rate: float = 150e6  # accesses/s per bank
    hit_latency_ns: float = 20.0
    num_colors: int = 4
    line_bytes: int = 64

    def __post_init__(self):
        if self.num_banks < 1:
            raise PlatformError("llc.num_banks must be >= 1")
        if self.num_colors < 1:
            raise PlatformError("llc.num_colors must be >= 1")
        if self.bank_peak_rate <= 0 or self.hit_latency_ns <= 0:
            raise PlatformError("llc bank rate and hit latency must be positive")
        if self.size_bytes % (self.ways * self.num_colors * self.line_bytes):
            raise PlatformError("llc.size_bytes must be divisible by ways*num_colors*line_bytes")

    @property
    def color_bytes(self) -> int:
        return self.size_bytes // self.num_colors


@dataclass(frozen=True)
class DramSpec:
    peak_bw_bytes_per_s: float = 25.6e9
    access_latency_ns: float = 120.0
    write_penalty: float = 1.5

    def __post_init__(self):
        if self.peak_bw_bytes_per_s <= 0:
            raise PlatformError("dram.peak_bw_bytes_per_s must be positive")
        if self.access_latency_ns <= 0 or self.write_penalty < 1.0:
            raise PlatformError("dram latency must be positive and write_penalty >= 1")


@dataclass(frozen=True)
class GpuSpec:
    num_throttle_levels: int = 32
    mem_share_bytes_per_s: float = 18e9
    throttle_curve: tuple[float, ...] = field(default_factory=default_throttle_curve)

    def __post_init__(self):
        curve = tuple(float(x) for x in self.throttle_curve)
        object.__setattr__(self, "throttle_curve", curve)
        if len(curve) != self.num_throttle_levels:
            raise PlatformError("gpu.throttle_curve needs one entry per level")
        if curve[0] != 1.0:
            raise PlatformError("gpu.throttle_curve must start at 1.0")
        if any(not 0.0 < f <= 1.0 for f in curve):
            raise PlatformError("gpu.throttle_curve values must lie in (0, 1]")
        if any(b > a for a, b in zip(curve, curve[1:])):
            raise PlatformError("gpu.throttle_curve must be non-increasing")

    def fraction(self, level: int) -> float:
        return self.throttle_curve[level]


@dataclass(frozen=True)
class PlatformSpec:
    num_cores: int = 4
    core_freq_hz: float = 1.43e9
    llc: LlcSpec = field(default_factory=LlcSpec)
    dram: DramSpec = field(default_factory=DramSpec)
    gpu: GpuSpec = field(default_factory=GpuSpec)

    def __post_init__(self):
        if self.num_cores < 1:
            raise PlatformError("num_cores must be >= 1")
        if self.core_freq_hz <= 0:
            raise PlatformError("core_freq_hz must be positive")


@dataclass(frozen=True)
class PartitionConfig:
    """Gang partitions (disjoint core sets) plus the page-color assignment."""

    gang_partitions: tuple[frozenset[int], ...] = ()
    color_assignment: Mapping[str, frozenset[int]] = field(default_factory=dict)
    partition_ids: tuple[str, ...] = ()

    def partition_of_core(self, core: int) -> int | None:
        for idx, cores in enumerate(self.gang_partitions):
            if core in cores:
                return idx
        return None


def default_platform() -> PlatformSpec:
    return PlatformSpec()


def validate_partitions(spec: PlatformSpec, cfg: PartitionConfig) -> None:
    """Raise a PlatformError subclass unless ``cfg`` fits ``spec``."""
    seen: set[int] = set()
    for cores in cfg.gang_partitions:
        for core in cores:
            if not 0 <= core < spec.num_cores:
                raise UnknownCore(f"core {core} does not exist (num_cores={spec.num_cores})")
        overlap = seen & set(cores)
        if overlap:
            raise OverlappingPartitions(f"cores {sorted(overlap)} appear in more than one partition")
        seen |= set(cores)
    for owner, colors in cfg.color_assignment.items():
        for color in colors:
            if not 0 <= color < spec.llc.num_colors:
                raise InvalidColor(f"{owner}: color {color} >= num_colors {spec.llc.num_colors}")


def bank_of(access_index: int, llc: LlcSpec, target_bank: int | None = None) -> int:
    # colors select sets, not banks: the mapping ignores color assignment
    if access_index < 0:
        raise ValueError("access_index must be non-negative")
    if target_bank is not None:
        return target_bank % llc.num_banks
    return access_index % llc.num_banks

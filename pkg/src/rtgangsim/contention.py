"""Fluid contention model for CPU cores, LLC banks, DRAM and the iGPU.

Every active execution context is either

* a *latency-bound job*: it alternates compute, LLC hits and DRAM accesses
  in series, so its speed follows from the per-access latencies it sees;
* a *stream*: a saturating attacker loop with a fixed number of requests in
  flight (its memory-level parallelism);
* the *GPU kernel*: issues DRAM traffic at its demand ceiling, scaled by the
  throttle fraction and capped by its share of the DRAM queue.

Resources are modeled by the work they hold. With ``W`` the outstanding
service time queued at a resource (occupancy x per-access service time):

    bank latency  t_b = max(hit, W_b)                      (pipelined bank)
    DRAM latency  t_d = max(h_d + alpha * W_d, W_d)         (loaded queue)

Queued work beyond a bank's pipeline also backs up the shared L2 request
path; latency-bound jobs pay ``hol = gamma * sum_b max(0, W_b - hit) *
(t_d / h_d) ** p`` on every LLC access, and GPU requests pay a weighted
share of it on top of ``t_d``. The fixed point of occupancy vs latency is
found by damped iteration from the uncontended latencies; without the GPU
share the map is monotone, so the result is the least fixed point.

Since ``t >= W`` at every resource, per-bank and DRAM throughput never exceed
capacity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

from .engine import NS_PER_S
from .platform import PlatformSpec


class ContentionError(RuntimeError):
    pass


class OversubscribedCore(ContentionError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Calibration constants. All are exposed under ``model:`` in scenarios."""

    epoch_us: float = 100.0
    bank_write_weight: float = 1.2
    miss_fraction: float = 0.3
    dram_queue_alpha: float = 0.75
    llc_stream_mlp: float = 6.0
    dram_stream_mlp: float = 10.0
    gpu_mlp: float = 70.0
    hol_factor: float = 0.1
    hol_dram_exponent: float = 9.0
    gpu_hol_weight: float = 0.02
    bw_mlp_scale: float = 1.25    # sequential streams keep more misses in flight than pointer chases
    damping: float = 0.5
    max_iterations: int = 5000
    tolerance: float = 1e-12

    def __post_init__(self):
        if not 0.0 <= self.miss_fraction <= 1.0:
            raise ValueError("miss_fraction must be in [0, 1]")
        if not 0.0 <= self.dram_queue_alpha < 1.0:
            raise ValueError("dram_queue_alpha must be in [0, 1)")
        if self.bank_write_weight < 1.0:
            raise ValueError("bank_write_weight must be >= 1")
        if min(self.llc_stream_mlp, self.dram_stream_mlp, self.gpu_mlp, self.bw_mlp_scale) <= 0:
            raise ValueError("stream/GPU MLP must be positive")
        if self.hol_factor < 0 or self.hol_dram_exponent < 0 or self.gpu_hol_weight < 0:
            raise ValueError("hol parameters must be >= 0")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must be in (0, 1]")
        if self.epoch_us <= 0:
            raise ValueError("epoch_us must be positive")


@dataclass(frozen=True)
class ExecContext:
    """Remaining work of something that is running right now.

    ``core=None`` denotes the GPU kernel. Infinite counts mark a stream.
    """

    owner: str
    core: int | None
    cpu_cycles: float = 0.0
    llc_accesses: float = 0.0
    dram_accesses: float = 0.0
    bank: int | None = None
    write: bool = False
    colors: frozenset[int] = frozenset()
    sched_class: str = "rt"
    share: float = 1.0
    throttled: bool = False
    gpu_compute_ns: float = 0.0
    gpu_mem_bytes: float = 0.0
    mlp: float | None = None
    group: str = ""     # threads of one task share a working set

    @property
    def is_gpu(self) -> bool:
        return self.core is None

    @property
    def is_stream(self) -> bool:
        return math.isinf(self.llc_accesses) or math.isinf(self.dram_accesses)

    @property
    def llc_footprint(self) -> bool:
        return self.llc_accesses > 0

    @property
    def complete(self) -> bool:
        if self.is_gpu:
            return self.gpu_compute_ns <= 0 and self.gpu_mem_bytes <= 0
        return self.cpu_cycles <= 0 and self.llc_accesses <= 0 and self.dram_accesses <= 0


@dataclass(frozen=True)
class Allocation:
    """Steady rates for a fixed set of contexts (all per second)."""

    progress: tuple[float, ...]      # fraction of remaining work/s; 0 for streams
    cpu_rate: tuple[float, ...]      # cycles/s
    llc_rate: tuple[float, ...]      # LLC accesses/s
    dram_rate: tuple[float, ...]     # DRAM accesses (64 B lines)/s
    gpu_bytes_rate: tuple[float, ...]
    bank_access_rate: tuple[float, ...]
    bank_latency_ns: tuple[float, ...]
    dram_latency_ns: float
    hol_ns: float
    extra_dram: tuple[float, ...]    # LLC accesses converted to DRAM by color sharing
    iterations: int


@dataclass
class EpochOutcome:
    retired: list[dict] = field(default_factory=list)
    llc_bytes: dict[int, float] = field(default_factory=dict)
    dram_bytes: dict[int, float] = field(default_factory=dict)
    gpu_dram_bytes: float = 0.0
    bank_accesses: list[float] = field(default_factory=list)
    allocation: Allocation | None = None


def miss_inflation(context: ExecContext, cohabitants: Iterable[ExecContext], fraction: float = 0.3) -> float:
    """Extra DRAM accesses caused by sharing page colors with another task's LLC-heavy context."""
    if context.is_stream or context.is_gpu or context.llc_accesses <= 0:
        return 0.0
    for other in cohabitants:
        if other is context or other.is_gpu:
            continue
        if context.group and other.group == context.group:
            continue
        if other.llc_footprint and context.colors & other.colors:
            return fraction * context.llc_accesses
    return 0.0


def _check_cores(contexts: Sequence[ExecContext]) -> None:
    load: dict[int, float] = {}
    gpus = 0
    for c in contexts:
        if c.is_gpu:
            gpus += 1
            continue
        load[c.core] = load.get(c.core, 0.0) + c.share
        if load[c.core] > 1.0 + 1e-9:
            raise OversubscribedCore(f"core {c.core} has more than one full context")
    if gpus > 1:
        raise OversubscribedCore("more than one GPU context")


def gpu_slice(dram_latency_ns: float, platform: PlatformSpec, params: ModelParams) -> float:
    """GPU share of DRAM (bytes/s): demand ceiling, or what its queue slots sustain."""
    line = platform.llc.line_bytes
    return min(platform.gpu.mem_share_bytes_per_s, params.gpu_mlp * line / (dram_latency_ns * 1e-9))


def gpu_service(gpu_context: ExecContext, throttle_level: int, dram_latency_ns: float,
                platform: PlatformSpec, params: ModelParams = ModelParams()) -> float:
    """Kernel time in ns: compute + traffic / (allocated bandwidth x throttle fraction)."""
    if not 0 <= throttle_level < platform.gpu.num_throttle_levels:
        raise ValueError(f"throttle level {throttle_level} out of range")
    f = platform.gpu.fraction(throttle_level)
    bw = gpu_slice(dram_latency_ns, platform, params) * f
    return gpu_context.gpu_compute_ns + gpu_context.gpu_mem_bytes / bw * NS_PER_S


def solve(contexts: Sequence[ExecContext], platform: PlatformSpec,
          params: ModelParams = ModelParams(), gpu_fraction: float = 1.0) -> Allocation:
    return _solve(tuple(contexts), platform, params, float(gpu_fraction))


@lru_cache(maxsize=8192)
def _solve(contexts: tuple[ExecContext, ...], platform: PlatformSpec,
           params: ModelParams, gpu_fraction: float) -> Allocation:
    _check_cores(contexts)
    llc, dram = platform.llc, platform.dram
    nb = llc.num_banks
    hit = llc.hit_latency_ns * 1e-9
    h_d = dram.access_latency_ns * 1e-9
    s_bank = 1.0 / llc.bank_peak_rate
    s_dram = llc.line_bytes / dram.peak_bw_bytes_per_s
    inv_f = 1.0 / platform.core_freq_hz
    alpha, gamma, expo = params.dram_queue_alpha, params.hol_factor, params.hol_dram_exponent
    n = len(contexts)

    extra = [miss_inflation(c, contexts, params.miss_fraction) for c in contexts]

    # per-context static description
    kinds, shares = [], []
    bank_mix: list[list[tuple[int, float]]] = []   # (bank, accesses or stream weight)
    dram_n, cpu_s, wb, wd = [], [], [], []
    for i, c in enumerate(contexts):
        share = 0.0 if c.throttled else c.share
        shares.append(share)
        wb.append(s_bank * (params.bank_write_weight if c.write else 1.0))
        wd.append(s_dram * (dram.write_penalty if c.write else 1.0))
        if c.is_gpu:
            kinds.append("gpu")
            bank_mix.append([])
            dram_n.append(c.gpu_mem_bytes / llc.line_bytes)
            cpu_s.append(c.gpu_compute_ns * 1e-9)
            continue
        if c.is_stream:
            kinds.append("stream")
            mix = []
            if c.llc_accesses > 0:
                k = c.mlp if c.mlp is not None else params.llc_stream_mlp
                if c.bank is not None:
                    mix.append((c.bank % nb, k))
                else:
                    mix.extend((b, k / nb) for b in range(nb))
            bank_mix.append(mix)
            k = c.mlp if c.mlp is not None else params.dram_stream_mlp
            dram_n.append(k if c.dram_accesses > 0 else 0.0)
            cpu_s.append(0.0)
            continue
        kinds.append("job")
        a = c.llc_accesses    # converted misses still look up their bank first
        if a > 0:
            if c.bank is not None:
                bank_mix.append([(c.bank % nb, a)])
            else:
                bank_mix.append([(b, a / nb) for b in range(nb)])
        else:
            bank_mix.append([])
        dram_n.append(c.dram_accesses + extra[i])
        cpu_s.append(c.cpu_cycles * inv_f)

    floors = [cpu_s[i] + dram_n[i] * h_d + sum(a for _, a in bank_mix[i]) * hit if kinds[i] == "job" else 0.0
              for i in range(n)]
    # bank occupancy ignores cohabitant-induced misses, otherwise a newcomer that
    # pushes a job to DRAM would free bank capacity for everyone else
    bank_floors = [f - extra[i] * h_d if kinds[i] == "job" else 0.0 for i, f in enumerate(floors)]
    t_b = [hit] * nb
    t_d = h_d
    hol = 0.0
    it = 0
    while True:
        it += 1
        w_b = [0.0] * nb
        w_d = 0.0
        for i in range(n):
            share = shares[i]
            if share == 0.0:
                continue
            kind = kinds[i]
            if kind == "stream":
                for b, k in bank_mix[i]:
                    w_b[b] += share * k * wb[i]
                w_d += share * dram_n[i] * wd[i]
            elif kind == "job":
                # occupancy at each resource is taken with every other resource at its
                # uncontended latency: stalling elsewhere never frees queue space, which
                # keeps the map monotone
                floor = floors[i]
                if floor <= 0:
                    continue
                for b, a in bank_mix[i]:
                    extra_b = a * (t_b[b] - hit)
                    w_b[b] += share * a * t_b[b] / (bank_floors[i] + extra_b) * wb[i]
                if dram_n[i]:
                    w_d += share * dram_n[i] * t_d / (floor + dram_n[i] * (t_d - h_d)) * wd[i]
            else:
                if dram_n[i] <= 0:
                    continue
                rtt = t_d + params.gpu_hol_weight * hol
                bw = gpu_slice(rtt * 1e9, platform, params) * gpu_fraction
                total = cpu_s[i] + dram_n[i] * llc.line_bytes / bw
                rate = 1.0 / total
                # requests stalled on the request path still hold queue slots
                w_d += rate * dram_n[i] * rtt * wd[i]
        new_tb = [max(hit, w) for w in w_b]
        excess = sum(max(0.0, w - hit) for w in w_b)
        new_td = max(h_d + alpha * w_d, w_d)
        new_hol = gamma * excess * (new_td / h_d) ** expo
        delta = max(
            max(abs(x - y) / y for x, y in zip(new_tb, t_b)),
            abs(new_td - t_d) / t_d,
            abs(new_hol - hol) / max(hol, hit),
        )
        lam = params.damping
        t_b = [x + lam * (y - x) for x, y in zip(t_b, new_tb)]
        t_d += lam * (new_td - t_d)
        hol += lam * (new_hol - hol)
        if delta < params.tolerance or it >= params.max_iterations:
            break

    progress, cpu_rate, llc_rate, dram_rate, gpu_rate = [], [], [], [], []
    bank_rate = [0.0] * nb
    for i, c in enumerate(contexts):
        share = shares[i]
        kind = kinds[i]
        if share == 0.0 or (kind == "job" and c.complete):
            progress.append(0.0); cpu_rate.append(0.0); llc_rate.append(0.0)
            dram_rate.append(0.0); gpu_rate.append(0.0)
            continue
        if kind == "stream":
            lr = 0.0
            for b, k in bank_mix[i]:
                r = share * k / t_b[b]
                bank_rate[b] += r
                lr += r
            dr = share * dram_n[i] / t_d if dram_n[i] else 0.0
            progress.append(0.0); cpu_rate.append(0.0); llc_rate.append(lr)
            dram_rate.append(dr); gpu_rate.append(0.0)
        elif kind == "job":
            total = cpu_s[i] + dram_n[i] * t_d + sum(a * (t_b[b] + hol) for b, a in bank_mix[i])
            rate = share / total
            for b, a in bank_mix[i]:
                bank_rate[b] += rate * a
            progress.append(rate)
            cpu_rate.append(rate * c.cpu_cycles)
            llc_rate.append(rate * (c.llc_accesses - extra[i]))
            dram_rate.append(rate * dram_n[i])
            gpu_rate.append(0.0)
        else:
            bw = gpu_slice((t_d + params.gpu_hol_weight * hol) * 1e9, platform, params) * gpu_fraction
            total = cpu_s[i] + (c.gpu_mem_bytes / bw if c.gpu_mem_bytes > 0 else 0.0)
            rate = 1.0 / total if total > 0 else 0.0
            progress.append(rate); cpu_rate.append(0.0); llc_rate.append(0.0)
            dram_rate.append(rate * dram_n[i])
            gpu_rate.append(rate * c.gpu_mem_bytes)
    return Allocation(
        tuple(progress), tuple(cpu_rate), tuple(llc_rate), tuple(dram_rate), tuple(gpu_rate),
        tuple(bank_rate), tuple(t * 1e9 for t in t_b), t_d * 1e9, hol * 1e9,
        tuple(extra), it,
    )


def check_conservation(alloc: Allocation, contexts: Sequence[ExecContext], platform: PlatformSpec,
                       params: ModelParams = ModelParams(), rel: float = 1e-6) -> None:
    """Raise ContentionError if any bank or the DRAM serves more than its capacity."""
    cap = platform.llc.bank_peak_rate
    for b, r in enumerate(alloc.bank_access_rate):
        if r > cap * (1 + rel):
            raise ContentionError(f"bank {b} retires {r:.4g}/s > capacity {cap:.4g}/s")
    line = platform.llc.line_bytes
    weighted = 0.0
    for c, dr in zip(contexts, alloc.dram_rate):
        weighted += dr * line * (platform.dram.write_penalty if c.write else 1.0)
    if weighted > platform.dram.peak_bw_bytes_per_s * (1 + rel):
        raise ContentionError(f"DRAM serves {weighted:.4g} B/s > peak")


def epoch_progress(contexts: Sequence[ExecContext], platform: PlatformSpec, partitions=None,
                   throttle_state=None, epoch_len_ns: int | None = None,
                   params: ModelParams = ModelParams()) -> EpochOutcome:
    """Work retired by each context over one epoch at the current rates.

    ``throttle_state`` may carry a ``fraction`` attribute (GPU throttle);
    ``partitions`` is accepted for interface symmetry, colors live on the contexts.
    """
    if epoch_len_ns is None:
        epoch_len_ns = int(params.epoch_us * 1000)
    gpu_fraction = getattr(throttle_state, "fraction", 1.0) if throttle_state is not None else 1.0
    alloc = solve(contexts, platform, params, gpu_fraction)
    dt = epoch_len_ns * 1e-9
    out = EpochOutcome(allocation=alloc)
    line = platform.llc.line_bytes
    for i, c in enumerate(contexts):
        if c.is_stream:
            rec = {"owner": c.owner, "cpu_cycles": 0.0,
                   "llc_accesses": alloc.llc_rate[i] * dt, "dram_accesses": alloc.dram_rate[i] * dt,
                   "gpu_bytes": 0.0, "fraction": 0.0}
        else:
            frac = min(1.0, alloc.progress[i] * dt)
            rec = {"owner": c.owner, "fraction": frac,
                   "cpu_cycles": frac * c.cpu_cycles,
                   "llc_accesses": frac * (c.llc_accesses - alloc.extra_dram[i]),
                   "dram_accesses": frac * (c.dram_accesses + alloc.extra_dram[i]),
                   "gpu_bytes": frac * c.gpu_mem_bytes}
        out.retired.append(rec)
        if c.core is not None:
            out.llc_bytes[c.core] = out.llc_bytes.get(c.core, 0.0) + rec["llc_accesses"] * line
            out.dram_bytes[c.core] = out.dram_bytes.get(c.core, 0.0) + rec["dram_accesses"] * line
        else:
            out.gpu_dram_bytes += rec["gpu_bytes"]
    out.bank_accesses = [r * dt for r in alloc.bank_access_rate]
    return out

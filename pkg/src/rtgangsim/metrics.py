"""Summaries of a finished run: latency distributions, frame counts, bandwidth series."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .engine import NS_PER_MS, NS_PER_S, EventKind, Trace


class MalformedTrace(ValueError):
    pass


class ScenarioMismatch(ValueError):
    pass


@dataclass(frozen=True)
class LatencySample:
    task: str
    thread: str
    release_ns: int
    completion_ns: int
    latency_ns: int
    deadline_met: bool | None = None   # None for threads without a deadline
    start_ns: int | None = None        # first dispatch, when the trace records it

    @property
    def exec_ns(self) -> int:
        """Dispatch-to-completion time; equals latency when the start is unknown."""
        return self.completion_ns - (self.start_ns if self.start_ns is not None else self.release_ns)


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile; ``q`` in [0, 100]."""
    if not values:
        return 0.0
    if not 0 <= q <= 100:
        raise ValueError("percentile must be in [0, 100]")
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class LatencyStats:
    count: int = 0
    min_ms: float = 0.0
    median_ms: float = 0.0
    p99_ms: float = 0.0
    max_ms: float = 0.0
    mean_ms: float = 0.0
    deadline_misses: int = 0
    samples_ms: list[float] = field(default_factory=list)

    @classmethod
    def from_samples(cls, samples: Iterable[LatencySample]) -> "LatencyStats":
        samples = list(samples)
        vals = [s.latency_ns / NS_PER_MS for s in samples]
        if not vals:
            return cls()
        return cls(
            count=len(vals), min_ms=min(vals), median_ms=percentile(vals, 50),
            p99_ms=percentile(vals, 99), max_ms=max(vals), mean_ms=sum(vals) / len(vals),
            deadline_misses=sum(1 for s in samples if s.deadline_met is False),
            samples_ms=vals,
        )


@dataclass
class FrameStats:
    arrived: int = 0
    processed: int = 0
    dropped: int = 0

    @property
    def fraction(self) -> float:
        return self.processed / self.arrived if self.arrived else 0.0


@dataclass
class BandwidthPoint:
    """Bytes retired per core during one regulation period."""

    start_ns: int
    end_ns: int
    llc: list[float]
    dram: list[float]
    be_llc: list[float]
    be_rt_llc: list[float]
    rt_ns: list[int]
    gpu: float = 0.0

    @property
    def seconds(self) -> float:
        return (self.end_ns - self.start_ns) / NS_PER_S


@dataclass
class RunMetrics:
    scenario: str = ""
    num_cores: int = 0
    horizon_ns: int = 0
    threads: dict[str, LatencyStats] = field(default_factory=dict)
    frames: dict[str, FrameStats] = field(default_factory=dict)
    bandwidth: list[BandwidthPoint] = field(default_factory=list)
    dnn_avg_ms: float | None = None     # mean dispatch-to-completion time of GPU jobs
    samples: list[LatencySample] = field(default_factory=list)

    @property
    def frame_fraction(self) -> float:
        """Processed share of frames summed over all drop-if-busy threads (0 if none)."""
        arrived = sum(f.arrived for f in self.frames.values())
        return sum(f.processed for f in self.frames.values()) / arrived if arrived else 0.0

    def thread(self, name: str) -> LatencyStats:
        """Look up by ``task.thread`` or by bare thread name when unambiguous."""
        if name in self.threads:
            return self.threads[name]
        hits = [k for k in self.threads if k.split(".", 1)[1] == name]
        if len(hits) != 1:
            raise KeyError(name)
        return self.threads[hits[0]]

    def core_bytes(self, series: str = "llc") -> list[float]:
        out = [0.0] * self.num_cores
        for pt in self.bandwidth:
            for c, v in enumerate(getattr(pt, series)):
                out[c] += v
        return out

    def core_mb_s(self, series: str = "llc") -> list[float]:
        secs = self.horizon_ns / NS_PER_S
        return [b / secs / 1e6 if secs else 0.0 for b in self.core_bytes(series)]

    def to_dict(self, include_samples: bool = False) -> dict:
        return {
            "scenario": self.scenario,
            "num_cores": self.num_cores,
            "horizon_ns": self.horizon_ns,
            "frame_fraction": self.frame_fraction,
            "dnn_avg_ms": self.dnn_avg_ms,
            "frames": {k: {**asdict(v), "fraction": v.fraction} for k, v in self.frames.items()},
            "threads": {
                k: {key: val for key, val in asdict(v).items() if include_samples or key != "samples_ms"}
                for k, v in self.threads.items()
            },
            "attacker_llc_mb_s": self.core_mb_s("be_llc"),
            "llc_mb_s": self.core_mb_s("llc"),
            "dram_mb_s": self.core_mb_s("dram"),
            "bandwidth_periods": len(self.bandwidth),
        }


def _core_of(payload: dict, key: str, num_cores: int) -> list:
    value = payload.get(key)
    if not isinstance(value, list) or len(value) != num_cores:
        raise MalformedTrace(f"RegulationBoundary field {key!r} must list {num_cores} cores")
    return value


def summarize(trace: Trace, scenario: str = "", num_cores: int | None = None,
              horizon_ns: int | None = None) -> RunMetrics:
    """Fold a completed trace into RunMetrics."""
    records = list(trace)
    prev = None
    for rec in records:
        key = (rec.event.time, rec.event.seq)
        if prev is not None and key < prev:
            raise MalformedTrace(f"events out of order at t={rec.event.time}")
        prev = key

    if num_cores is None:
        num_cores = 0
        for rec in records:
            if rec.event.kind is EventKind.REGULATION_BOUNDARY and "llc" in rec.event.payload:
                num_cores = len(rec.event.payload["llc"])
                break
    m = RunMetrics(scenario=scenario, num_cores=num_cores)
    m.horizon_ns = horizon_ns if horizon_ns is not None else (records[-1].event.time if records else 0)

    per_thread: dict[str, list[LatencySample]] = {}
    released: dict[str, int] = {}
    gpu_lat: list[int] = []
    for rec in records:
        ev = rec.event
        p = ev.payload
        if ev.kind is EventKind.JOB_RELEASE:
            name = f"{p.get('task')}.{p.get('thread')}"
            if "admission" in p:
                fs = m.frames.setdefault(name, FrameStats())
                fs.arrived += 1
                if p["admission"] == "Process":
                    fs.processed += 1
            if p.get("admission", "Process") == "Process":
                released[name] = released.get(name, 0) + 1
        elif ev.kind is EventKind.FRAME_DROP:
            name = f"{p.get('task')}.{p.get('thread')}"
            m.frames.setdefault(name, FrameStats()).dropped += 1
        elif ev.kind is EventKind.JOB_COMPLETION:
            try:
                name = f"{p['task']}.{p['thread']}"
                release = int(p["release_ns"])
            except KeyError as exc:
                raise MalformedTrace(f"JobCompletion at t={ev.time} lacks {exc}") from None
            if ev.time < release:
                raise MalformedTrace(f"{name} completes at {ev.time} before its release {release}")
            if released.get(name, 0) <= len(per_thread.get(name, ())):
                raise MalformedTrace(f"{name} completes more jobs than were released")
            latency = ev.time - release
            deadline = p.get("deadline_ns")
            start = p.get("start_ns")
            start = None if start in (None, "") else int(start)
            if start is not None and not release <= start <= ev.time:
                raise MalformedTrace(f"{name} starts outside [release, completion]")
            sample = LatencySample(p["task"], p["thread"], release, ev.time, latency,
                                   None if deadline is None else latency <= deadline, start)
            per_thread.setdefault(name, []).append(sample)
            m.samples.append(sample)
            if p.get("gpu"):
                gpu_lat.append(sample.exec_ns)
        elif ev.kind is EventKind.REGULATION_BOUNDARY and "llc" in p:
            m.bandwidth.append(BandwidthPoint(
                int(p.get("start_ns", 0)), ev.time,
                [float(x) for x in _core_of(p, "llc", num_cores)],
                [float(x) for x in _core_of(p, "dram", num_cores)],
                [float(x) for x in _core_of(p, "be_llc", num_cores)],
                [float(x) for x in _core_of(p, "be_rt_llc", num_cores)],
                [int(x) for x in _core_of(p, "rt_ns", num_cores)],
                float(p.get("gpu", 0.0)),
            ))
    for name, fs in m.frames.items():
        if fs.processed + fs.dropped != fs.arrived:
            raise MalformedTrace(f"{name}: processed + dropped != arrived")
    m.threads = {name: LatencyStats.from_samples(s) for name, s in sorted(per_thread.items())}
    if gpu_lat:
        m.dnn_avg_ms = sum(gpu_lat) / len(gpu_lat) / NS_PER_MS
    return m


@dataclass
class Comparison:
    latency_ratio: dict[str, dict[str, float]]   # thread -> {median, p99, max, mean, exec_median, exec_max}
    frame_fraction_delta: dict[str, float]
    llc_mb_s_delta: list[float]
    attacker_llc_mb_s_delta: list[float]


def _ratio(a: float, b: float) -> float:
    if a == b:
        return 1.0
    return b / a if a else math.inf


def _exec_times(run: RunMetrics) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    for smp in run.samples:
        out.setdefault(f"{smp.task}.{smp.thread}", []).append(smp.exec_ns / NS_PER_MS)
    return out


def compare(run_a: RunMetrics, run_b: RunMetrics) -> Comparison:
    """How ``run_b`` differs from ``run_a`` (ratios b/a, deltas b - a).

    Both runs must describe the same platform and share at least one thread.
    """
    if run_a.num_cores != run_b.num_cores:
        raise ScenarioMismatch(f"{run_a.num_cores} vs {run_b.num_cores} cores")
    common = sorted(set(run_a.threads) & set(run_b.threads))
    if (run_a.threads or run_b.threads) and not common:
        raise ScenarioMismatch("runs share no thread")
    exec_a, exec_b = _exec_times(run_a), _exec_times(run_b)
    ratios = {}
    for name in common:
        a, b = run_a.threads[name], run_b.threads[name]
        ea, eb = exec_a.get(name, []), exec_b.get(name, [])
        ratios[name] = {
            "median": _ratio(a.median_ms, b.median_ms),
            "p99": _ratio(a.p99_ms, b.p99_ms),
            "max": _ratio(a.max_ms, b.max_ms),
            "mean": _ratio(a.mean_ms, b.mean_ms),
            # dispatch-to-completion, free of queueing backlog
            "exec_median": _ratio(percentile(ea, 50), percentile(eb, 50)),
            "exec_max": _ratio(max(ea, default=0.0), max(eb, default=0.0)),
        }
    frames = {k: run_b.frames[k].fraction - run_a.frames[k].fraction
              for k in sorted(set(run_a.frames) & set(run_b.frames))}
    llc = [y - x for x, y in zip(run_a.core_mb_s("llc"), run_b.core_mb_s("llc"))]
    be = [y - x for x, y in zip(run_a.core_mb_s("be_llc"), run_b.core_mb_s("be_llc"))]
    return Comparison(ratios, frames, llc, be)


# -- writers -----------------------------------------------------------------

BANDWIDTH_HEADER = ("time_ns", "core", "llc_mb_s", "dram_mb_s", "be_llc_mb_s", "be_rt_llc_mb_s")


def write_summary(metrics: RunMetrics, path: Path | str) -> None:
    Path(path).write_text(json.dumps(metrics.to_dict(include_samples=True), indent=2, sort_keys=True) + "\n")


def write_latencies(metrics: RunMetrics, out_dir: Path | str) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for name, stats in metrics.threads.items():
        path = out_dir / f"latency_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["latency_ms"])
            w.writerows([f"{v:.6f}"] for v in stats.samples_ms)
        paths.append(path)
    return paths


def write_bandwidth(metrics: RunMetrics, path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BANDWIDTH_HEADER)
        for pt in metrics.bandwidth:
            secs = pt.seconds
            if secs <= 0:
                continue
            for c in range(metrics.num_cores):
                w.writerow([pt.end_ns, c] + [f"{getattr(pt, s)[c] / secs / 1e6:.3f}"
                                             for s in ("llc", "dram", "be_llc", "be_rt_llc")])


def write_all(metrics: RunMetrics, out_dir: Path | str) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_summary(metrics, out_dir / "summary.json")
    write_latencies(metrics, out_dir)
    write_bandwidth(metrics, out_dir / "bandwidth.csv")

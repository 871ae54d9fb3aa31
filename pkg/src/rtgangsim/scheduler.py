"""Real-time policies: plain fixed-priority (``fifo``), RT-Gang and RT-Gang++.

``fifo`` mirrors SCHED_FIFO: each RT job runs on a core of its affinity,
higher priority preempts lower, equal priority waits. The gang modes add
one-gang-at-a-time per partition (``rt-gang`` uses a single partition that
spans all cores). Best-effort tasks fill whatever cores have no RT job.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .workload import AttackerSpec, GangSpec

MODES = ("fifo", "rt-gang", "rt-gang++")
SCOPES = ("global", "partition")


class SchedulerError(RuntimeError):
    pass


class UnregisteredGang(SchedulerError):
    pass


@dataclass(eq=False)
class Job:
    id: int
    gang: str
    thread: str
    label: str
    release_ns: int
    priority: int
    affinity: tuple[int, ...]
    entity: str
    seq: int
    deadline_ns: int | None = None
    frac: float = 1.0
    phase: int = 0
    core: int | None = None
    start_ns: int | None = None     # first dispatch

    def __repr__(self):
        return f"Job({self.label})"


@dataclass
class PartitionState:
    partition_id: str
    cores: frozenset[int]
    current_gang: str | None = None
    ready_gangs: list[str] = field(default_factory=list)


@dataclass
class CoreState:
    core_id: int
    running: Job | None = None
    best_effort: list[str] = field(default_factory=list)
    throttled: bool = False


@dataclass
class FrontEndAdmission:
    busy: bool = False
    dropped_count: int = 0
    processed_count: int = 0

    @property
    def arrived(self) -> int:
        return self.dropped_count + self.processed_count


PROCESS = "Process"
DROP = "Drop"


def frame_admission(state: FrontEndAdmission, outstanding: int = 0, queue_depth: int = 0) -> str:
    """Drop the frame if the front end still holds more than ``queue_depth`` frames."""
    state.busy = outstanding > 0
    if outstanding > queue_depth:
        state.dropped_count += 1
        return DROP
    state.processed_count += 1
    return PROCESS


@dataclass
class Decision:
    dispatched: list[tuple[Job, int]] = field(default_factory=list)
    preempted: list[Job] = field(default_factory=list)
    be_preempted: list[tuple[str, int]] = field(default_factory=list)


class Scheduler:
    def __init__(self, mode: str, num_cores: int, gangs: Sequence[GangSpec],
                 partitions: Sequence[tuple[str, Iterable[int]]] = (),
                 attackers: Sequence[AttackerSpec] = (), throttle_scope: str = "global"):
        if mode not in MODES:
            raise SchedulerError(f"unknown scheduler mode {mode!r}")
        if throttle_scope not in SCOPES:
            raise SchedulerError(f"unknown throttle scope {throttle_scope!r}")
        self.mode = mode
        self.scope = throttle_scope
        self.num_cores = num_cores
        self.gangs = {g.id: g for g in gangs}
        self.entity_of = {g.id: g.virtual_gang_group or g.id for g in gangs}
        self.entity_prio = {self.entity_of[g.id]: g.rt_priority for g in gangs}
        if mode == "rt-gang":
            self.partitions = [PartitionState("global", frozenset(range(num_cores)))]
            self.partition_of_entity = {e: 0 for e in self.entity_prio}
        elif mode == "rt-gang++":
            self.partitions = [PartitionState(pid, frozenset(cores)) for pid, cores in partitions]
            index = {p.partition_id: i for i, p in enumerate(self.partitions)}
            self.partition_of_entity = {}
            for g in gangs:
                if g.partition_id not in index:
                    raise UnregisteredGang(f"gang {g.id} is not assigned to a known partition")
                self.partition_of_entity[self.entity_of[g.id]] = index[g.partition_id]
        else:
            self.partitions = [PartitionState(pid, frozenset(cores)) for pid, cores in partitions]
            self.partition_of_entity = {}
        self.core_partition: dict[int, int] = {}
        for i, p in enumerate(self.partitions):
            for c in p.cores:
                self.core_partition[c] = i
        self.attackers = {a.id: a for a in attackers}
        self.cores = [CoreState(c) for c in range(num_cores)]
        self.pending: dict[str, list[Job]] = {e: [] for e in self.entity_prio}
        self._ready_since: dict[str, int] = {}
        self._tick = 0
        self._digest: str | None = None
        self.reschedule()

    # -- queries -----------------------------------------------------------
    @property
    def gang_mode(self) -> bool:
        return self.mode != "fifo"

    def jobs(self) -> list[Job]:
        return [j for js in self.pending.values() for j in js]

    def running_jobs(self) -> list[Job]:
        return [c.running for c in self.cores if c.running is not None]

    def rt_active(self, core: int | None = None) -> bool:
        """Whether real-time work gates best-effort on ``core`` (or anywhere)."""
        if not self.gang_mode:
            return any(self.pending.values())
        if core is None or self.scope == "global":
            return any(p.current_gang is not None for p in self.partitions)
        idx = self.core_partition.get(core)
        if idx is None:
            return any(p.current_gang is not None for p in self.partitions)
        return self.partitions[idx].current_gang is not None

    def be_shares(self) -> dict[int, list[str]]:
        return {c.core_id: list(c.best_effort) for c in self.cores if c.best_effort}

    def digest(self) -> str:
        if self._digest is None:
            self._digest = self._compute_digest()
        return self._digest

    def _compute_digest(self) -> str:
        cores = ",".join(
            f"c{c.core_id}={c.running.label if c.running else ('be:' + '+'.join(c.best_effort) if c.best_effort else '-')}"
            for c in self.cores
        )
        cur = ",".join(f"{p.partition_id}:{p.current_gang or '-'}" for p in self.partitions) if self.gang_mode else ""
        return f"{cores};{cur}"

    # -- events ------------------------------------------------------------
    def on_release(self, job: Job) -> Decision:
        if job.gang not in self.gangs:
            raise UnregisteredGang(f"gang {job.gang} was never registered")
        queue = self.pending[job.entity]
        if not queue:
            self._ready_since[job.entity] = self._tick
            self._tick += 1
        queue.append(job)
        return self.reschedule()

    def on_complete(self, job: Job) -> Decision:
        queue = self.pending[job.entity]
        queue.remove(job)
        if job.core is not None:
            self.cores[job.core].running = None
            job.core = None
        return self.reschedule()

    # -- policy ------------------------------------------------------------
    def _select_gangs(self) -> dict[Job, tuple[int, ...]]:
        eligible: dict[Job, tuple[int, ...]] = {}
        if not self.gang_mode:
            for js in self.pending.values():
                for j in js:
                    eligible[j] = j.affinity
            return eligible
        for idx, part in enumerate(self.partitions):
            waiting = [e for e, js in self.pending.items() if js and self.partition_of_entity.get(e) == idx]
            cur = part.current_gang
            if cur is not None and not self.pending.get(cur):
                cur = None
            if waiting:
                best = min(waiting, key=lambda e: (-self.entity_prio[e], self._ready_since[e]))
                if cur is None or self.entity_prio[best] > self.entity_prio[cur]:
                    cur = best
            part.current_gang = cur
            part.ready_gangs = sorted(
                (e for e in waiting if e != cur),
                key=lambda e: (-self.entity_prio[e], self._ready_since[e]))
            if cur is not None:
                for j in self.pending[cur]:
                    eligible[j] = tuple(c for c in j.affinity if c in part.cores)
        return eligible

    def reschedule(self) -> Decision:
        self._digest = None
        decision = Decision()
        before = {c.core_id: c.running for c in self.cores}
        before_be = {c.core_id: list(c.best_effort) for c in self.cores}
        eligible = self._select_gangs()
        order = sorted(eligible, key=lambda j: (-j.priority, 0 if j.core is not None else 1, j.seq))
        assign: dict[int, Job] = {}
        placed: set[int] = set()
        for j in order:
            if j.core is not None and j.core in eligible[j]:
                assign[j.core] = j
                placed.add(id(j))
        i = 0
        queue = list(order)
        while i < len(queue):
            j = queue[i]
            i += 1
            if id(j) in placed:
                continue
            free = [c for c in eligible[j] if c not in assign]
            if free:
                assign[min(free)] = j
                placed.add(id(j))
                continue
            victims = [c for c in eligible[j] if assign[c].priority < j.priority]
            if victims:
                c = min(victims, key=lambda c: (assign[c].priority, -assign[c].seq))
                loser = assign[c]
                placed.discard(id(loser))
                assign[c] = j
                placed.add(id(j))
                queue.insert(i, loser)
                queue[i:] = sorted(queue[i:], key=lambda x: (-x.priority, x.seq))
        for core in self.cores:
            job = assign.get(core.core_id)
            prev = before[core.core_id]
            if prev is not None and prev is not job and not any(v is prev for v in assign.values()):
                decision.preempted.append(prev)
            core.running = job
            if job is not None and prev is not job:
                decision.dispatched.append((job, core.core_id))
        for j in self.jobs():
            j.core = None
        for c, j in assign.items():
            j.core = c
        self._dispatch_best_effort()
        for core in self.cores:
            for a in before_be[core.core_id]:
                if a not in core.best_effort:
                    decision.be_preempted.append((a, core.core_id))
        return decision

    def _dispatch_best_effort(self) -> None:
        free = [c.core_id for c in self.cores if c.running is None]
        assignment = dispatch_best_effort(free, list(self.attackers.values()))
        for c in self.cores:
            c.best_effort = assignment.get(c.core_id, [])


def dispatch_best_effort(free_cores: Sequence[int], be_ready: Sequence[AttackerSpec]) -> dict[int, list[str]]:
    """Place best-effort tasks on RT-free cores; co-located tasks split the core evenly."""
    out: dict[int, list[str]] = {c: [] for c in free_cores}
    floating = []
    for a in sorted(be_ready, key=lambda a: a.id):
        if a.core is None:
            floating.append(a)
        elif a.core in out:
            out[a.core].append(a.id)
    for a in floating:
        if not out:
            break
        target = min(out, key=lambda c: (len(out[c]), c))
        out[target].append(a.id)
    return {c: ids for c, ids in out.items() if ids}

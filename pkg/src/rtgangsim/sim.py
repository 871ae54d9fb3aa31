"""Run one scenario: event loop + scheduler + contention model + regulators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .contention import ExecContext, ModelParams, check_conservation, solve
from .engine import NS_PER_S, Engine, EventKind, SimEvent, Trace
from .platform import PlatformSpec, default_platform
from .scheduler import DROP, FrontEndAdmission, Job, Scheduler, frame_admission
from .throttle import LlcRegulator, set_gpu_level
from .workload import AttackerSpec, GangSpec, Pattern, Target, keyframe_rng, periodic_release_times, release_jobs


class InvariantViolation(RuntimeError):
    def __init__(self, name: str, detail: str = ""):
        super().__init__(f"{name}: {detail}" if detail else name)
        self.name = name


@dataclass
class SimConfig:
    gangs: Sequence[GangSpec] = ()
    attackers: Sequence[AttackerSpec] = ()
    platform: PlatformSpec = field(default_factory=default_platform)
    params: ModelParams = field(default_factory=ModelParams)
    mode: str = "fifo"
    throttle_scope: str = "global"
    partitions: Sequence[tuple[str, Sequence[int]]] = ()
    llc_threshold_bytes_per_s: float = 100e6
    regulation_period_ns: int = 1_000_000
    gpu_level: int = 0
    horizon_ns: int = 1_000_000_000
    seed: int = 0
    epoch_stepping: bool = False
    check_invariants: bool = True

    @property
    def regulator_enabled(self) -> bool:
        return self.mode in ("rt-gang", "rt-gang++")

    @property
    def effective_gpu_level(self) -> int:
        return self.gpu_level if self.mode == "rt-gang++" else 0


@dataclass
class SimResult:
    trace: Trace
    completions: list[dict]
    bandwidth: list[dict]
    frames: dict[str, FrontEndAdmission]
    totals: dict[str, list[float]]
    horizon_ns: int


class Simulation:
    def __init__(self, config: SimConfig):
        self.cfg = cfg = config
        self.platform = cfg.platform
        self.params = cfg.params
        self.scheduler = Scheduler(cfg.mode, cfg.platform.num_cores, cfg.gangs, cfg.partitions,
                                   cfg.attackers, cfg.throttle_scope)
        self.engine = Engine(digest_fn=self.scheduler.digest)
        self.gangs = {g.id: g for g in cfg.gangs}
        self.attackers = {a.id: a for a in cfg.attackers}
        if len(self.attackers) != len(cfg.attackers):
            raise ValueError("attacker ids must be unique")
        n = cfg.platform.num_cores
        self.regulator = LlcRegulator(n, cfg.llc_threshold_bytes_per_s, cfg.regulation_period_ns,
                                      cfg.platform.llc.line_bytes, enabled=cfg.regulator_enabled)
        self.gpu_state = set_gpu_level(cfg.effective_gpu_level, cfg.platform.gpu)
        self.rngs = {
            g.id: {t.name: keyframe_rng(cfg.seed, g.id, t.name) for t in g.threads if not t.periodic}
            for g in cfg.gangs
        }
        self.admission = {
            f"{g.id}.{t.name}": FrontEndAdmission() for g in cfg.gangs for t in g.threads if t.drop_if_busy
        }
        self.outstanding: dict[tuple[str, str], int] = {}
        self.gpu_queue: list[Job] = []      # jobs in their GPU phase, FIFO; the GPU serves one kernel
        self.job_counter: dict[tuple[str, str], int] = {}
        self._next_job_id = 0
        self.completions: list[dict] = []
        self.bandwidth: list[dict] = []
        self._bucket = self._empty_bucket()
        self.totals = {"llc_bytes": [0.0] * n, "dram_bytes": [0.0] * n, "be_bytes": [0.0] * n,
                       "gpu_bytes": [0.0]}
        self._period_start = 0
        self._version = 0
        self._cached_version = -1
        self._cached = None
        self._solved: dict = {}
        self.epoch_ns = int(round(cfg.params.epoch_us * 1000))

    def _empty_bucket(self):
        n = self.platform.num_cores
        return {"llc": [0.0] * n, "dram": [0.0] * n, "be_llc": [0.0] * n,
                "be_rt_llc": [0.0] * n, "rt_active_ns": [0] * n, "gpu": 0.0}

    # -- setup -------------------------------------------------------------
    def _seed_events(self) -> None:
        horizon = self.cfg.horizon_ns
        for g in self.cfg.gangs:
            for t in g.threads:
                times = periodic_release_times(t, horizon)
                if times:
                    self._schedule_release(times[0], g, t.name, periodic=True)
        if self.cfg.regulation_period_ns > 0:
            self.engine.schedule(min(self.cfg.regulation_period_ns, horizon), EventKind.REGULATION_BOUNDARY)

    def _schedule_release(self, time: int, gang: GangSpec, thread: str, periodic: bool) -> None:
        self.engine.schedule(time, EventKind.JOB_RELEASE, {
            "task": gang.id, "thread": thread, "partition": gang.partition_id or "",
            "periodic": periodic,
        })

    # -- contexts ----------------------------------------------------------
    def _touch(self) -> None:
        self._version += 1

    def _job_context(self, job: Job, core_id: int) -> ExecContext:
        gang = self.gangs[job.gang]
        thread = gang.thread(job.thread)
        name = f"{job.gang}.{job.thread}"
        if job.phase == 0:
            d = thread.demand
            return ExecContext(name, core_id, d.cpu_cycles, d.llc_accesses, d.dram_accesses, d.bank,
                               d.write, gang.colors, "rt", group=gang.id)
        g = thread.gpu
        return ExecContext(name, None, gpu_compute_ns=g.compute_ns, gpu_mem_bytes=g.mem_bytes,
                           colors=gang.colors, group=gang.id)

    def _attacker_context(self, aid: str, core_id: int, share: float, throttled: bool) -> ExecContext:
        a = self.attackers[aid]
        d = a.demand
        mlp = None
        if a.pattern is Pattern.BW:
            base = self.params.llc_stream_mlp if a.target is Target.LLC else self.params.dram_stream_mlp
            mlp = base * self.params.bw_mlp_scale
        return ExecContext(aid, core_id, d.cpu_cycles, d.llc_accesses, d.dram_accesses, d.bank, d.write,
                           a.colors, "be", share, throttled, mlp=mlp, group=aid)

    def _contexts(self):
        if self._cached_version == self._version:
            return self._cached
        sig = []
        owners: list[tuple[str, object]] = []
        gpu_job = next((j for j in self.gpu_queue if j.core is not None), None)
        for core in self.scheduler.cores:
            job = core.running
            if job is not None and job.phase == 1 and job is not gpu_job:
                sig.append(None)        # holds its core while waiting for the GPU
            elif job is not None:
                sig.append((job.gang, job.thread, job.phase))
                owners.append(("job", job))
            elif core.best_effort:
                sig.append((tuple(core.best_effort), self.regulator.throttled[core.core_id]))
                owners.extend(("be", aid) for aid in core.best_effort)
            else:
                sig.append(None)
        key = tuple(sig)
        hit = self._solved.get(key)
        if hit is None:
            hit = self._build(key)
            self._solved[key] = hit
        self._cached = (hit[0], owners, hit[1])
        self._cached_version = self._version
        return self._cached

    def _build(self, key):
        ctxs: list[ExecContext] = []
        for core_id, entry in enumerate(key):
            if entry is None:
                continue
            if len(entry) == 3:
                ctxs.append(self._job_context(self.scheduler.cores[core_id].running, core_id))
            else:
                ids, throttled = entry
                ctxs.extend(self._attacker_context(aid, core_id, 1.0 / len(ids), throttled) for aid in ids)
        ctxs_t = tuple(ctxs)
        alloc = solve(ctxs_t, self.platform, self.params, self.gpu_state.fraction)
        if self.cfg.check_invariants:
            for c in ctxs_t:
                if c.sched_class == "rt" and c.throttled:
                    raise InvariantViolation("rt-never-throttled", c.owner)
            try:
                check_conservation(alloc, ctxs_t, self.platform, self.params)
            except Exception as exc:  # noqa: BLE001
                raise InvariantViolation("conservation", str(exc)) from exc
        return ctxs_t, alloc

    # -- continuous progress -----------------------------------------------
    def advance(self, now: int, target: int) -> int:
        ctxs, owners, alloc = self._contexts()
        step_to = target
        if self.cfg.epoch_stepping:
            nxt_epoch = (now // self.epoch_ns + 1) * self.epoch_ns
            step_to = min(step_to, nxt_epoch)
        finishing: list[Job] = []
        for (kind, obj), c, prog in zip(owners, ctxs, alloc.progress):
            if kind != "job" or obj.phase == 2:
                continue
            if c.complete:
                t_done = now
            elif prog > 0:
                t_done = now + max(0, math.ceil(obj.frac / prog * NS_PER_S - 1e-6))
            else:
                continue
            if t_done < step_to:
                step_to = t_done
                finishing = [obj]
            elif t_done == step_to:
                finishing.append(obj)

        line = self.platform.llc.line_bytes
        reg = self.regulator
        rt = [self.scheduler.rt_active(c) for c in range(self.platform.num_cores)]
        be_rate: dict[int, float] = {}
        for (kind, obj), c, lr in zip(owners, ctxs, alloc.llc_rate):
            if kind == "be" and lr > 0:
                be_rate[c.core] = be_rate.get(c.core, 0.0) + lr * line
        exhaust: list[int] = []
        if reg.enabled:
            for core, rate in sorted(be_rate.items()):
                if reg.throttled[core] or not rt[core]:
                    continue
                t_x = now + max(0, math.ceil(reg.remaining(core) / rate * NS_PER_S - 1e-6))
                if t_x < step_to:
                    step_to = t_x
                    finishing = []
                    exhaust = [core]
                elif t_x == step_to:
                    exhaust.append(core)

        dt = (step_to - now) * 1e-9
        b = self._bucket
        for (kind, obj), c, prog, lr, dr, gr in zip(owners, ctxs, alloc.progress, alloc.llc_rate,
                                                    alloc.dram_rate, alloc.gpu_bytes_rate):
            if kind == "job":
                step = prog * dt
                if step > obj.frac:
                    # completion was rounded up to a whole ns; retire only the work left
                    scale = obj.frac / step
                    lr, dr, gr = lr * scale, dr * scale, gr * scale
                obj.frac = max(0.0, obj.frac - step)
            if c.core is None:
                b["gpu"] += gr * dt
                self.totals["gpu_bytes"][0] += gr * dt
                continue
            lb, db = lr * dt * line, dr * dt * line
            b["llc"][c.core] += lb
            b["dram"][c.core] += db
            self.totals["llc_bytes"][c.core] += lb
            self.totals["dram_bytes"][c.core] += db
            if kind == "be":
                self.totals["be_bytes"][c.core] += lb + db
                b["be_llc"][c.core] += lb
                if rt[c.core]:
                    b["be_rt_llc"][c.core] += lb
                if reg.enabled:
                    reg.account(c.core, lb)
        for core in range(self.platform.num_cores):
            if rt[core]:
                b["rt_active_ns"][core] += step_to - now

        for core in sorted(be_rate):
            if core not in exhaust and reg.enabled and not reg.throttled[core] \
                    and rt[core] and reg.exhausted(core):
                exhaust.append(core)
        for core in exhaust:
            reg.consumed[core] = max(reg.consumed[core], reg.budget_bytes)
            reg.throttle(core)
            self.engine.schedule(step_to, EventKind.THROTTLE_ON, {"core": core, "reason": "budget"})
            self._touch()
        for job in finishing:
            job.frac = 0.0
            self._finish_phase(job, step_to)
        return step_to

    def _finish_phase(self, job: Job, now: int) -> None:
        thread = self.gangs[job.gang].thread(job.thread)
        self._touch()
        if job.phase == 0 and thread.gpu is not None:
            job.phase = 1
            job.frac = 1.0
            self.gpu_queue.append(job)
            return
        if job.phase == 1:
            self.gpu_queue.remove(job)
        job.phase = 2
        self.engine.schedule(now, EventKind.JOB_COMPLETION, {
            "task": job.gang, "thread": job.thread, "job": job.label, "core": job.core,
            "partition": self.gangs[job.gang].partition_id or "",
            "release_ns": job.release_ns, "start_ns": job.start_ns, "deadline_ns": job.deadline_ns,
            "gpu": thread.gpu is not None, "_job": job,
        })

    # -- event handling ------------------------------------------------------
    def handle(self, event: SimEvent) -> None:
        kind = event.kind
        now = event.time
        if kind is EventKind.JOB_RELEASE:
            self._on_release(event, now)
        elif kind is EventKind.JOB_COMPLETION:
            self._on_completion(event, now)
        elif kind is EventKind.REGULATION_BOUNDARY:
            self._on_regulation(event, now)
        elif kind in (EventKind.THROTTLE_ON, EventKind.THROTTLE_OFF, EventKind.FRAME_DROP,
                      EventKind.EPOCH_BOUNDARY):
            pass
        self._refresh_throttles(now)
        for core in self.scheduler.cores:
            if core.running is not None and core.running.start_ns is None:
                core.running.start_ns = now

    def _on_release(self, event: SimEvent, now: int) -> None:
        p = event.payload
        gang = self.gangs[p["task"]]
        thread = gang.thread(p["thread"])
        key = (gang.id, thread.name)
        if p.get("periodic"):
            nxt = now + thread.activation.period_ns
            if nxt < self.cfg.horizon_ns:
                self._schedule_release(nxt, gang, thread.name, periodic=True)
        if thread.drop_if_busy:
            state = self.admission[f"{gang.id}.{thread.name}"]
            verdict = frame_admission(state, self.outstanding.get(key, 0), thread.queue_depth)
            p["admission"] = verdict
            if verdict == DROP:
                self.engine.schedule(now, EventKind.FRAME_DROP, {
                    "task": gang.id, "thread": thread.name, "partition": gang.partition_id or ""})
                return
        n = self.job_counter.get(key, 0)
        self.job_counter[key] = n + 1
        self.outstanding[key] = self.outstanding.get(key, 0) + 1
        label = f"{gang.id}.{thread.name}#{n}"
        job = Job(self._next_job_id, gang.id, thread.name, label, now, gang.rt_priority,
                  gang.affinity(thread), self.scheduler.entity_of[gang.id], event.seq,
                  deadline_ns=thread.deadline_ns)
        self._next_job_id += 1
        p["job"] = label
        self.scheduler.on_release(job)
        self._touch()
        if self.cfg.check_invariants:
            self._check_schedule()

    def _on_completion(self, event: SimEvent, now: int) -> None:
        p = event.payload
        job: Job = p.pop("_job")
        gang = self.gangs[job.gang]
        key = (gang.id, job.thread)
        self.outstanding[key] -= 1
        latency = now - job.release_ns
        p["latency_ns"] = latency
        self.completions.append({
            "task": job.gang, "thread": job.thread, "job": job.label, "release_ns": job.release_ns,
            "start_ns": job.start_ns, "completion_ns": now, "latency_ns": latency,
            "deadline_ns": job.deadline_ns,
        })
        self.scheduler.on_complete(job)
        self._touch()
        for name in release_jobs(gang, job.thread, self.rngs[gang.id]):
            self._schedule_release(now, gang, name, periodic=False)
        if self.cfg.check_invariants:
            self._check_schedule()

    def _on_regulation(self, event: SimEvent, now: int) -> None:
        b = self._bucket
        row = {"start_ns": self._period_start, "end_ns": now, **{k: (list(v) if isinstance(v, list) else v)
                                                                for k, v in b.items()}}
        self.bandwidth.append(row)
        event.payload.update({
            "start_ns": self._period_start,
            "llc": [round(x, 1) for x in b["llc"]], "dram": [round(x, 1) for x in b["dram"]],
            "be_llc": [round(x, 1) for x in b["be_llc"]], "be_rt_llc": [round(x, 1) for x in b["be_rt_llc"]],
            "rt_ns": b["rt_active_ns"], "gpu": round(b["gpu"], 1),
        })
        self._bucket = self._empty_bucket()
        self._period_start = now
        resumed = self.regulator.replenish() if self.regulator.enabled else []
        for core in resumed:
            self.engine.schedule(now, EventKind.THROTTLE_OFF, {"core": core})
        if resumed:
            self._touch()
        nxt = now + self.cfg.regulation_period_ns
        if now < self.cfg.horizon_ns:
            self.engine.schedule(min(nxt, self.cfg.horizon_ns), EventKind.REGULATION_BOUNDARY)

    def _refresh_throttles(self, now: int) -> None:
        reg = self.regulator
        if not reg.enabled:
            return
        for core in self.scheduler.cores:
            c = core.core_id
            if core.best_effort and not reg.throttled[c] and reg.exhausted(c) and self.scheduler.rt_active(c):
                reg.throttle(c)
                self.engine.schedule(now, EventKind.THROTTLE_ON, {"core": c, "reason": "rt-release"})
                self._touch()

    def _check_schedule(self) -> None:
        sched = self.scheduler
        for core in sched.cores:
            if core.running is not None and core.best_effort:
                raise InvariantViolation("be-preemption", f"core {core.core_id} runs RT and BE")
        if sched.gang_mode:
            for part in sched.partitions:
                entities = {core.running.entity for core in sched.cores
                            if core.core_id in part.cores and core.running is not None}
                if len(entities) > 1:
                    raise InvariantViolation("gang-exclusivity", f"partition {part.partition_id}: {entities}")

    # -- driver ------------------------------------------------------------
    def run(self) -> SimResult:
        self._seed_events()
        trace = self.engine.run_until(self.cfg.horizon_ns, self.handle, self.advance)
        if self._bucket["llc"] != [0.0] * self.platform.num_cores and (
                not self.bandwidth or self.bandwidth[-1]["end_ns"] < self.cfg.horizon_ns):
            self.bandwidth.append({"start_ns": self._period_start, "end_ns": self.cfg.horizon_ns, **self._bucket})
        return SimResult(trace, self.completions, self.bandwidth, self.admission, self.totals,
                         self.cfg.horizon_ns)


def simulate(config: SimConfig) -> SimResult:
    return Simulation(config).run()

import pytest

from rtgangsim.engine import NS_PER_MS, EventKind
from rtgangsim.platform import default_platform
from rtgangsim.scheduler import (DROP, PROCESS, FrontEndAdmission, Job, Scheduler, UnregisteredGang,
                                 dispatch_best_effort, frame_admission)
from rtgangsim.sim import SimConfig, simulate
from rtgangsim.workload import (DemandProfile, GangSpec, Periodic, SlamPipelineSpec, ThreadSpec, build_attacker,
                                build_dnn_gang, build_slam_gang, playback_source)

PARTS = [("A", [0, 1, 2]), ("B", [3])]
_seq = iter(range(10**9))


def job(gang: GangSpec, thread: str = None, t: int = 0, entity: str = None) -> Job:
    th = gang.threads[0] if thread is None else gang.thread(thread)
    n = next(_seq)
    return Job(n, gang.id, th.name, f"{gang.id}.{th.name}#{n}", t, gang.rt_priority,
               gang.affinity(th), entity or gang.virtual_gang_group or gang.id, n)


def cpu_gang(id, ms, cores=(0,), prio=2, period_ms=50, partition="A", drop=False):
    cycles = ms * 1e-3 * default_platform().core_freq_hz
    th = ThreadSpec("T", Periodic(period_ms * NS_PER_MS), DemandProfile(cpu_cycles=cycles),
                    drop_if_busy=drop)
    return GangSpec(id, (th,), frozenset(cores), prio, partition)


def test_front_end_release_preempts_attacker_at_once():
    slam = build_slam_gang()
    atk = build_attacker("BkPLL", "write", "LLC", core=0, id="a0")
    s = Scheduler("fifo", 4, [slam], attackers=[atk])
    assert s.cores[0].best_effort == ["a0"]
    d = s.on_release(job(slam, "FrontEnd"))
    assert ("a0", 0) in d.be_preempted
    assert [c for _, c in d.dispatched] == [0]
    assert s.cores[0].best_effort == []


def test_gangs_in_separate_partitions_run_together():
    slam, dnn = build_slam_gang(), build_dnn_gang()
    s = Scheduler("rt-gang++", 4, [slam, dnn], PARTS)
    s.on_release(job(slam, "FrontEnd"))
    s.on_release(job(dnn))
    assert s.partitions[0].current_gang == "slam"
    assert s.partitions[1].current_gang == "dnn"
    assert s.cores[0].running is not None and s.cores[3].running is not None


def test_global_gang_blocks_lower_priority_gang():
    slam, dnn = build_slam_gang(), build_dnn_gang()
    s = Scheduler("rt-gang", 4, [slam, dnn])
    s.on_release(job(slam, "FrontEnd"))
    s.on_release(job(dnn))
    assert s.cores[3].running is None
    assert s.partitions[0].ready_gangs == ["dnn"]


def test_equal_priority_gang_waits_in_fifo_order():
    g1, g2, g3 = (cpu_gang(f"g{i}", 5, cores=(i - 1,)) for i in (1, 2, 3))
    s = Scheduler("rt-gang++", 4, [g1, g2, g3], PARTS)
    s.on_release(job(g1))
    d = s.on_release(job(g2))
    s.on_release(job(g3))
    assert d.preempted == [] and s.partitions[0].current_gang == "g1"
    assert s.partitions[0].ready_gangs == ["g2", "g3"]
    s.on_complete(s.pending["g1"][0])
    assert s.partitions[0].current_gang == "g2"


def test_higher_priority_gang_preempts_the_current_one():
    lo, hi = cpu_gang("lo", 5, cores=(0,), prio=1), cpu_gang("hi", 5, cores=(1,), prio=3)
    s = Scheduler("rt-gang++", 4, [lo, hi], PARTS)
    j_lo = job(lo)
    s.on_release(j_lo)
    d = s.on_release(job(hi))
    assert d.preempted == [j_lo]
    assert s.partitions[0].current_gang == "hi" and s.partitions[0].ready_gangs == ["lo"]


def test_virtual_gang_members_share_one_slot():
    slam = build_slam_gang(SlamPipelineSpec(virtual_gang_group="vg"))
    pb = playback_source(virtual_gang_group="vg")
    s = Scheduler("rt-gang++", 4, [slam, pb], PARTS)
    s.on_release(job(slam, "FrontEnd"))
    s.on_release(job(pb))
    assert s.partitions[0].current_gang == "vg"
    assert s.cores[0].running and s.cores[2].running


def test_fifo_equal_priority_does_not_preempt():
    a, b = cpu_gang("a", 5, cores=(0,)), cpu_gang("b", 5, cores=(0,))
    s = Scheduler("fifo", 4, [a, b])
    ja = job(a)
    s.on_release(ja)
    d = s.on_release(job(b))
    assert d.preempted == [] and s.cores[0].running is ja


def test_unregistered_gang_rejected():
    s = Scheduler("fifo", 4, [])
    with pytest.raises(UnregisteredGang):
        s.on_release(job(cpu_gang("ghost", 1)))
    with pytest.raises(UnregisteredGang):
        Scheduler("rt-gang++", 4, [cpu_gang("x", 1, partition="Z")], PARTS)


def test_admission_counts_add_up():
    st = FrontEndAdmission()
    verdicts = [frame_admission(st, o) for o in (0, 1, 0, 2, 0)]
    assert verdicts == [PROCESS, DROP, PROCESS, DROP, PROCESS]
    assert st.arrived == 5 and st.dropped_count == 2
    assert frame_admission(st, 1, queue_depth=1) == PROCESS


@pytest.mark.parametrize("latency_ms, fraction", [(30, 1.0), (190, 0.25), (51, 0.5)])
def test_drop_if_busy_processed_fraction(latency_ms, fraction):
    g = cpu_gang("fe", latency_ms, drop=True)
    res = simulate(SimConfig(gangs=[g], horizon_ns=2000 * NS_PER_MS))
    st = res.frames["fe.T"]
    assert st.processed_count / st.arrived == pytest.approx(fraction, abs=0.01)
    assert st.arrived == 40


def test_best_effort_fills_free_cores():
    atks = [build_attacker("PLL", "read", "LLC", id=f"a{i}") for i in range(4)]
    assert dispatch_best_effort([2, 3], atks) == {2: ["a0", "a2"], 3: ["a1", "a3"]}
    assert dispatch_best_effort([0, 1, 2, 3], []) == {}
    pinned = [build_attacker("PLL", "read", "LLC", core=c, id=f"p{c}") for c in range(4)]
    assert dispatch_best_effort([2, 3], pinned) == {2: ["p2"], 3: ["p3"]}


def test_attackers_land_beside_slam():
    slam = build_slam_gang()
    atks = [build_attacker("PLL", "read", "LLC", id=f"a{i}") for i in range(4)]
    s = Scheduler("fifo", 4, [slam], attackers=atks)
    s.on_release(job(slam, "FrontEnd"))
    s.on_release(job(slam, "Mapping"))
    assert s.be_shares() == {2: ["a0", "a2"], 3: ["a1", "a3"]}


def test_last_thread_done_returns_cores_to_best_effort():
    g = cpu_gang("g", 1)
    atk = build_attacker("PLL", "read", "LLC", core=0, id="a")
    s = Scheduler("rt-gang", 4, [g], attackers=[atk])
    j = job(g)
    s.on_release(j)
    assert not s.cores[0].best_effort and s.rt_active()
    s.on_complete(j)
    assert s.cores[0].best_effort == ["a"] and not s.rt_active()


def test_keyframe_chain_releases_in_the_same_instant():
    slam = build_slam_gang(SlamPipelineSpec(keyframe_probability=1.0))
    res = simulate(SimConfig(gangs=[slam], horizon_ns=200 * NS_PER_MS))
    done = {(r.event.payload["thread"], r.event.time) for r in res.trace
            if r.event.kind is EventKind.JOB_COMPLETION}
    released = {(r.event.payload["thread"], r.event.time) for r in res.trace
                if r.event.kind is EventKind.JOB_RELEASE}
    fe_done = sorted(t for n, t in done if n == "FrontEnd")
    map_done = sorted(t for n, t in done if n == "Mapping")
    assert fe_done and all(("Mapping", t) in released for t in fe_done)
    assert map_done and all(("StateOpt", t) in released for t in map_done)
    so_done = [t for n, t in done if n == "StateOpt"]
    assert not any(n not in ("FrontEnd", "Mapping", "StateOpt") for n, _ in released)
    assert so_done


def test_throttle_scope_partition_only_gates_its_own_cores():
    dnn = build_dnn_gang()
    s = Scheduler("rt-gang++", 4, [build_slam_gang(), dnn], PARTS, throttle_scope="partition")
    s.on_release(job(dnn))
    assert s.rt_active(3) and not s.rt_active(0)
    g = Scheduler("rt-gang++", 4, [build_slam_gang(), dnn], PARTS)
    g.on_release(job(dnn))
    assert g.rt_active(0)

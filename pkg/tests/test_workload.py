import pytest

from rtgangsim.engine import NS_PER_MS, NS_PER_S
from rtgangsim.platform import default_platform
from rtgangsim.workload import (ATTACKER_NAMES, AccessType, DemandProfile, DnnTaskSpec, EventDriven,
                                GangSpec, InvalidCombination, Pattern, Periodic, SlamPipelineSpec, Target,
                                ThreadSpec, VirtualGangError, WorkloadError, build_attacker,
                                build_dnn_gang, build_slam_gang, keyframe_rng, nominal_utilization,
                                parse_attacker_name, periodic_release_times, playback_source,
                                release_jobs, validate_virtual_gangs)


def test_slam_gang_defaults():
    g = build_slam_gang()
    fe = g.thread("FrontEnd")
    assert fe.activation == Periodic(50 * NS_PER_MS)
    assert fe.deadline_ns == 50 * NS_PER_MS
    assert fe.drop_if_busy
    assert g.cores == frozenset({0, 1})
    assert g.rt_priority == 2
    assert g.partition_id == "A"
    assert g.colors == frozenset({0, 1})
    assert isinstance(g.thread("Mapping").activation, EventDriven)
    assert g.thread("StateOpt").activation == EventDriven("Mapping", 1.0)


def test_slam_solo_means_fit_the_deadline():
    p = default_platform()
    spec = SlamPipelineSpec()
    fe, mp, so = (d.nominal_ns(p) / NS_PER_MS for d in (spec.front_end, spec.mapping, spec.state_opt))
    assert fe == pytest.approx(30, abs=0.01)
    assert mp == pytest.approx(40, abs=0.01)
    assert so == pytest.approx(60, abs=0.01)
    # the back end is the most memory intensive
    assert spec.state_opt.llc_accesses > spec.mapping.llc_accesses > spec.front_end.llc_accesses


def test_no_keyframes_means_no_backend_releases():
    g = build_slam_gang(SlamPipelineSpec(keyframe_probability=0.0))
    rngs = {"Mapping": keyframe_rng(0, "slam", "Mapping"), "StateOpt": keyframe_rng(0, "slam", "StateOpt")}
    assert all(release_jobs(g, "FrontEnd", rngs) == [] for _ in range(1000))


def test_every_frame_is_a_keyframe_at_probability_one():
    g = build_slam_gang(SlamPipelineSpec(keyframe_probability=1.0))
    rngs = {"Mapping": keyframe_rng(0, "slam", "Mapping"), "StateOpt": keyframe_rng(0, "slam", "StateOpt")}
    assert [release_jobs(g, "FrontEnd", rngs) for _ in range(50)] == [["Mapping"]] * 50


def test_keyframe_draws_match_direct_enumeration():
    g = build_slam_gang(SlamPipelineSpec(keyframe_probability=0.25))
    rngs = {"Mapping": keyframe_rng(7, "slam", "Mapping"), "StateOpt": keyframe_rng(7, "slam", "StateOpt")}
    released = sum(len(release_jobs(g, "FrontEnd", rngs)) for _ in range(1000))
    ref = keyframe_rng(7, "slam", "Mapping")
    expected = sum(ref.random() < 0.25 for _ in range(1000))
    assert released == expected
    assert 200 < released < 300


def test_state_opt_follows_mapping_and_ends_the_chain():
    g = build_slam_gang()
    assert release_jobs(g, "Mapping", {}) == ["StateOpt"]
    assert release_jobs(g, "StateOpt", {}) == []


def test_front_end_releases_over_one_second():
    fe = build_slam_gang().thread("FrontEnd")
    times = periodic_release_times(fe, NS_PER_S)
    assert times == [i * 50 * NS_PER_MS for i in range(20)]


def test_attacker_names_and_demands():
    bw = build_attacker(Pattern.BW, AccessType.READ, Target.LLC)
    assert bw.name == "BwRead(LLC)"
    assert bw.demand.llc_accesses == float("inf") and bw.demand.dram_accesses == 0
    assert bw.demand.bank is None
    bk = build_attacker("BkPLL", "write", "LLC", 3)
    assert bk.demand.bank == 3 and bk.demand.write
    pll = build_attacker(Pattern.PLL, AccessType.READ, Target.DRAM)
    assert pll.demand.dram_accesses == float("inf")


def test_bank_attack_on_dram_is_invalid():
    with pytest.raises(InvalidCombination):
        build_attacker(Pattern.BKPLL, AccessType.READ, Target.DRAM)


def test_ten_attacker_variants_round_trip_by_name():
    assert len(ATTACKER_NAMES) == 10
    for name in ATTACKER_NAMES:
        assert build_attacker(*parse_attacker_name(name)).name == name


def test_playback_defaults_and_utilization():
    g = playback_source()
    t = g.threads[0]
    assert t.activation.period_ns == 50 * NS_PER_MS
    assert g.cores == frozenset({2}) and g.rt_priority == 2
    assert 0.05 <= nominal_utilization(g, default_platform()) <= 0.10


def test_zero_rate_playback_never_releases():
    g = playback_source(rate_hz=0)
    assert periodic_release_times(g.threads[0], 10 * NS_PER_S) == []


def test_dnn_gang_shape():
    g = build_dnn_gang()
    t = g.threads[0]
    assert g.cores == frozenset({3}) and g.rt_priority == 1 and g.partition_id == "B"
    assert t.activation.period_ns == 50 * NS_PER_MS
    assert t.gpu is not None
    with pytest.raises(WorkloadError):
        DnnTaskSpec(gpu_mem_bytes=-1)


def test_negative_demand_rejected():
    with pytest.raises(WorkloadError):
        DemandProfile(cpu_cycles=-1)


def test_deadline_beyond_period_rejected():
    with pytest.raises(WorkloadError):
        ThreadSpec("x", Periodic(10), DemandProfile(), deadline_ns=20)


def _periodic_gang(gid, period_ms, prio, group, partition="A"):
    t = ThreadSpec("T", Periodic(period_ms * NS_PER_MS), DemandProfile(cpu_cycles=1000))
    return GangSpec(gid, (t,), frozenset({0}), prio, partition, frozenset(), group)


def test_virtual_gang_accepts_matching_members():
    validate_virtual_gangs([_periodic_gang("a", 50, 2, "vg"), _periodic_gang("b", 50, 2, "vg")])


def test_virtual_gang_rejects_mixed_priority():
    with pytest.raises(VirtualGangError, match="priorit"):
        validate_virtual_gangs([_periodic_gang("a", 50, 2, "vg"), _periodic_gang("b", 50, 1, "vg")])


def test_virtual_gang_rejects_mixed_period():
    with pytest.raises(VirtualGangError, match="period"):
        validate_virtual_gangs([_periodic_gang("a", 50, 2, "vg"), _periodic_gang("b", 100, 2, "vg")])


def test_virtual_gang_rejects_split_partitions():
    with pytest.raises(VirtualGangError):
        validate_virtual_gangs([_periodic_gang("a", 50, 2, "vg"), _periodic_gang("b", 50, 2, "vg", "B")])

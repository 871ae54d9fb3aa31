"""JSON scenario files: parsing, validation, presets and conversion to a SimConfig.

Top-level keys are exactly ``name, seed, horizon_s, platform, model,
scheduler, throttle, tasks, output_dir``. Every block is filled with its
defaults on parse, so ``emit_scenario`` writes a complete, explicit file and
``parse_scenario(emit_scenario(s)) == s``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable

from . import workload as wl
from .contention import ModelParams
from .engine import NS_PER_MS, NS_PER_S, NS_PER_US
from .platform import (DramSpec, GpuSpec, LlcSpec, PartitionConfig, PlatformError, PlatformSpec,
                       default_throttle_curve, validate_partitions)
from .scheduler import MODES, SCOPES
from .sim import SimConfig

TOP_LEVEL_KEYS = ("name", "seed", "horizon_s", "platform", "model", "scheduler", "throttle", "tasks", "output_dir")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line, self.column = line, column


class ValidationError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class Scenario:
    name: str
    seed: int = 0
    horizon_s: float = 60.0
    platform: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    scheduler: dict = field(default_factory=dict)
    throttle: dict = field(default_factory=dict)
    tasks: list = field(default_factory=list)
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in TOP_LEVEL_KEYS}


# -- block schemas -----------------------------------------------------------

def _dataclass_defaults(cls) -> dict:
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


def _demand_dict(d: wl.DemandProfile) -> dict:
    return {"cpu_cycles": d.cpu_cycles, "llc_accesses": d.llc_accesses,
            "dram_accesses": d.dram_accesses, "bank": d.bank, "write": d.write}


DEMAND_KEYS = ("cpu_cycles", "llc_accesses", "dram_accesses", "bank", "write")


def _platform_defaults() -> dict:
    llc = _dataclass_defaults(LlcSpec)
    dram = _dataclass_defaults(DramSpec)
    gpu = _dataclass_defaults(GpuSpec)
    gpu["throttle_curve"] = list(gpu["throttle_curve"])
    return {"num_cores": PlatformSpec().num_cores, "core_freq_hz": PlatformSpec().core_freq_hz,
            "llc": llc, "dram": dram, "gpu": gpu, "partitions": []}


def _model_defaults() -> dict:
    return _dataclass_defaults(ModelParams)


SCHEDULER_DEFAULTS = {"mode": "fifo", "throttle_scope": "global"}
THROTTLE_DEFAULTS = {"llc_threshold_mb_s": 100.0, "regulation_period_us": 1000.0, "gpu_level": 0}


def _slam_defaults() -> dict:
    s = wl.SlamPipelineSpec()
    return {
        "type": "slam", "id": "slam", "frame_rate_hz": s.frame_rate_hz,
        "keyframe_probability": s.keyframe_probability,
        "front_end": _demand_dict(s.front_end), "mapping": _demand_dict(s.mapping),
        "state_opt": _demand_dict(s.state_opt), "cores": sorted(s.cores),
        "front_end_cores": list(s.front_end_cores) if s.front_end_cores is not None else None,
        "backend_cores": list(s.backend_cores) if s.backend_cores is not None else None,
        "rt_priority": s.rt_priority, "partition": s.partition_id, "colors": sorted(s.colors),
        "virtual_gang": s.virtual_gang_group,
    }


def _playback_defaults() -> dict:
    g = wl.playback_source()
    return {"type": "playback", "id": g.id, "rate_hz": 20.0, "core": 2, "rt_priority": g.rt_priority,
            "demand": _demand_dict(g.threads[0].demand), "partition": g.partition_id,
            "colors": sorted(g.colors), "virtual_gang": None}


def _dnn_defaults() -> dict:
    d = wl.DnnTaskSpec()
    return {"type": "dnn", "id": "dnn", "rate_hz": d.rate_hz, "cpu_launch_cycles": d.cpu_launch_cycles,
            "launch_llc_accesses": d.launch_llc_accesses, "gpu_compute_ns": d.gpu_compute_ns,
            "gpu_mem_bytes": d.gpu_mem_bytes, "core": d.core, "rt_priority": d.rt_priority,
            "partition": d.partition_id, "colors": sorted(d.colors), "virtual_gang": None}


def _attacker_defaults() -> dict:
    return {"type": "attacker", "name": "BkPLLWrite(LLC)", "count": 1, "id": None, "core": None,
            "bank": None, "colors": [2, 3]}


def _gang_defaults() -> dict:
    return {"type": "gang", "id": None, "cores": [], "rt_priority": 1, "partition": None, "colors": [],
            "virtual_gang": None, "threads": []}


def _thread_defaults() -> dict:
    return {"name": None, "period_ms": None, "offset_ms": 0.0, "trigger": None, "probability": 1.0,
            "deadline_ms": None, "cores": None, "drop_if_busy": False, "queue_depth": 0,
            "demand": {"cpu_cycles": 0.0, "llc_accesses": 0.0, "dram_accesses": 0.0, "bank": None,
                       "write": False},
            "gpu": None}


TASK_DEFAULTS: dict[str, Callable[[], dict]] = {
    "slam": _slam_defaults, "playback": _playback_defaults, "dnn": _dnn_defaults,
    "attacker": _attacker_defaults, "gang": _gang_defaults,
}


def _merge(path: str, defaults: dict, given: Any, nested: dict[str, Callable[[], dict]] | None = None) -> dict:
    """Fill ``defaults`` from ``given``; unknown keys are errors."""
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ValidationError(path, "expected an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ValidationError(f"{path}.{unknown[0]}", "unknown key")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if nested and key in nested and value is not None:
            out[key] = _merge(f"{path}.{key}", nested[key](), value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _demand_defaults() -> dict:
    return _thread_defaults()["demand"]


def _normalize_task(i: int, task: Any) -> dict:
    path = f"tasks[{i}]"
    if not isinstance(task, dict) or "type" not in task:
        raise ValidationError(path, "each task needs a 'type'")
    kind = task["type"]
    if kind not in TASK_DEFAULTS:
        raise ValidationError(f"{path}.type", f"unknown task type {kind!r}")
    nested = {}
    if kind == "slam":
        nested = {k: _demand_defaults for k in ("front_end", "mapping", "state_opt")}
    elif kind == "playback":
        nested = {"demand": _demand_defaults}
    out = _merge(path, TASK_DEFAULTS[kind](), task, nested)
    if kind == "gang":
        if not isinstance(out["threads"], list):
            raise ValidationError(f"{path}.threads", "expected a list")
        out["threads"] = [
            _merge(f"{path}.threads[{j}]", _thread_defaults(), t, {"demand": _demand_defaults})
            for j, t in enumerate(out["threads"])
        ]
        for j, t in enumerate(out["threads"]):
            if t["gpu"] is not None:
                t["gpu"] = _merge(f"{path}.threads[{j}].gpu", {"compute_ns": 0.0, "mem_bytes": 0.0}, t["gpu"])
    return out


def normalize(raw: Any) -> Scenario:
    if not isinstance(raw, dict):
        raise ValidationError("<root>", "expected a JSON object")
    unknown = sorted(set(raw) - set(TOP_LEVEL_KEYS))
    if unknown:
        raise ValidationError(unknown[0], "unknown top-level key")
    if "name" not in raw or not isinstance(raw["name"], str) or not raw["name"]:
        raise ValidationError("name", "a non-empty string is required")
    plat = _merge("platform", _platform_defaults(), raw.get("platform"), {
        "llc": lambda: _dataclass_defaults(LlcSpec),
        "dram": lambda: _dataclass_defaults(DramSpec),
        "gpu": lambda: {**_dataclass_defaults(GpuSpec), "throttle_curve": None},
    })
    if plat["gpu"]["throttle_curve"] is None:
        plat["gpu"]["throttle_curve"] = list(default_throttle_curve(plat["gpu"]["num_throttle_levels"]))
    plat["gpu"]["throttle_curve"] = [float(x) for x in plat["gpu"]["throttle_curve"]]
    parts = plat["partitions"]
    if not isinstance(parts, list):
        raise ValidationError("platform.partitions", "expected a list")
    plat["partitions"] = [_merge(f"platform.partitions[{i}]", {"id": None, "cores": [], "colors": []}, p)
                          for i, p in enumerate(parts)]
    tasks = raw.get("tasks", [])
    if not isinstance(tasks, list):
        raise ValidationError("tasks", "expected a list")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ValidationError("seed", "expected an integer")
    horizon = raw.get("horizon_s", 60.0)
    if isinstance(horizon, bool) or not isinstance(horizon, (int, float)) or horizon < 0:
        raise ValidationError("horizon_s", "expected a non-negative number")
    out_dir = raw.get("output_dir", f"out/{raw['name']}")
    if not isinstance(out_dir, str):
        raise ValidationError("output_dir", "expected a string")
    sc = Scenario(
        name=raw["name"], seed=seed, horizon_s=float(horizon), platform=plat,
        model=_merge("model", _model_defaults(), raw.get("model")),
        scheduler=_merge("scheduler", SCHEDULER_DEFAULTS, raw.get("scheduler")),
        throttle=_merge("throttle", THROTTLE_DEFAULTS, raw.get("throttle")),
        tasks=[_normalize_task(i, t) for i, t in enumerate(tasks)],
        output_dir=out_dir,
    )
    build(sc)   # full semantic validation
    return sc


def parse_scenario(text: str) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    return normalize(raw)


def emit_scenario(sc: Scenario) -> str:
    return json.dumps(sc.to_dict(), indent=2) + "\n"


def load_scenario(source: str) -> Scenario:
    """A preset name or a path to a JSON file."""
    if source in PRESETS:
        return preset(source)
    try:
        with open(source) as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError("scenario", f"cannot read {source!r}: {exc.strerror}") from None
    return parse_scenario(text)


# -- building simulation objects ---------------------------------------------------

def _frozen(path: str, values) -> frozenset[int]:
    if values is None:
        return frozenset()
    if not isinstance(values, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        raise ValidationError(path, "expected a list of integers")
    return frozenset(values)


def _demand(path: str, d: dict) -> wl.DemandProfile:
    try:
        return wl.DemandProfile(float(d["cpu_cycles"]), float(d["llc_accesses"]), float(d["dram_accesses"]),
                                d["bank"], bool(d["write"]))
    except (TypeError, ValueError) as exc:
        raise ValidationError(path, str(exc)) from None


def _platform(sc: Scenario) -> PlatformSpec:
    p = sc.platform
    try:
        gpu = dict(p["gpu"])
        gpu["throttle_curve"] = tuple(gpu["throttle_curve"])
        return PlatformSpec(p["num_cores"], float(p["core_freq_hz"]), LlcSpec(**p["llc"]),
                            DramSpec(**p["dram"]), GpuSpec(**gpu))
    except (PlatformError, TypeError, ValueError) as exc:
        raise ValidationError("platform", str(exc)) from None


def _ms(x) -> int:
    return int(round(float(x) * NS_PER_MS))


def _build_task(i: int, t: dict, platform: PlatformSpec) -> tuple[list[wl.GangSpec], list[wl.AttackerSpec]]:
    path = f"tasks[{i}]"
    kind = t["type"]
    if kind == "slam":
        spec = wl.SlamPipelineSpec(
            frame_rate_hz=float(t["frame_rate_hz"]), keyframe_probability=float(t["keyframe_probability"]),
            front_end=_demand(f"{path}.front_end", t["front_end"]),
            mapping=_demand(f"{path}.mapping", t["mapping"]),
            state_opt=_demand(f"{path}.state_opt", t["state_opt"]),
            cores=_frozen(f"{path}.cores", t["cores"]),
            front_end_cores=tuple(t["front_end_cores"]) if t["front_end_cores"] is not None else None,
            backend_cores=tuple(t["backend_cores"]) if t["backend_cores"] is not None else None,
            rt_priority=t["rt_priority"], partition_id=t["partition"],
            colors=_frozen(f"{path}.colors", t["colors"]), virtual_gang_group=t["virtual_gang"],
        )
        return [wl.build_slam_gang(spec, id=t["id"])], []
    if kind == "playback":
        return [wl.playback_source(float(t["rate_hz"]), t["core"], t["rt_priority"],
                                   demand=_demand(f"{path}.demand", t["demand"]),
                                   partition_id=t["partition"], colors=_frozen(f"{path}.colors", t["colors"]),
                                   virtual_gang_group=t["virtual_gang"], id=t["id"])], []
    if kind == "dnn":
        spec = wl.DnnTaskSpec(float(t["rate_hz"]), float(t["cpu_launch_cycles"]), float(t["launch_llc_accesses"]),
                              float(t["gpu_compute_ns"]), float(t["gpu_mem_bytes"]), t["core"],
                              t["rt_priority"], t["partition"], _frozen(f"{path}.colors", t["colors"]))
        gang = wl.build_dnn_gang(spec, id=t["id"])
        if t["virtual_gang"] is not None:
            gang = wl.GangSpec(gang.id, gang.threads, gang.cores, gang.rt_priority, gang.partition_id,
                               gang.colors, t["virtual_gang"])
        return [gang], []
    if kind == "attacker":
        count = t["count"]
        if isinstance(count, bool) or not isinstance(count, int) or count < 0:
            raise ValidationError(f"{path}.count", "expected a non-negative integer")
        pattern, access, target = wl.parse_attacker_name(t["name"])
        prefix = t["id"] or t["name"]
        colors = tuple(sorted(_frozen(f"{path}.colors", t["colors"])))
        out = []
        for n in range(count):
            aid = prefix if count == 1 and t["id"] else f"{prefix}#{n}"
            out.append(wl.build_attacker(pattern, access, target, t["bank"], core=t["core"],
                                         colors=colors, id=aid))
        return [], out
    # generic gang
    threads = []
    for j, th in enumerate(t["threads"]):
        tp = f"{path}.threads[{j}]"
        if not th["name"]:
            raise ValidationError(f"{tp}.name", "required")
        if th["period_ms"] is not None:
            act = wl.Periodic(_ms(th["period_ms"]), _ms(th["offset_ms"]))
        elif th["trigger"] is not None:
            act = wl.EventDriven(th["trigger"], float(th["probability"]))
        else:
            raise ValidationError(tp, "needs period_ms or trigger")
        gpu = wl.GpuDemand(float(th["gpu"]["compute_ns"]), float(th["gpu"]["mem_bytes"])) if th["gpu"] else None
        threads.append(wl.ThreadSpec(
            th["name"], act, _demand(f"{tp}.demand", th["demand"]),
            deadline_ns=_ms(th["deadline_ms"]) if th["deadline_ms"] is not None else None,
            cores=tuple(th["cores"]) if th["cores"] is not None else None,
            drop_if_busy=bool(th["drop_if_busy"]), queue_depth=int(th["queue_depth"]), gpu=gpu))
    if not t["id"]:
        raise ValidationError(f"{path}.id", "required")
    return [wl.GangSpec(t["id"], tuple(threads), _frozen(f"{path}.cores", t["cores"]), t["rt_priority"],
                        t["partition"], _frozen(f"{path}.colors", t["colors"]), t["virtual_gang"])], []


@dataclass
class Built:
    platform: PlatformSpec
    params: ModelParams
    gangs: list[wl.GangSpec]
    attackers: list[wl.AttackerSpec]
    partitions: list[tuple[str, tuple[int, ...]]]


def build(sc: Scenario) -> Built:
    """Turn a normalized scenario into simulation objects, validating everything."""
    platform = _platform(sc)
    try:
        params = ModelParams(**sc.model)
    except (TypeError, ValueError) as exc:
        raise ValidationError("model", str(exc)) from None
    mode = sc.scheduler["mode"]
    if mode not in MODES:
        raise ValidationError("scheduler.mode", f"must be one of {', '.join(MODES)}")
    if sc.scheduler["throttle_scope"] not in SCOPES:
        raise ValidationError("scheduler.throttle_scope", f"must be one of {', '.join(SCOPES)}")
    thr = sc.throttle
    lvl = thr["gpu_level"]
    if isinstance(lvl, bool) or not isinstance(lvl, int) or not 0 <= lvl < platform.gpu.num_throttle_levels:
        raise ValidationError("throttle.gpu_level", f"must be an integer in [0, {platform.gpu.num_throttle_levels - 1}]")
    if float(thr["llc_threshold_mb_s"]) < 0:
        raise ValidationError("throttle.llc_threshold_mb_s", "must be >= 0")
    if float(thr["regulation_period_us"]) <= 0:
        raise ValidationError("throttle.regulation_period_us", "must be positive")

    parts = sc.platform["partitions"]
    ids = [p["id"] for p in parts]
    if any(not isinstance(i, str) or not i for i in ids) or len(set(ids)) != len(ids):
        raise ValidationError("platform.partitions", "partition ids must be unique non-empty strings")
    pcfg = PartitionConfig(
        tuple(_frozen(f"platform.partitions[{i}].cores", p["cores"]) for i, p in enumerate(parts)),
        {p["id"]: _frozen(f"platform.partitions[{i}].colors", p["colors"]) for i, p in enumerate(parts)},
        tuple(ids),
    )
    try:
        validate_partitions(platform, pcfg)
    except PlatformError as exc:
        raise ValidationError("platform.partitions", f"{type(exc).__name__}: {exc}") from exc

    gangs: list[wl.GangSpec] = []
    attackers: list[wl.AttackerSpec] = []
    for i, t in enumerate(sc.tasks):
        try:
            g, a = _build_task(i, t, platform)
        except ValidationError:
            raise
        except (wl.WorkloadError, KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"tasks[{i}]", f"{type(exc).__name__}: {exc}") from None
        gangs += g
        attackers += a
    gids = [g.id for g in gangs]
    if len(set(gids)) != len(gids):
        raise ValidationError("tasks", "duplicate gang id")
    aids = [a.id for a in attackers]
    if len(set(aids)) != len(aids):
        raise ValidationError("tasks", "duplicate attacker id")
    for g in gangs:
        for c in g.cores:
            if not 0 <= c < platform.num_cores:
                raise ValidationError(f"tasks.{g.id}.cores", f"core {c} does not exist")
        for c in g.colors:
            if not 0 <= c < platform.llc.num_colors:
                raise ValidationError(f"tasks.{g.id}.colors", f"color {c} does not exist")
    for a in attackers:
        if a.core is not None and not 0 <= a.core < platform.num_cores:
            raise ValidationError(f"tasks.{a.id}.core", f"core {a.core} does not exist")
    try:
        wl.validate_virtual_gangs(gangs)
    except wl.VirtualGangError as exc:
        raise ValidationError("tasks.virtual_gang", str(exc)) from None

    part_cores = {p["id"]: frozenset(p["cores"]) for p in parts}
    if mode == "rt-gang++":
        for g in gangs:
            if g.partition_id not in part_cores:
                raise ValidationError(f"tasks.{g.id}.partition", f"unknown partition {g.partition_id!r}")
    for g in gangs:
        if parts and g.partition_id in part_cores and not g.cores <= part_cores[g.partition_id]:
            raise ValidationError(f"tasks.{g.id}.cores", f"cores lie outside partition {g.partition_id}")
    return Built(platform, params, gangs, attackers, [(p["id"], tuple(sorted(p["cores"]))) for p in parts])


def to_sim_config(sc: Scenario, check_invariants: bool = True) -> SimConfig:
    b = build(sc)
    thr = sc.throttle
    return SimConfig(
        gangs=b.gangs, attackers=b.attackers, platform=b.platform, params=b.params,
        mode=sc.scheduler["mode"], throttle_scope=sc.scheduler["throttle_scope"], partitions=b.partitions,
        llc_threshold_bytes_per_s=float(thr["llc_threshold_mb_s"]) * 1e6,
        regulation_period_ns=int(round(float(thr["regulation_period_us"]) * NS_PER_US)),
        gpu_level=thr["gpu_level"], horizon_ns=int(round(sc.horizon_s * NS_PER_S)), seed=sc.seed,
        check_invariants=check_invariants,
    )


# -- presets -----------------------------------------------------------------------

ARHUD_PARTITIONS = [{"id": "A", "cores": [0, 1, 2], "colors": [0, 1]},
                    {"id": "B", "cores": [3], "colors": [2, 3]}]


def _arhud(name: str, *, dnn: bool, attackers: int, mode: str = "fifo", slam: bool = True) -> Scenario:
    tasks: list[dict] = []
    if slam:
        tasks.append({"type": "slam", "virtual_gang": "vg"})
        tasks.append({"type": "playback", "virtual_gang": "vg"})
    if dnn:
        tasks.append({"type": "dnn"})
    if attackers:
        tasks.append({"type": "attacker", "name": "BkPLLWrite(LLC)", "count": attackers})
    raw = {
        "name": name, "seed": 0, "horizon_s": 60.0,
        "platform": {"partitions": copy.deepcopy(ARHUD_PARTITIONS)},
        "scheduler": {"mode": mode},
        "throttle": {"llc_threshold_mb_s": 100.0, "regulation_period_us": 1000.0, "gpu_level": 20},
        "tasks": tasks, "output_dir": f"out/{name}",
    }
    return normalize(raw)


def _dnn_solo() -> Scenario:
    sc = _arhud("dnn-solo", dnn=True, attackers=0, mode="rt-gang++", slam=False)
    sc.throttle["gpu_level"] = 0
    return sc


PRESETS: dict[str, Callable[[], Scenario]] = {
    "arhud-default": lambda: _arhud("arhud-default", dnn=True, attackers=0),
    "arhud-solo": lambda: _arhud("arhud-solo", dnn=False, attackers=0),
    "arhud-dos": lambda: _arhud("arhud-dos", dnn=False, attackers=4),
    "arhud-dnn": lambda: _arhud("arhud-dnn", dnn=True, attackers=0),
    "arhud-dnn-dos": lambda: _arhud("arhud-dnn-dos", dnn=True, attackers=4),
    "arhud-partitions": lambda: _arhud("arhud-partitions", dnn=True, attackers=0, mode="rt-gang++"),
    "dnn-solo": _dnn_solo,
}


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValidationError("preset", f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None


def with_attacker_type(sc: Scenario, name: str) -> Scenario:
    """Copy of ``sc`` whose attacker tasks all use pattern ``name``."""
    out = copy.deepcopy(sc)
    for t in out.tasks:
        if t["type"] == "attacker":
            t["name"] = name
    build(out)
    return out

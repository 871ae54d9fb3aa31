"""Command line: ``rtgangsim run|sweep|emit-preset|check``.

Exit codes: 0 success, 2 invalid scenario or arguments, 3 invariant violation.
"""
from __future__ import annotations

import argparse
import copy
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import metrics, scenario as sc_mod
from .scenario import ParseError, Scenario, ValidationError
from .scheduler import MODES
from .sim import InvariantViolation, simulate

EXIT_OK, EXIT_INVALID, EXIT_INVARIANT = 0, 2, 3

log = logging.getLogger("rtgangsim")


class UnknownParameter(ValidationError):
    def __init__(self, name: str):
        super().__init__("--param", f"{name!r} is not sweepable; choose one of {', '.join(SWEEP_PARAMS)}")

SWEEP_PARAMS = ("gpu_level", "llc_threshold", "attacker_count")


def parse_values(text: str) -> list[float]:
    """``"0..31"`` (inclusive integer range) or a comma list ``"50,100,200"``."""
    if not text.strip():
        return []
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            a, b = int(lo), int(hi)
        except ValueError:
            raise ValidationError("--values", f"bad range {text!r}") from None
        if b < a:
            raise ValidationError("--values", "range end precedes start")
        return list(range(a, b + 1))
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError("--values", f"bad value list {text!r}") from None
    return [int(v) if v.is_integer() else v for v in vals]


def apply_overrides(sc: Scenario, scheduler: str | None = None, gpu_level: int | None = None,
                    seed: int | None = None, horizon_s: float | None = None) -> Scenario:
    out = copy.deepcopy(sc)
    if scheduler is not None:
        out.scheduler["mode"] = scheduler
    if gpu_level is not None:
        out.throttle["gpu_level"] = gpu_level
    if seed is not None:
        out.seed = seed
    if horizon_s is not None:
        out.horizon_s = horizon_s
    sc_mod.build(out)
    return out


def set_param(sc: Scenario, param: str, value) -> Scenario:
    out = copy.deepcopy(sc)
    if param == "gpu_level":
        if float(value) != int(value):
            raise ValidationError("--values", "gpu_level takes integers")
        out.throttle["gpu_level"] = int(value)
    elif param == "llc_threshold":
        out.throttle["llc_threshold_mb_s"] = float(value)
    elif param == "attacker_count":
        tasks = [t for t in out.tasks if t["type"] == "attacker"]
        if not tasks:
            raise ValidationError("tasks", "attacker_count sweep needs an attacker task")
        if float(value) != int(value) or value < 0:
            raise ValidationError("--values", "attacker_count takes non-negative integers")
        for t in tasks:
            t["count"] = int(value)
    else:
        raise UnknownParameter(param)
    sc_mod.build(out)
    return out


def run_scenario(sc: Scenario):
    cfg = sc_mod.to_sim_config(sc)
    res = simulate(cfg)
    m = metrics.summarize(res.trace, scenario=sc.name, num_cores=cfg.platform.num_cores,
                          horizon_ns=res.horizon_ns)
    return m, res


def cmd_run(args) -> int:
    sc = apply_overrides(sc_mod.load_scenario(args.scenario), args.scheduler, args.gpu_level,
                         args.seed, args.horizon)
    out = Path(args.out or sc.output_dir)
    m, res = run_scenario(sc)
    metrics.write_all(m, out)
    res.trace.write_csv(out / "trace.csv")
    (out / "scenario.json").write_text(sc_mod.emit_scenario(sc))
    print(f"{sc.name} [{sc.scheduler['mode']}] -> {out}  trace sha256 {res.trace.digest()}")
    for name, st in m.threads.items():
        print(f"  {name:24s} n={st.count:5d} median={st.median_ms:8.2f} ms  p99={st.p99_ms:8.2f} ms")
    if m.frames:
        print(f"  frames processed: {m.frame_fraction:.3f}")
    if m.dnn_avg_ms is not None:
        print(f"  dnn average: {m.dnn_avg_ms:.2f} ms")
    return EXIT_OK


def sweep_row(sc: Scenario, param: str, value) -> dict:
    m, _ = run_scenario(sc)
    row = {"param": param, "value": value, "seed": sc.seed,
           "frame_fraction": f"{m.frame_fraction:.6f}",
           "dnn_avg_ms": "" if m.dnn_avg_ms is None else f"{m.dnn_avg_ms:.6f}",
           "attacker_llc_mb_s": f"{sum(m.core_mb_s('be_llc')):.3f}"}
    for name, st in m.threads.items():
        row[f"{name}.median_ms"] = f"{st.median_ms:.6f}"
        row[f"{name}.p99_ms"] = f"{st.p99_ms:.6f}"
    return row


def sweep(base: Scenario, param: str, values, jobs: int = 1) -> list[dict]:
    """One independent run per value; run ``i`` uses seed ``base.seed + i``."""
    if param not in SWEEP_PARAMS:
        raise UnknownParameter(param)
    scenarios = []
    for i, v in enumerate(values):
        sc = set_param(base, param, v)
        sc.seed = base.seed + i
        scenarios.append(sc)
    if jobs > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(sweep_row, scenarios, [param] * len(values), values))
    rows = []
    for sc, v in zip(scenarios, values):
        rows.append(sweep_row(sc, param, v))
        log.info("%s=%s done", param, v)
    return rows


def write_sweep(rows: list[dict], path: Path) -> None:
    header = ["param", "value", "seed", "frame_fraction", "dnn_avg_ms", "attacker_llc_mb_s"]
    for r in rows:
        header += [k for k in r if k not in header]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, header, restval="", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def cmd_sweep(args) -> int:
    base = apply_overrides(sc_mod.load_scenario(args.scenario), args.scheduler, None, None, args.horizon)
    if args.param not in SWEEP_PARAMS:
        raise UnknownParameter(args.param)
    values = parse_values(args.values)
    out = Path(args.out or base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep(base, args.param, values, args.jobs)
    write_sweep(rows, out / "sweep.csv")
    print(f"{len(rows)} runs -> {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_emit(args) -> int:
    text = sc_mod.emit_scenario(sc_mod.preset(args.preset))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args) -> int:
    sc = sc_mod.load_scenario(args.scenario)
    cfg = sc_mod.to_sim_config(sc)
    print(f"{sc.name}: ok ({len(cfg.gangs)} gangs, {len(cfg.attackers)} attackers, mode {cfg.mode})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtgangsim", description="Contention-aware SoC scheduling simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("scenario", help="preset name or JSON file")
    r.add_argument("--scheduler", choices=MODES)
    r.add_argument("--gpu-level", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--horizon", type=float, help="seconds of simulated time")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="vary one parameter across runs")
    s.add_argument("scenario")
    s.add_argument("--param", required=True, help=" | ".join(SWEEP_PARAMS))
    s.add_argument("--values", required=True, help="a..b or comma list")
    s.add_argument("--scheduler", choices=MODES)
    s.add_argument("--horizon", type=float)
    s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("emit-preset", help="print a preset as JSON")
    e.add_argument("preset", choices=sorted(sc_mod.PRESETS))
    e.add_argument("--out")
    e.set_defaults(func=cmd_emit)

    c = sub.add_parser("check", help="validate a scenario without running it")
    c.add_argument("scenario")
    c.set_defaults(func=cmd_check)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())

"""Command line: batch exploration, standalone polyline planning, reference area, metrics."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .config import ConfigError, Scenario, load_config
from .controller import Outcome, run_mission
from .export import read_trajectory, write_run
from .grid_map import GridError, load_map
from .metrics import cached_reference_area, compute_metrics
from .polyline import PolylineParams, plan_polyline, polyline_metrics

METRICS_HEADER = ("seed", "outcome", "total_time_s", "distance_m", "rotation_rad", "segments", "segment_std_m",
                  "final_finish_rate")


def _out_root(arg) -> Path:
    return Path(arg or os.environ.get("EXPLORA_OUT") or "explora_out")


def _scenario_name(cfg) -> str:
    return Path(cfg.map).stem


def _reference(scenario: Scenario) -> float:
    cfg = scenario.config
    return cached_reference_area(cfg.map_path(), scenario.truth, (cfg.start_x, cfg.start_y), cfg.r_robot, cfg.r_sensing)


def _write_metrics(out: Path, runs, bundle):
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for (seed, r), rate in zip(runs, bundle.final_finish_rates):
            seg = np.asarray(r.segments, dtype=float)
            std = float(np.std(seg, ddof=1)) if len(seg) > 1 else 0.0
            w.writerow((seed, r.outcome.value, f"{r.total_time:.2f}", f"{r.distance:.3f}", f"{r.rotation:.4f}",
                        len(seg), f"{std:.4f}", f"{rate:.4f}"))
    def r6(v):
        # stored trajectories carry rounded areas; six places keeps recomputed summaries identical
        return None if v is None else round(v, 6)

    summary = {
        "runs": bundle.runs,
        "tallies": bundle.tallies,
        "s_p_m": r6(bundle.s_p),
        "phi_avg_sum_rad": r6(bundle.phi_avg_sum),
        "final_finish_rate_min": r6(min(bundle.final_finish_rates)) if bundle.final_finish_rates else None,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "timings.json").write_text(json.dumps({"t_calc_avg_s": bundle.t_calc_avg}, sort_keys=True) + "\n")


def _summary_line(bundle) -> str:
    t = bundle.tallies
    s_p = "n/a" if bundle.s_p is None else f"{bundle.s_p:.3f}"
    return (f"FIN={t['Finished']} CO={t['Collision']} OS={t['Stall']} TO={t['Timeout']} "
            f"s_p={s_p} phi_avg_sum={bundle.phi_avg_sum:.2f}")


def cmd_explore(args) -> int:
    cfg = load_config(args.config)
    changes = {}
    if args.fov is not None:
        changes["fov"] = args.fov
    if args.backend is not None:
        changes["backend"] = args.backend
    if changes:
        cfg = cfg.replace(**changes)
    runs = args.runs if args.runs is not None else cfg.runs
    seed0 = args.seed if args.seed is not None else cfg.seed
    scenario = Scenario.from_config(cfg)
    name = _scenario_name(cfg)
    out = _out_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    done = []
    for k in range(runs):
        seed = seed0 + k
        try:
            report = run_mission(scenario, seed)
        except Exception as exc:  # one broken run must not abort the batch
            print(f"run {seed}: error: {exc}", file=sys.stderr)
            continue
        write_run(report, out / f"run_{seed}", seed, name)
        done.append((seed, report))
        print(f"run {seed}: {report.outcome.value} t={report.total_time:.1f}s")
    bundle = compute_metrics([r for _, r in done], _reference(scenario))
    _write_metrics(out, done, bundle)
    print(_summary_line(bundle))
    ok = len(done) == runs and all(r.outcome is Outcome.FINISHED for _, r in done)
    return 0 if ok else 1


def cmd_plan(args) -> int:
    grid = load_map(args.map)
    params = PolylineParams(args.d, args.k_rot, args.k_uni, args.backend)
    res = plan_polyline(tuple(args.start), tuple(args.goal), grid, params, args.r_robot)
    if not res.ok:
        print("no path", file=sys.stderr)
        return 1
    for x, y in res.path.junctions:
        print(f"{x:.4f} {y:.4f}")
    m = polyline_metrics(res.path, params)
    print(f"# sum_S={m['objective']:.6f} segment_std={m['segment_std']:.4f} "
          f"cumulative_rotation={m['cumulative_rotation']:.4f} t_calc={res.t_calc:.6f}")
    return 0


def cmd_reference(args) -> int:
    scenario = Scenario.from_config(load_config(args.config))
    print(f"{_reference(scenario):.4f}")
    return 0


def _stored_run(run_dir: Path):
    rep = json.loads((run_dir / "report.json").read_text())
    t, a = read_trajectory(run_dir / "trajectory.csv")
    timings = run_dir / "timings.json"
    plan_times = json.loads(timings.read_text())["plan_times_s"] if timings.exists() else []
    return rep["seed"], SimpleNamespace(
        outcome=Outcome(rep["outcome"]), segments=rep["segments_m"], rotation=rep["rotation_rad"],
        total_time=rep["total_time_s"], distance=rep["distance_m"], plan_times=plan_times,
        known_area_series=lambda t=t, a=a: (t, a),
    )


def cmd_metrics(args) -> int:
    out = _out_root(args.out)
    dirs = sorted(out.glob("run_*"), key=lambda p: int(p.name.split("_")[1]))
    if not dirs:
        print(f"no runs under {out}", file=sys.stderr)
        return 1
    runs = [_stored_run(d) for d in dirs]
    bundle = compute_metrics([r for _, r in runs], _reference(Scenario.from_config(load_config(args.config))))
    _write_metrics(out, runs, bundle)
    print(_summary_line(bundle))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="explora", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("explore", help="run seeded exploration missions")
    e.add_argument("--config", required=True)
    e.add_argument("--runs", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--fov", type=float)
    e.add_argument("--backend", choices=("bi", "dp"))
    e.add_argument("--out")
    e.add_argument("--deterministic", action="store_true",
                   help="single-task interleaved mode (the only mode implemented)")
    e.set_defaults(func=cmd_explore)

    q = sub.add_parser("plan-polyline", help="plan one polyline path on a map")
    q.add_argument("--map", required=True)
    q.add_argument("--start", type=float, nargs=2, required=True, metavar=("X", "Y"))
    q.add_argument("--goal", type=float, nargs=2, required=True, metavar=("X", "Y"))
    q.add_argument("--d", type=float, default=1.25)
    q.add_argument("--k-rot", type=float, default=1.0)
    q.add_argument("--k-uni", type=float, default=1.0)
    q.add_argument("--backend", choices=("bi", "dp"), default="dp")
    q.add_argument("--r-robot", type=float, default=0.24)
    q.set_defaults(func=cmd_plan)

    r = sub.add_parser("reference", help="compute (and cache) the reference known area of a scenario")
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_reference)

    m = sub.add_parser("metrics", help="recompute batch metrics from stored runs")
    m.add_argument("--config", required=True)
    m.add_argument("--out")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GridError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

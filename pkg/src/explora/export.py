"""Run artifacts: report JSON, event log, trajectory CSV, belief PGM and SVG overlay."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .grid_map import CellState, OccupancyGrid, save_map

PX_PER_M = 50.0
TRAJECTORY_HEADER = ("t", "x", "y", "theta", "mode", "known_area_m2")


def report_dict(report, seed: int, scenario: str = "") -> dict:
    ext = report.extension
    return {
        "scenario": scenario,
        "seed": seed,
        "outcome": report.outcome.value,
        "reason": report.reason,
        "total_time_s": report.total_time,
        "distance_m": report.distance,
        "rotation_rad": report.rotation,
        "known_area_m2": report.belief.known_area(),
        "segments_m": list(map(float, report.segments)),
        "junction_turns_rad": list(map(float, report.junction_turns)),
        "extension": {m.value: {"time_s": ext.time[m], "area_m2": ext.area[m]} for m in ext.time},
        "start": list(report.start),
        "final_pose": list(report.final_pose),
        "counters": report.counters,
        "plans": len(report.plan_times),
    }


def write_report(report, path, seed: int, scenario: str = ""):
    Path(path).write_text(json.dumps(report_dict(report, seed, scenario), indent=2, sort_keys=True) + "\n")


def write_events(lines, path):
    Path(path).write_text("".join(line + "\n" for line in lines))


def write_trajectory(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for t, x, y, th, mode, area in rows:
            w.writerow((f"{t:.2f}", f"{x:.4f}", f"{y:.4f}", f"{th:.5f}", mode, f"{area:.6f}"))


def read_trajectory(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    t = np.array([float(r["t"]) for r in rows])
    a = np.array([float(r["known_area_m2"]) for r in rows])
    return t, a


def _runs(mask: np.ndarray):
    """Horizontal runs of True cells as (row, col_start, length)."""
    for row in range(mask.shape[0]):
        line = mask[row]
        if not line.any():
            continue
        padded = np.concatenate(([False], line, [False]))
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        for a, b in zip(edges[::2], edges[1::2]):
            yield row, int(a), int(b - a)


def render_svg(belief: OccupancyGrid, trajectory=(), tree_edges=((), ()), frontiers=(), start=None, goal=None) -> str:
    res = belief.resolution
    ox, oy = belief.origin
    w_m, h_m = belief.width * res, belief.height * res
    s = PX_PER_M

    def px(x, y):
        return f"{(x - ox) * s:.2f},{(h_m - (y - oy)) * s:.2f}"

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w_m * s:.0f}" height="{h_m * s:.0f}">',
        f'<rect x="0" y="0" width="{w_m * s:.2f}" height="{h_m * s:.2f}" fill="#808080"/>',
    ]
    for state, color in ((CellState.FREE, "#ffffff"), (CellState.OCCUPIED, "#000000")):
        out.append(f'<g fill="{color}">')
        for row, col, n in _runs(belief.cells == state):
            x = col * res * s
            y = (belief.height - row - 1) * res * s
            out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{n * res * s:.2f}" height="{res * s:.2f}"/>')
        out.append("</g>")
    p0, p1 = tree_edges
    if len(p0):
        out.append('<g stroke="#3a7bd5" stroke-width="0.6">')
        for a, b in zip(p0, p1):
            ax, ay = px(*a).split(",")
            bx, by = px(*b).split(",")
            out.append(f'<line x1="{ax}" y1="{ay}" x2="{bx}" y2="{by}"/>')
        out.append("</g>")
    if len(trajectory):
        pts = " ".join(px(r[1], r[2]) for r in trajectory)
        out.append(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="2"/>')
    for f in frontiers:
        cx, cy = px(*f).split(",")
        out.append(f'<circle cx="{cx}" cy="{cy}" r="4" fill="#ff9900"/>')
    for p, color in ((start, "#2ca02c"), (goal, "#9467bd")):
        if p is not None:
            cx, cy = px(*p[:2]).split(",")
            out.append(f'<circle cx="{cx}" cy="{cy}" r="6" fill="{color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_snapshot(belief: OccupancyGrid, trajectory, tree_edges, frontiers, out_dir, start=None, goal=None):
    """Write ``map.pgm`` (+ header) and ``overlay.svg`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_map(belief, out / "map.pgm")
    (out / "overlay.svg").write_text(render_svg(belief, trajectory, tree_edges, frontiers, start, goal))
    return out / "map.pgm", out / "overlay.svg"


def write_run(report, out_dir, seed: int, scenario: str = ""):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "report.json", seed, scenario)
    write_events(report.events, out / "events.log")
    write_trajectory(report.trajectory, out / "trajectory.csv")
    end = report.final_pose
    export_snapshot(report.belief, report.trajectory, report.tree_edges, report.frontiers, out,
                    start=report.start, goal=end)
    # wall-clock figures vary between runs, so they live apart from the byte-stable files
    timings = {"plan_times_s": report.plan_times}
    (out / "timings.json").write_text(json.dumps(timings, sort_keys=True) + "\n")

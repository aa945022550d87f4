"""Aggregate finished runs into score tables and training-curve charts."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .agents.runlog import read_runlog
from .metrics import iqm, probability_of_improvement, stratified_bootstrap_ci


class ReportError(ValueError):
    pass


@dataclass
class RunSummary:
    run: str
    algo: str  # "<algo>/<encoder>", the unit being compared
    env: str
    seed: int
    final: dict  # split -> final normalised score
    curves: dict  # split -> list of (t, norm_score)


def load_run_summary(run_dir) -> RunSummary:
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ReportError(f"{run_dir}: no manifest.json; is the run finished?")
    manifest = json.loads(manifest_path.read_text())
    evals = [r for r in read_runlog(run_dir / "runlog.jsonl") if r.get("kind") == "eval"]
    if not evals:
        raise ReportError(f"{run_dir}: runlog has no eval records")
    curves: dict = defaultdict(list)
    for r in evals:
        curves[r["split"]].append((r["t"], r["norm_score"]))
    final = {}
    for split, points in curves.items():
        points.sort()
        final[split] = points[-1][1]
    return RunSummary(run_dir.name, f"{manifest['algo']}/{manifest['encoder']}", manifest["env"],
                      manifest["seeds"][0], final, dict(curves))


def score_matrices(runs: Sequence[RunSummary]) -> dict:
    """{split: {algo: {env: [final scores ordered by seed]}}}"""
    out: dict = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    for run in sorted(runs, key=lambda r: (r.algo, r.env, r.seed)):
        for split, score in run.final.items():
            out[split][run.algo][run.env].append(score)
    return out


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def build_report(run_dirs: Sequence, out_dir, n_resamples: int = 2000, seed: int = 0) -> dict[str, Path]:
    """Write report.csv, poi.csv and one curves SVG per (env, split) into ``out_dir``."""
    runs = [load_run_summary(d) for d in run_dirs]
    if not runs:
        raise ReportError("no run directories given")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    matrices = score_matrices(runs)

    rows = []
    for split in sorted(matrices):
        for algo in sorted(matrices[split]):
            matrix = matrices[split][algo]
            for env in sorted(matrix) + ["all"]:
                sub = matrix if env == "all" else {env: matrix[env]}
                lo, hi = stratified_bootstrap_ci(sub, iqm, n_resamples, rng=np.random.default_rng(seed))
                rows.append([algo, env, split, _fmt(iqm(sub)), _fmt(lo), _fmt(hi)])
    report_path = out_dir / "report.csv"
    _write_csv(report_path, ["algo", "env", "split", "iqm", "ci_lo", "ci_hi"], rows)

    poi_rows = []
    for split in sorted(matrices):
        algos = sorted(matrices[split])
        for x in algos:
            for y in algos:
                if x == y or set(matrices[split][x]) != set(matrices[split][y]):
                    continue
                point, (lo, hi) = probability_of_improvement(matrices[split][x], matrices[split][y],
                                                             n_resamples, rng=np.random.default_rng(seed))
                poi_rows.append([split, x, y, _fmt(point), _fmt(lo), _fmt(hi)])
    poi_path = out_dir / "poi.csv"
    _write_csv(poi_path, ["split", "algo_x", "algo_y", "poi", "ci_lo", "ci_hi"], poi_rows)

    written = {"report": report_path, "poi": poi_path}
    for env in sorted({r.env for r in runs}):
        for split in sorted(matrices):
            series = {}
            for algo in sorted(matrices[split]):
                series[algo] = mean_curve([r.curves[split] for r in runs
                                           if r.algo == algo and r.env == env and split in r.curves])
            series = {k: v for k, v in series.items() if v}
            if series:
                path = out_dir / f"curves-{env}-{split}.svg"
                path.write_text(svg_line_chart(series, f"{env} ({split})", "env steps", "normalised score"))
                written[f"curves-{env}-{split}"] = path
    return written


def mean_curve(curves: Sequence[Sequence[tuple[int, float]]]) -> list[tuple[int, float]]:
    """Average across runs at the eval steps every run has."""
    if not curves:
        return []
    common = set.intersection(*(set(t for t, _ in c) for c in curves))
    out = []
    for t in sorted(common):
        out.append((t, float(np.mean([dict(c)[t] for c in curves]))))
    return out


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def svg_line_chart(series: dict[str, list[tuple[float, float]]], title: str, xlabel: str, ylabel: str,
                   width: int = 480, height: int = 320) -> str:
    """Plain SVG line chart, one polyline per series."""
    left, right, top, bottom = 56, 16, 28, 44
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(min(ys), 0.0), max(max(ys), 1.0)
    if x1 == x0:
        x1 = x0 + 1

    def px(x):
        return left + (x - x0) / (x1 - x0) * (width - left - right)

    def py(y):
        return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
             f'<line x1="{left}" y1="{py(y0):.1f}" x2="{width - right}" y2="{py(y0):.1f}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>']
    for v in np.linspace(y0, y1, 5):
        parts.append(f'<text x="{left - 6}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
    for v in np.linspace(x0, x1, 5):
        parts.append(f'<text x="{px(v):.1f}" y="{height - bottom + 16}" text-anchor="middle">{v:.3g}</text>')
    parts.append(f'<text x="{(left + width - right) / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(f'<text x="14" y="{(top + height - bottom) / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {(top + height - bottom) / 2})">{escape(ylabel)}</text>')
    for k, (name, pts) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        parts.append(f'<text x="{left + 8}" y="{top + 14 * (k + 1)}" fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

"""Structured experiment reports, CSV tables and a small SVG line-plot writer."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__

__all__ = ["Check", "ExperimentReport", "svg_line_plot", "jsonable"]


def jsonable(x: Any):
    """Convert numpy values (and non-finite floats) into plain JSON types."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


_RELATIONS = {
    "<=": lambda v, b, tol: (v <= b + tol, b + tol - v),
    ">=": lambda v, b, tol: (v >= b - tol, v - (b - tol)),
    "<": lambda v, b, tol: (v < b + tol, b + tol - v),
    ">": lambda v, b, tol: (v > b - tol, v - (b - tol)),
    "==": lambda v, b, tol: (abs(v - b) <= tol, tol - abs(v - b)),
}


@dataclass
class Check:
    name: str
    claim: str  # what is being verified, in words
    value: float
    bound: float
    relation: str
    tol: float
    passed: bool
    margin: float


@dataclass
class ExperimentReport:
    experiment: str
    inputs: dict = field(default_factory=dict)
    quantities: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    plots: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    wall_time: float = 0.0
    version: str = __version__
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def check(self, name: str, claim: str, value, bound, relation: str = "<=", tol: float = 0.0) -> bool:
        value, bound = float(value), float(bound)
        if math.isinf(value) and math.isinf(bound) and relation == "==":
            ok, margin = value == bound, 0.0
        else:
            ok, margin = _RELATIONS[relation](value, bound, tol)
        self.checks.append(Check(name, claim, value, bound, relation, tol, bool(ok), float(margin)))
        return bool(ok)

    def assert_true(self, name: str, claim: str, condition: bool) -> bool:
        self.checks.append(Check(name, claim, float(bool(condition)), 1.0, "==", 0.0, bool(condition),
                                 0.0 if condition else -1.0))
        return bool(condition)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def add_table(self, name: str, header: Sequence[str], rows) -> None:
        self.tables[name] = (list(header), [list(r) for r in rows])

    def add_plot(self, name: str, series, **kw) -> None:
        self.plots[name] = (series, kw)

    def finish(self) -> "ExperimentReport":
        self.wall_time = time.perf_counter() - self._t0
        return self

    def to_dict(self) -> dict:
        return jsonable({
            "experiment": self.experiment,
            "version": self.version,
            "inputs": self.inputs,
            "quantities": self.quantities,
            "bounds": self.bounds,
            "checks": [c.__dict__ for c in self.checks],
            "passed": self.passed,
            "notes": self.notes,
            "wall_time": self.wall_time,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, outdir) -> list[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        written = [outdir / "report.json"]
        written[0].write_text(self.to_json())
        for name, (header, rows) in self.tables.items():
            path = outdir / f"{name}.csv"
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(header)
                for r in rows:
                    wr.writerow([_fmt(v) for v in r])
            written.append(path)
        for name, (series, kw) in self.plots.items():
            path = outdir / f"{name}.svg"
            path.write_text(svg_line_plot(series, **kw))
            written.append(path)
        return written


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ---------------------------------------------------------------------------

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        step = max(1, (b - a) // 6)
        return [float(t) for t in range(a, b + 1, step)]
    span = hi - lo
    raw = span / 5 if span > 0 else 1.0
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step) + 1)]


def svg_line_plot(series, title: str = "", xlabel: str = "", ylabel: str = "",
                  logx: bool = False, logy: bool = False, width: int = 560, height: int = 400) -> str:
    """Render line series ``[(label, xs, ys), ...]`` as a standalone SVG document."""
    ml, mr, mt, mb = 70, 20, 30, 50
    pw, ph = width - ml - mr, height - mt - mb
    tx = (lambda v: math.log10(v)) if logx else float
    ty = (lambda v: math.log10(v)) if logy else float
    pts = []
    for label, xs, ys in series:
        keep = [(tx(x), ty(y)) for x, y in zip(xs, ys)
                if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        pts.append((label, keep))
    allx = [p[0] for _, s in pts for p in s] or [0.0, 1.0]
    ally = [p[1] for _, s in pts for p in s] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    sx = lambda v: ml + (v - x0) / (x1 - x0) * pw
    sy = lambda v: mt + ph - (v - y0) / (y1 - y0) * ph
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>')
    for t in _ticks(x0, x1, logx):
        if x0 - 1e-12 <= t <= x1 + 1e-12:
            lab = f"1e{int(t)}" if logx else f"{t:g}"
            out.append(f'<line x1="{sx(t):.1f}" y1="{mt + ph}" x2="{sx(t):.1f}" y2="{mt + ph + 4}" stroke="#000"/>'
                       f'<text x="{sx(t):.1f}" y="{mt + ph + 16}" text-anchor="middle">{lab}</text>')
    for t in _ticks(y0, y1, logy):
        if y0 - 1e-12 <= t <= y1 + 1e-12:
            lab = f"1e{int(t)}" if logy else f"{t:g}"
            out.append(f'<line x1="{ml - 4}" y1="{sy(t):.1f}" x2="{ml}" y2="{sy(t):.1f}" stroke="#000"/>'
                       f'<text x="{ml - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{lab}</text>')
    if xlabel:
        out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{ylabel}</text>')
    for i, (label, s) in enumerate(pts):
        if not s:
            continue
        color = _COLORS[i % len(_COLORS)]
        d = " ".join(f"{'M' if j == 0 else 'L'}{sx(x):.2f},{sy(y):.2f}" for j, (x, y) in enumerate(s))
        out.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{ml + pw - 6}" y="{mt + 14 + 14 * i}" text-anchor="end" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

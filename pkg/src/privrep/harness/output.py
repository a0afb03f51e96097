"""CSV and SVG emission for sweep results."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .runner import ExperimentResult, ResultRow

HEADER = ["method", "epsilon", "seed", "excess_mse", "zero_one_loss", "dist_to_ustar", "wall_time_ms", "clip_rate"]
NA = "NA"


def _cell(v) -> str:
    if v is None:
        return NA
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_csv(result: ExperimentResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)  # excel dialect: CRLF records, minimal quoting
        w.writerow(HEADER)
        for r in result.rows:
            w.writerow([_cell(getattr(r, col)) for col in HEADER])


def _parse(col: str, text: str):
    if text == NA:
        return None
    if col == "method":
        return text
    if col == "seed":
        return int(text)
    return float(text)


def read_csv(path) -> ExperimentResult:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0] if rows else None}")
    out = []
    for rec in rows[1:]:
        out.append(ResultRow(**{c: _parse(c, t) for c, t in zip(HEADER, rec)}))
    return ExperimentResult(out)


# -- plot --------------------------------------------------------------------

_COLOURS = {"private_fedrep": "#1f77b4", "nonprivate_fedrep": "#2ca02c", "local_gd": "#d62728",
            "jl_classify": "#9467bd"}
_W, _H = 520, 340
_ML, _MR, _MT, _MB = 70, 150, 30, 50


def _panel(result: ExperimentResult, metric: str, y0: float) -> list[str]:
    series = {}
    for method in dict.fromkeys(r.method for r in result.rows):
        pts = {e: v for e, v in result.mean_by_epsilon(method, metric).items() if v > 0}
        if pts:
            series[method] = pts
    if not series:
        return []
    eps = sorted({e for pts in series.values() for e in pts})
    finite = [e for e in eps if math.isfinite(e) and e > 0]
    vals = [v for pts in series.values() for v in pts.values()]
    lo, hi = math.floor(math.log10(min(vals))), math.ceil(math.log10(max(vals)))
    if hi == lo:
        hi += 1
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def x_of(e):
        if not finite or not math.isfinite(e):
            return _ML + pw / 2
        a, b = math.log2(min(finite)), math.log2(max(finite))
        return _ML + (pw / 2 if a == b else (math.log2(e) - a) / (b - a) * pw)

    def y_of(v):
        return y0 + _MT + (hi - math.log10(v)) / (hi - lo) * ph

    out = [f'<rect x="{_ML}" y="{y0 + _MT}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{_ML + pw / 2}" y="{y0 + 18}" text-anchor="middle" font-size="13">'
           f'{escape(metric)} (seed mean, log scale)</text>']
    for p in range(lo, hi + 1):
        y = y_of(10.0**p)
        out.append(f'<line x1="{_ML - 4}" y1="{y:.2f}" x2="{_ML + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{_ML - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="11">1e{p}</text>')
    for e in eps:
        x = x_of(e)
        label = "inf" if not math.isfinite(e) else f"{e:g}"
        out.append(f'<text x="{x:.2f}" y="{y0 + _MT + ph + 16}" text-anchor="middle" font-size="11">{label}</text>')
    out.append(f'<text x="{_ML + pw / 2}" y="{y0 + _H - 10}" text-anchor="middle" font-size="12">epsilon</text>')
    for j, (method, pts) in enumerate(series.items()):
        colour = _COLOURS.get(method, "#555")
        coords = [(x_of(e), y_of(v)) for e, v in sorted(pts.items())]
        path = " ".join(f"{x:.2f},{y:.2f}" for x, y in coords)
        out.append(f'<polyline points="{path}" fill="none" stroke="{colour}" stroke-width="2"/>')
        for x, y in coords:
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{colour}"/>')
        ly = y0 + _MT + 14 + 18 * j
        out.append(f'<line x1="{_W - _MR + 12}" y1="{ly - 4}" x2="{_W - _MR + 32}" y2="{ly - 4}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _MR + 38}" y="{ly}" font-size="11">{escape(method)}</text>')
    return out


def emit_plot(result: ExperimentResult, path) -> None:
    """Static SVG: seed-averaged excess MSE (and 0-1 loss if present) against epsilon."""
    panels = []
    for metric in ("excess_mse", "zero_one_loss"):
        body = _panel(result, metric, _H * len(panels))
        if body:
            panels.append(body)
    height = _H * max(len(panels), 1)
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{height}" '
             f'viewBox="0 0 {_W} {height}" font-family="sans-serif">',
             f'<rect width="{_W}" height="{height}" fill="white"/>']
    if not panels:
        lines.append(f'<text x="{_W / 2}" y="{_H / 2}" text-anchor="middle">no data</text>')
    for body in panels:
        lines.extend(body)
    lines.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")

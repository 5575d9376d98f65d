"""CSV, manifest and SVG writers shared by the command line runner."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import DomainError
from .model import Field

__all__ = ["fmt", "write_csv", "write_field_csv", "write_json_atomic", "emit_plot", "jsonable"]


def fmt(x) -> str:
    """Full-precision text for a scalar (17 significant digits)."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_field_csv(path, u: Field, value_name: str = "u") -> None:
    """Radial fields as (r, value); planar fields as (x, y, value) in row-major order."""
    if u.is_radial:
        write_csv(path, ["r", value_name], zip(u.grid.nodes, u.values))
        return
    x, y = u.grid.axes()
    rows = ((x[i], y[j], u.values[i, j]) for i in range(len(x)) for j in range(len(y)))
    write_csv(path, ["x", "y", value_name], rows)


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no infinities; keep them readable and round-trippable
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    return obj


def write_json_atomic(path, data) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(jsonable(data), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _num(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


def emit_plot(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
              loglog: bool = False, markers=(), width: int = 480, height: int = 360) -> str:
    """Static SVG plot of named (x, y) series; identical input gives identical bytes.

    Series named in ``markers`` are drawn as points, the rest as polylines.
    """
    if not series or all(len(xy[0]) == 0 for xy in series.values()):
        raise DomainError("emit_plot needs at least one nonempty series")
    data = {}
    for name, (xs, ys) in series.items():
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.shape != ys.shape:
            raise DomainError(f"series {name!r}: x and y differ in length")
        keep = np.isfinite(xs) & np.isfinite(ys)
        if loglog:
            keep &= (xs > 0) & (ys > 0)
            xs, ys = np.log10(np.where(keep, xs, 1.0)), np.log10(np.where(keep, ys, 1.0))
        data[name] = (xs[keep], ys[keep])
    allx = np.concatenate([d[0] for d in data.values()])
    ally = np.concatenate([d[1] for d in data.values()])
    if allx.size == 0:
        raise DomainError("no plottable points")
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 60, 20, 30, 45
    pw, ph = width - ml - mr, height - mt - mb

    def X(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{width // 2}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>')
    pre = "log10 " if loglog else ""
    if xlabel:
        out.append(f'<text x="{ml + pw // 2}" y="{height - 8}" text-anchor="middle" font-size="11">'
                   f'{_esc(pre + xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{mt + ph // 2}" text-anchor="middle" font-size="11" '
                   f'transform="rotate(-90 14 {mt + ph // 2})">{_esc(pre + ylabel)}</text>')
    for t in range(5):
        xv = x0 + (x1 - x0) * t / 4
        yv = y0 + (y1 - y0) * t / 4
        out.append(f'<text x="{_num(X(xv))}" y="{mt + ph + 14}" text-anchor="middle" font-size="9">{xv:.3g}</text>')
        out.append(f'<text x="{ml - 4}" y="{_num(Y(yv) + 3)}" text-anchor="end" font-size="9">{yv:.3g}</text>')
    for k, (name, (xs, ys)) in enumerate(data.items()):
        color = _COLORS[k % len(_COLORS)]
        if name in markers:
            for a, b in zip(xs, ys):
                out.append(f'<circle cx="{_num(X(a))}" cy="{_num(Y(b))}" r="2.5" fill="{color}"/>')
        else:
            pts = " ".join(f"{_num(X(a))},{_num(Y(b))}" for a, b in zip(xs, ys))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{ml + 8}" y="{mt + 14 + 13 * k}" font-size="10" fill="{color}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")

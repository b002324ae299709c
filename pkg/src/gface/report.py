"""Static SVG line plots and a CSV digest from a training history."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .data import atomic_write
from .train import TrainHistory

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=40, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
LOSS_SERIES = ("loss_rep", "loss_cls", "loss_ad", "loss_bal", "loss_cluster", "loss_total")
ACC_SERIES = ("acc_all", "acc_old", "acc_new")
DIGEST_COLUMNS = ("epoch", "loss_total", "acc_all", "acc_old", "acc_new")


class ReportError(ValueError):
    pass


def _span(values: np.ndarray) -> tuple[float, float]:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return 0.0, 1.0
    lo, hi = float(finite.min()), float(finite.max())
    if lo == hi:  # flat series: give the axis unit height around the value
        return lo - 0.5, hi + 0.5
    return lo, hi


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def line_plot(x: Sequence[float], series: Mapping[str, Sequence[float]], title: str,
              xlabel: str = "epoch", ylabel: str = "") -> str:
    """One SVG document; the axes run exactly from the data minimum to maximum.

    The ranges are also recorded as ``data-*`` attributes on the plot area so
    tools can map coordinates back to values.  NaN points break the line.
    """
    x = np.asarray(x, dtype=np.float64)
    ys = {k: np.asarray(v, dtype=np.float64) for k, v in series.items()}
    xmin, xmax = _span(x)
    ymin, ymax = _span(np.concatenate(list(ys.values())) if ys else np.zeros(0))
    left, top = MARGIN["left"], MARGIN["top"]
    right, bottom = WIDTH - MARGIN["right"], HEIGHT - MARGIN["bottom"]

    def px(v):
        return left + (v - xmin) / (xmax - xmin) * (right - left)

    def py(v):
        return bottom - (v - ymin) / (ymax - ymin) * (bottom - top)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<g id="plot-area" data-xmin="{xmin!r}" data-xmax="{xmax!r}" data-ymin="{ymin!r}" '
        f'data-ymax="{ymax!r}" data-left="{left}" data-right="{right}" data-top="{top}" '
        f'data-bottom="{bottom}">',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
    ]
    for v in (xmin, xmax):
        out.append(f'<text class="xtick" x="{px(v):.3f}" y="{bottom + 18}" text-anchor="middle">'
                   f'{_fmt(v)}</text>')
    for v in (ymin, ymax):
        out.append(f'<text class="ytick" x="{left - 6}" y="{py(v) + 4:.3f}" text-anchor="end">'
                   f'{_fmt(v)}</text>')
    out.append(f'<text x="{(left + right) / 2}" y="{HEIGHT - 12}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{(top + bottom) / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {(top + bottom) / 2})">{escape(ylabel)}</text>')
    for i, (name, y) in enumerate(ys.items()):
        color = COLORS[i % len(COLORS)]
        runs, cur = [], []
        for xv, yv in zip(x, y):
            if math.isfinite(yv):
                cur.append(f"{px(xv):.3f},{py(yv):.3f}")
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        for run in runs:
            out.append(f'<polyline data-series="{escape(name)}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5" points="{" ".join(run)}"/>')
        ly = top + 16 * i + 8
        out.append(f'<line x1="{right + 12}" y1="{ly}" x2="{right + 32}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{right + 38}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def digest_csv(history: TrainHistory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DIGEST_COLUMNS)
    for row in history.rows:
        w.writerow(["" if isinstance(row[k], float) and math.isnan(row[k]) else row[k]
                    for k in DIGEST_COLUMNS])
    return buf.getvalue()


def write_report(history_path, out_dir) -> list[Path]:
    """Loss and accuracy plots plus the digest; nothing is written if the history is unusable."""
    history_path = Path(history_path)
    if not history_path.is_file():
        raise ReportError(f"history file not found: {history_path}")
    try:
        history = TrainHistory.load(history_path)
    except ValueError as exc:
        raise ReportError(f"corrupt history {history_path}: {exc}") from exc
    if len(history) == 0:
        raise ReportError(f"history {history_path} has no epochs")
    epochs = history.column("epoch")
    docs = {
        "losses.svg": line_plot(epochs, {k: history.column(k) for k in LOSS_SERIES},
                                "Loss components per epoch", ylabel="loss"),
        "accuracy.svg": line_plot(epochs, {k: history.column(k) for k in ACC_SERIES},
                                  "All / Old / New accuracy per epoch", ylabel="ACC"),
        "digest.csv": digest_csv(history),
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in docs.items():
        atomic_write(out_dir / name, text)
        paths.append(out_dir / name)
    return paths

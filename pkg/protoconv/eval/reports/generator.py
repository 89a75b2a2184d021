"""
Report emission: ablation CSV, SVG bar/line charts, training curves
Charts are self-contained SVG written as text.
"""
import csv
from pathlib import Path
from typing import Dict, List, Optional, Sequence
from xml.sax.saxutils import escape

from protoconv.core.errors import IoError
from protoconv.core.models import AblationRow, EpochLog

ABLATION_FIELDS = ["setting", "fold", "miou", "fb_iou", "n_seeds", "status", "fingerprint"]

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 64, "right": 150, "top": 48, "bottom": 64}
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def write_ablation_csv(rows: Sequence[AblationRow], path: Path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fp:
            writer = csv.DictWriter(fp, fieldnames=ABLATION_FIELDS)
            writer.writeheader()
            for row in rows:
                data = row.model_dump()
                data["miou"] = _fmt(row.miou)
                data["fb_iou"] = _fmt(row.fb_iou)
                writer.writerow(data)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_ablation_csv(path: Path) -> List[AblationRow]:
    try:
        with open(path, newline="", encoding="utf-8") as fp:
            return [
                AblationRow(
                    setting=r["setting"],
                    fold=r["fold"],
                    miou=float(r["miou"]) if r["miou"] else None,
                    fb_iou=float(r["fb_iou"]) if r["fb_iou"] else None,
                    n_seeds=int(r["n_seeds"]),
                    status=r["status"],
                    fingerprint=r["fingerprint"],
                )
                for r in csv.DictReader(fp)
            ]
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e


# ── SVG primitives ────────────────────────────────────────────────────────────

def _frame(title: str, y_label: str, x_label: str = "") -> List[str]:
    plot_bottom = HEIGHT - MARGIN["bottom"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{MARGIN["left"]}" y1="{MARGIN["top"]}" x2="{MARGIN["left"]}" y2="{plot_bottom}" stroke="black"/>',
        f'<line x1="{MARGIN["left"]}" y1="{plot_bottom}" x2="{WIDTH - MARGIN["right"]}" '
        f'y2="{plot_bottom}" stroke="black"/>',
        f'<text x="16" y="{HEIGHT / 2:.1f}" transform="rotate(-90 16 {HEIGHT / 2:.1f})" '
        f'text-anchor="middle">{escape(y_label)}</text>',
    ]
    if x_label:
        parts.append(f'<text x="{(MARGIN["left"] + WIDTH - MARGIN["right"]) / 2:.1f}" y="{HEIGHT - 16}" '
                     f'text-anchor="middle">{escape(x_label)}</text>')
    return parts


def _y_scale(values: Sequence[float]):
    top = max([v for v in values if v is not None] + [1e-9])
    top = 1.0 if top <= 1.0 else top * 1.05
    span = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def y(v: float) -> float:
        return HEIGHT - MARGIN["bottom"] - span * (v / top)

    return y, top


def _y_ticks(y, top: float) -> List[str]:
    parts = []
    for i in range(6):
        v = top * i / 5
        parts.append(f'<text x="{MARGIN["left"] - 6}" y="{y(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
        parts.append(f'<line x1="{MARGIN["left"]}" y1="{y(v):.1f}" x2="{WIDTH - MARGIN["right"]}" '
                     f'y2="{y(v):.1f}" stroke="#dddddd"/>')
    return parts


def _legend(names: Sequence[str]) -> List[str]:
    parts = []
    x = WIDTH - MARGIN["right"] + 12
    for i, name in enumerate(names):
        y = MARGIN["top"] + 18 * i
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<rect x="{x}" y="{y}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{x + 16}" y="{y + 10}">{escape(name)}</text>')
    return parts


def bar_chart_svg(
    labels: Sequence[str],
    series: Dict[str, Sequence[Optional[float]]],
    title: str,
    y_label: str = "mIoU",
) -> str:
    """Grouped bars: one group per label, one bar per series; missing values are skipped"""
    parts = _frame(title, y_label)
    y, top = _y_scale([v for vals in series.values() for v in vals])
    parts += _y_ticks(y, top)
    plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
    group_w = plot_w / max(len(labels), 1)
    bar_w = group_w * 0.8 / max(len(series), 1)
    base = HEIGHT - MARGIN["bottom"]
    for g, label in enumerate(labels):
        gx = MARGIN["left"] + g * group_w + group_w * 0.1
        for s, values in enumerate(series.values()):
            v = values[g]
            if v is None:
                continue
            parts.append(f'<rect x="{gx + s * bar_w:.1f}" y="{y(v):.1f}" width="{bar_w:.1f}" '
                         f'height="{base - y(v):.1f}" fill="{PALETTE[s % len(PALETTE)]}"/>')
        parts.append(f'<text x="{gx + group_w * 0.4:.1f}" y="{base + 16}" text-anchor="middle">'
                     f'{escape(label)}</text>')
    parts += _legend(list(series))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_chart_svg(
    x_values: Sequence[float],
    series: Dict[str, Sequence[Optional[float]]],
    title: str,
    x_label: str,
    y_label: str = "mIoU",
) -> str:
    """Polylines over numeric x; gaps where a value is missing"""
    parts = _frame(title, y_label, x_label)
    y, top = _y_scale([v for vals in series.values() for v in vals])
    parts += _y_ticks(y, top)
    lo, hi = min(x_values), max(x_values)
    plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]

    def x(v: float) -> float:
        return MARGIN["left"] + (plot_w * (v - lo) / (hi - lo) if hi > lo else plot_w / 2)

    base = HEIGHT - MARGIN["bottom"]
    for v in x_values:
        parts.append(f'<text x="{x(v):.1f}" y="{base + 16}" text-anchor="middle">{v:g}</text>')
    for s, values in enumerate(series.values()):
        color = PALETTE[s % len(PALETTE)]
        points = [(x(xv), y(v)) for xv, v in zip(x_values, values) if v is not None]
        if points:
            coords = " ".join(f"{px:.1f},{py:.1f}" for px, py in points)
            parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
            parts += [f'<circle cx="{px:.1f}" cy="{py:.1f}" r="3" fill="{color}"/>' for px, py in points]
    parts += _legend(list(series))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(svg: str, path: Path) -> None:
    try:
        Path(path).write_text(svg, encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


# ── training curves ───────────────────────────────────────────────────────────

def read_epoch_log(path: Path) -> List[EpochLog]:
    try:
        with open(path, newline="", encoding="utf-8") as fp:
            return [
                EpochLog(
                    epoch=int(r["epoch"]),
                    train_loss=float(r["train_loss"]),
                    train_miou=float(r["train_miou"]),
                    val_miou=float(r["val_miou"]) if r["val_miou"] else None,
                )
                for r in csv.DictReader(fp)
            ]
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e


def curves_svg(epochs: Sequence[EpochLog], title: str = "Training curves") -> str:
    """Train and validation mIoU per epoch"""
    return line_chart_svg(
        [e.epoch for e in epochs],
        {"train mIoU": [e.train_miou for e in epochs], "val mIoU": [e.val_miou for e in epochs]},
        title=title,
        x_label="epoch",
    )

"""Static SVG timelines: ground truth, per-stage retrievals and final prediction."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

from .timeline import Moment

WIDTH = 800
LEFT = 110
ROW_H = 22
BAR_H = 14

COLORS = {"gt": "#2e7d32", "coarse": "#9e9e9e", "fine": "#1565c0"}


def _x(t: float, duration: float) -> float:
    return LEFT + (WIDTH - LEFT - 10) * (t / duration if duration > 0 else 0.0)


def timeline_svg(query_id: str, query: str, duration: float, gt: Sequence[Moment],
                 record: dict) -> str:
    rows: list[tuple[str, str, list[tuple[float, float]]]] = [
        ("ground truth", "gt", [(m.start, m.end) for m in gt])]
    for stage in sorted({r["stage"] for r in record.get("stage_trace", []) if r["kind"] == "coarse"}):
        spans = [tuple(s) for r in record["stage_trace"]
                 if r["stage"] == stage and r["kind"] == "coarse" for s in r["spans"]]
        rows.append((f"stage {stage}", "coarse", spans))
    rows.append(("prediction", "fine", [(m.start, m.end) for m in record["moments"]]))

    height = 40 + ROW_H * len(rows) + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
           f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">',
           f'<title>{escape(query_id)}</title>',
           f'<text x="4" y="16" font-size="12">{escape(query_id)}: {escape(query)}</text>']
    for k, (label, kind, spans) in enumerate(rows):
        y = 30 + k * ROW_H
        out.append(f'<g class="band {kind}">')
        out.append(f'<text x="4" y="{y + BAR_H - 3}">{escape(label)}</text>')
        out.append(f'<rect x="{LEFT}" y="{y}" width="{WIDTH - LEFT - 10}" height="{BAR_H}" '
                   f'fill="#f5f5f5"/>')
        for a, b in spans:
            x0, x1 = _x(a, duration), _x(b, duration)
            out.append(f'<rect x="{x0:.2f}" y="{y}" width="{max(x1 - x0, 1.0):.2f}" height="{BAR_H}" '
                       f'fill="{COLORS[kind]}"><title>{a:g}-{b:g}s</title></rect>')
        out.append("</g>")
    axis_y = 30 + len(rows) * ROW_H + 12
    out.append(f'<text x="{LEFT}" y="{axis_y}">0s</text>')
    out.append(f'<text x="{WIDTH - 10}" y="{axis_y}" text-anchor="end">{duration:g}s</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

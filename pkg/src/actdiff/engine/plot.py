"""Minimal SVG timeline plots: one colored band per label row."""
from __future__ import annotations

from html import escape

from ..metrics import extract_segments

# Tableau-like palette; classes beyond it cycle.
PALETTE = ("#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
           "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac")


def timeline_svg(rows: dict, n_obs: int | None = None, width: int = 800, row_height: int = 24,
                 names=None, title: str = "") -> str:
    """Render ``{row name: label sequence}`` as stacked bands.

    All rows share one frame axis (the longest row). A dashed divider is drawn
    at ``n_obs`` when given, separating observed from anticipated frames.
    """
    if not rows:
        raise ValueError("nothing to plot")
    label_w, pad = 60, 6
    T = max(len(r) for r in rows.values())
    scale = (width - label_w - pad) / max(T, 1)
    top = 20 if title else pad
    height = top + len(rows) * (row_height + pad) + pad
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">']
    if title:
        out.append(f'<text x="{pad}" y="14">{escape(title)}</text>')
    for i, (name, labels) in enumerate(rows.items()):
        y = top + i * (row_height + pad)
        out.append(f'<text x="{pad}" y="{y + row_height * 0.7:.1f}">{escape(str(name))}</text>')
        for seg in extract_segments(labels):
            color = PALETTE[seg.label % len(PALETTE)]
            tip = names[seg.label] if names is not None else str(seg.label)
            out.append(
                f'<rect x="{label_w + seg.start * scale:.2f}" y="{y}" width="{(seg.end - seg.start) * scale:.2f}" '
                f'height="{row_height}" fill="{color}"><title>{escape(tip)} [{seg.start}, {seg.end})</title></rect>'
            )
    if n_obs is not None:
        x = label_w + n_obs * scale
        out.append(f'<line x1="{x:.2f}" y1="{top - 2}" x2="{x:.2f}" y2="{height - pad + 2}" '
                   f'stroke="black" stroke-width="1.5" stroke-dasharray="4 3"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

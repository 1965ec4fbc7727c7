"""SVG rendering of precision/recall curves."""
from __future__ import annotations

from xml.sax.saxutils import escape

WIDTH, HEIGHT, MARGIN = 480, 400, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _xy(recall, precision):
    x = MARGIN + recall * (WIDTH - 2 * MARGIN)
    y = HEIGHT - MARGIN - precision * (HEIGHT - 2 * MARGIN)
    return f"{x:.3f},{y:.3f}"


def pr_svg(curves, title="Precision-recall"):
    """``curves`` is a list of ``(label, recalls, precisions)``; returns SVG text.

    Recall runs along x and precision along y, both on [0, 1].
    """
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>']
    x0, x1 = MARGIN, WIDTH - MARGIN
    y0, y1 = HEIGHT - MARGIN, MARGIN
    out.append(f'<polyline points="{x0},{y1} {x0},{y0} {x1},{y0}" fill="none" stroke="black"/>')
    for i in range(11):
        v = i / 10
        gx, gy = _xy(v, v).split(",")
        out.append(f'<text x="{gx}" y="{y0 + 16}" text-anchor="middle" font-size="10">{v:.1f}</text>')
        out.append(f'<text x="{x0 - 6}" y="{float(gy) + 3:.3f}" text-anchor="end" font-size="10">{v:.1f}</text>')
    out.append(f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">Recall</text>')
    out.append(f'<text x="14" y="{HEIGHT / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 14 {HEIGHT / 2:.1f})">Precision</text>')
    for i, (label, recalls, precisions) in enumerate(curves):
        colour = PALETTE[i % len(PALETTE)]
        pts = " ".join(_xy(r, p) for r, p in zip(recalls, precisions))
        out.append(f'<polyline class="pr" points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5">'
                   f'<title>{escape(label)}</title></polyline>')
        ly = MARGIN + 14 + 14 * i
        out.append(f'<line x1="{x1 - 120}" y1="{ly}" x2="{x1 - 100}" y2="{ly}" stroke="{colour}"/>')
        out.append(f'<text x="{x1 - 95}" y="{ly + 4}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_polylines(svg_text):
    """Recover ``(label, recalls, precisions)`` from :func:`pr_svg` output."""
    import xml.etree.ElementTree as ET

    ns = "{http://www.w3.org/2000/svg}"
    root = ET.fromstring(svg_text)
    curves = []
    for pl in root.iter(f"{ns}polyline"):
        if pl.get("class") != "pr":
            continue
        label = pl.find(f"{ns}title").text or ""
        rs, ps = [], []
        for pt in pl.get("points").split():
            x, y = (float(v) for v in pt.split(","))
            rs.append((x - MARGIN) / (WIDTH - 2 * MARGIN))
            ps.append((HEIGHT - MARGIN - y) / (HEIGHT - 2 * MARGIN))
        curves.append((label, rs, ps))
    return curves

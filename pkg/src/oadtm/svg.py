"""Static SVG bar chart of per-class scores."""

from __future__ import annotations

from xml.sax.saxutils import escape


def bar_chart(values: dict, title: str = "", ylabel: str = "", width: int = 640, height: int = 320) -> str:
    left, right, top, bottom = 56, 16, 36, 40
    plot_w = width - left - right
    plot_h = height - top - bottom
    keys = list(values)
    n = max(1, len(keys))
    slot = plot_w / n
    bar = slot * 0.7
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">'
        f"{escape(title)}</text>",
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = top + plot_h * (1 - tick)
        parts.append(
            f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="10">'
            f"{tick:.2f}</text>"
        )
    for i, key in enumerate(keys):
        v = values[key]
        v = 0.0 if v != v else max(0.0, min(1.0, float(v)))  # nan -> empty bar
        x = left + i * slot + (slot - bar) / 2
        h = plot_h * v
        parts.append(f'<rect x="{x:.1f}" y="{top + plot_h - h:.1f}" width="{bar:.1f}" height="{h:.1f}" fill="#4878a8"/>')
        parts.append(
            f'<text x="{x + bar / 2:.1f}" y="{top + plot_h + 14}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="10">{escape(str(key))}</text>'
        )
    if ylabel:
        parts.append(
            f'<text x="14" y="{top + plot_h / 2:.1f}" transform="rotate(-90 14 {top + plot_h / 2:.1f})" '
            f'text-anchor="middle" font-family="sans-serif" font-size="11">{escape(ylabel)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

"""CSV and static SVG emission for allocation proportions and RF series."""

_PALETTE = ["#4878cf", "#ee854a", "#6acc65", "#d65f5f", "#956cb4", "#8c613c"]


def plan_proportions(plan):
    """Rows (k, [channels...], [fractions...]) for every block in order."""
    rows = []
    for k in sorted(plan.rows):
        counts = plan.rows[k]
        total = sum(counts)
        rows.append((k, list(counts), [c / total for c in counts]))
    return rows


def proportions_csv(plan) -> str:
    lines = ["k,scale,channels,proportion"]
    for k, counts, fracs in plan_proportions(plan):
        for s, c, f in zip(plan.scales, counts, fracs):
            lines.append(f"{k},{s},{c},{f:.6f}")
    return "\n".join(lines) + "\n"


def _svg_header(width, height, title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<title>{title}</title>',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]


def proportions_svg(plan, width=720, height=360) -> str:
    """Stacked per-block bars of the per-scale channel shares."""
    rows = plan_proportions(plan)
    margin_l, margin_r, margin_t, margin_b = 50, 110, 30, 40
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b
    bar_w = plot_w / max(len(rows), 1)
    parts = _svg_header(width, height, "per-scale channel proportion by block")
    for i, (k, _counts, fracs) in enumerate(rows):
        x = margin_l + i * bar_w
        y = margin_t
        for si, f in enumerate(fracs):
            h = f * plot_h
            color = _PALETTE[si % len(_PALETTE)]
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w * 0.9:.1f}" '
                f'height="{h:.1f}" fill="{color}"/>')
            y += h
        if len(rows) <= 20 or i % 5 == 0:
            parts.append(
                f'<text x="{x + bar_w * 0.45:.1f}" y="{height - margin_b + 15}" '
                f'font-size="10" text-anchor="middle">{k}</text>')
    for si, s in enumerate(plan.scales):
        ly = margin_t + 16 * si
        color = _PALETTE[si % len(_PALETTE)]
        parts.append(f'<rect x="{width - margin_r + 10}" y="{ly}" width="12" '
                     f'height="12" fill="{color}"/>')
        parts.append(f'<text x="{width - margin_r + 27}" y="{ly + 10}" '
                     f'font-size="11">scale {s}</text>')
    parts.append(f'<text x="{margin_l + plot_w / 2:.0f}" y="{height - 8}" '
                 f'font-size="11" text-anchor="middle">block index</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def rf_series_svg(rows, width=720, height=360, reference=None) -> str:
    """Min/max receptive-field extent against block index, two polylines."""
    margin_l, margin_r, margin_t, margin_b = 60, 120, 30, 40
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b
    xs = [k for k, _, _ in rows]
    tops = [float(hi) for _, _, hi in rows]
    y_max = max(tops + ([reference] if reference else [])) * 1.05
    x_span = max(xs) - min(xs) or 1

    def px(k):
        return margin_l + (k - min(xs)) / x_span * plot_w

    def py(v):
        return margin_t + plot_h - float(v) / y_max * plot_h

    parts = _svg_header(width, height, "receptive-field interval by block")
    for label, idx, color in (("min rf", 1, _PALETTE[0]), ("max rf", 2, _PALETTE[3])):
        pts = " ".join(f"{px(r[0]):.1f},{py(r[idx]):.1f}" for r in rows)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        ly = margin_t + 16 * (idx - 1)
        parts.append(f'<rect x="{width - margin_r + 10}" y="{ly}" width="12" '
                     f'height="12" fill="{color}"/>')
        parts.append(f'<text x="{width - margin_r + 27}" y="{ly + 10}" '
                     f'font-size="11">{label}</text>')
    if reference:
        parts.append(f'<line x1="{margin_l}" y1="{py(reference):.1f}" '
                     f'x2="{margin_l + plot_w}" y2="{py(reference):.1f}" '
                     f'stroke="#888888" stroke-dasharray="4 3"/>')
        parts.append(f'<text x="{width - margin_r + 10}" y="{py(reference) + 4:.1f}" '
                     f'font-size="10">input extent {reference}</text>')
    parts.append(f'<text x="{margin_l + plot_w / 2:.0f}" y="{height - 8}" '
                 f'font-size="11" text-anchor="middle">block index</text>')
    for frac in (0.0, 0.5, 1.0):
        v = y_max * frac
        parts.append(f'<text x="{margin_l - 8}" y="{py(v) + 4:.1f}" font-size="10" '
                     f'text-anchor="end">{v:.0f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(plan, out_dir, rf_rows=None, rf_reference=None):
    """Write proportions CSV+SVG and, when RF rows are given, the RF CSV+SVG.
    Returns the written paths."""
    import os

    from .rf import rf_report_csv

    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    def put(name, text):
        p = os.path.join(out_dir, name)
        with open(p, "w", encoding="utf-8") as f:
            f.write(text)
        paths[name] = p

    put("proportions.csv", proportions_csv(plan))
    put("proportions.svg", proportions_svg(plan))
    if rf_rows:
        put("rf.csv", rf_report_csv(rf_rows))
        put("rf.svg", rf_series_svg(rf_rows, reference=rf_reference))
    return paths

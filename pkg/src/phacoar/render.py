"""SVG overlays of guidance cues in image pixel coordinates."""
import numpy as np

from .cues import Circle, EllipseArc, Segment


def _f(x):
    return f"{float(x):.3f}"


def _ellipse_svg(e, color, width):
    return (f'<ellipse cx="{_f(e.ox)}" cy="{_f(e.oy)}" rx="{_f(e.l_major)}" ry="{_f(e.l_minor)}" '
            f'transform="rotate({_f(np.degrees(e.phi))} {_f(e.ox)} {_f(e.oy)})" '
            f'fill="none" stroke="{color}" stroke-width="{width}"/>')


def _arc_svg(arc, color, width):
    e = arc.ellipse
    p0 = e.point_at(arc.t_start)
    p1 = e.point_at(arc.t_end)
    large = 1 if arc.t_end - arc.t_start > np.pi else 0
    # increasing parameter runs clockwise on screen, which is SVG's positive sweep
    d = (f"M {_f(p0[0])} {_f(p0[1])} A {_f(e.l_major)} {_f(e.l_minor)} {_f(np.degrees(e.phi))} "
         f"{large} 1 {_f(p1[0])} {_f(p1[1])}")
    return f'<path d="{d}" fill="none" stroke="{color}" stroke-width="{width + 1}"/>'


def cue_svg(cue, stroke_width=2):
    """One SVG element for a cue."""
    g = cue.geometry
    color = cue.color or "#ffffff"
    if isinstance(g, Segment):
        return (f'<line x1="{_f(g.start[0])}" y1="{_f(g.start[1])}" x2="{_f(g.end[0])}" '
                f'y2="{_f(g.end[1])}" stroke="{color}" stroke-width="{stroke_width}"/>')
    if isinstance(g, Circle):
        return (f'<circle cx="{_f(g.center[0])}" cy="{_f(g.center[1])}" r="{_f(g.radius)}" '
                f'fill="none" stroke="{color}" stroke-width="{stroke_width}"/>')
    if isinstance(g, EllipseArc):
        return _arc_svg(g, color, stroke_width)
    return _ellipse_svg(g, color, stroke_width)


def overlay_svg(cues, width, height, background=None, label=None):
    """Complete SVG document with the cues drawn over an optional background href."""
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
           f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">']
    if background:
        out.append(f'<image href="{background}" x="0" y="0" width="{width}" height="{height}"/>')
    for cue in cues:
        out.append(f'<g class="{cue.kind}">{cue_svg(cue)}</g>')
    if label:
        out.append(f'<text x="4" y="14" font-family="monospace" font-size="12" fill="#ffffff">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

"""Guidance overlays built from the fitted limbus ellipse and the eye rotation.

Directions are degrees, counter-clockwise positive in image coordinates
(increasing ``atan2(y, x)`` with y pointing down). ``CueConfig.flip``
mirrors the incision guideline offsets for the other operating side.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import MissingInput, ValidationError

FLC, PIG, PIC, SIG, SIC, CCR, RRL = "FLC", "PIG", "PIC", "SIG", "SIC", "CCR", "RRL"
CUE_ORDER = (FLC, CCR, PIC, SIC, PIG, SIG, RRL)
GEOMETRY_KIND = {FLC: "ellipse", PIG: "segment", SIG: "segment", RRL: "segment",
                 PIC: "arc", SIC: "arc", CCR: "circle"}
ROTATION_CUES = frozenset({RRL, PIG, PIC, SIG, SIC})

PRIMARY, SECONDARY = "primary", "secondary"
GUIDE_ANGLE = {PRIMARY: 95.0, SECONDARY: 175.0}

DEFAULT_PHASE_CUES = (
    (FLC, PIG, PIC, SIG, SIC, RRL),   # incision
    (FLC,),                           # viscous agent injection
    (FLC, CCR),                       # capsulorhexis
    (FLC,),                           # hydrodissection
    (FLC,),                           # phacoemulsification
    (FLC,),                           # irrigation
    (FLC,),                           # capsule polishing
    (FLC, RRL),                       # lens implant
    (FLC,),                           # viscous agent removal
    (FLC,),                           # tonifying
)

DEFAULT_COLORS = {FLC: "#00c853", PIG: "#ffab00", PIC: "#ff6d00", SIG: "#2979ff",
                  SIC: "#00b0ff", CCR: "#d500f9", RRL: "#ff1744"}


@dataclass(frozen=True)
class Segment:
    start: tuple
    end: tuple

    @property
    def length(self):
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    @property
    def direction_deg(self):
        return float(np.degrees(np.arctan2(self.end[1] - self.start[1], self.end[0] - self.start[0])))

    def translated(self, dx, dy):
        return Segment((self.start[0] + dx, self.start[1] + dy), (self.end[0] + dx, self.end[1] + dy))


@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float


@dataclass(frozen=True)
class EllipseArc:
    """Part of ``ellipse`` between parameters ``t_start < t_end`` (radians).

    ``t_center`` is the arc-length midpoint, which differs from the mean
    parameter on non-circular ellipses.
    """
    ellipse: object
    t_start: float
    t_end: float
    t_center: float = None

    def sample(self, n=64):
        return self.ellipse.point_at(np.linspace(self.t_start, self.t_end, n))

    @property
    def midpoint(self):
        t = self.t_center if self.t_center is not None else 0.5 * (self.t_start + self.t_end)
        return self.ellipse.point_at(t)

    def length(self):
        return arc_length(self.ellipse, self.t_start, self.t_end)


@dataclass(frozen=True)
class VisualCue:
    kind: str
    geometry: object
    color: str = ""

    def __post_init__(self):
        if self.kind not in GEOMETRY_KIND:
            raise ValidationError(f"unknown cue kind {self.kind!r}")

    def to_dict(self):
        g = self.geometry
        if isinstance(g, Segment):
            geo = {"start": list(g.start), "end": list(g.end)}
        elif isinstance(g, Circle):
            geo = {"center": list(g.center), "radius": g.radius}
        elif isinstance(g, EllipseArc):
            geo = {"ellipse": g.ellipse.to_dict(), "t_start": g.t_start, "t_end": g.t_end,
                   "t_center": g.t_center}
        else:
            geo = {"ellipse": g.to_dict()}
        return {"kind": self.kind, "type": GEOMETRY_KIND[self.kind], "color": self.color, **geo}


@dataclass
class CueConfig:
    """Cue construction settings.

    Incision arc lengths are fractions of ``l_major + l_minor`` unless an
    explicit pixel length is given.
    """
    pic_fraction: float = 0.25
    sic_fraction: float = 0.12
    pic_px: float = None
    sic_px: float = None
    flip: bool = False
    colors: dict = field(default_factory=lambda: dict(DEFAULT_COLORS))

    def arc_px(self, ellipse, which):
        px, frac = (self.pic_px, self.pic_fraction) if which == PRIMARY else (self.sic_px, self.sic_fraction)
        return float(px) if px is not None else frac * (ellipse.l_major + ellipse.l_minor)


class PhaseCueMap:
    """Cue kinds shown in each phase."""

    def __init__(self, entries=DEFAULT_PHASE_CUES):
        self.entries = [tuple(e) for e in entries]
        for e in self.entries:
            bad = set(e) - set(CUE_ORDER)
            if bad:
                raise ValidationError(f"unknown cue kinds {sorted(bad)}")

    def __len__(self):
        return len(self.entries)

    def kinds(self, phase):
        if not 0 <= int(phase) < len(self.entries):
            raise ValidationError(f"phase {phase} not covered by the cue map")
        return self.entries[int(phase)]

    @classmethod
    def parse(cls, text):
        """Parse ``"FLC,RRL;FLC;..."`` (one ``;``-separated entry per phase)."""
        return cls([tuple(k.strip() for k in part.split(",") if k.strip()) for part in text.split(";")])

    def format(self):
        return ";".join(",".join(e) for e in self.entries)


def rrl(ellipse, theta_deg):
    """Rotation reference line through the centre, length ``1.2 * l_major``."""
    half = 0.6 * ellipse.l_major
    a = np.deg2rad(theta_deg)
    dx, dy = half * np.cos(a), half * np.sin(a)
    return Segment((ellipse.ox - dx, ellipse.oy - dy), (ellipse.ox + dx, ellipse.oy + dy))


def guideline_direction(theta_deg, which=PRIMARY, flip=False):
    offset = GUIDE_ANGLE[which]
    return theta_deg - offset if flip else theta_deg + offset


def incision_guideline(ellipse, theta_deg, which=PRIMARY, flip=False):
    """Ray from the centre at the reference line direction plus 95 or 175 degrees."""
    a = np.deg2rad(guideline_direction(theta_deg, which, flip))
    length = 0.3 * (ellipse.l_major + ellipse.l_minor)
    return Segment((ellipse.ox, ellipse.oy),
                   (ellipse.ox + length * np.cos(a), ellipse.oy + length * np.sin(a)))


def ray_parameter(ellipse, direction_deg):
    """Ellipse parameter ``t`` where a centre ray at ``direction_deg`` meets the curve."""
    beta = np.deg2rad(direction_deg) - ellipse.phi
    return float(np.arctan2(ellipse.l_major * np.sin(beta), ellipse.l_minor * np.cos(beta)))


def _speed(ellipse, t):
    return np.hypot(ellipse.l_major * np.sin(t), ellipse.l_minor * np.cos(t))


def arc_length(ellipse, t0, t1):
    """Arc length along the ellipse between parameters ``t0`` and ``t1``."""
    val, _ = quad(lambda t: _speed(ellipse, t), t0, t1, epsabs=1e-10, epsrel=1e-12, limit=200)
    return float(val)


def perimeter(ellipse):
    return arc_length(ellipse, 0.0, 2.0 * np.pi)


def _advance(ellipse, t0, dist, sign):
    # parameter reached after walking ``dist`` along the curve from t0
    if dist <= 0:
        return t0
    hi = 1.01 * dist / min(ellipse.l_major, ellipse.l_minor)
    f = lambda dt: arc_length(ellipse, t0, t0 + sign * dt) * sign - dist
    return t0 + sign * brentq(f, 0.0, hi, xtol=1e-13, rtol=1e-14)


def incision_curve(ellipse, direction_deg, arc_len_px):
    """Arc on the ellipse of total length ``arc_len_px``, bisected by the guideline ray."""
    if arc_len_px <= 0 or arc_len_px >= perimeter(ellipse):
        raise ValidationError("arc length must lie in (0, perimeter)")
    t0 = ray_parameter(ellipse, direction_deg)
    half = 0.5 * arc_len_px
    return EllipseArc(ellipse, _advance(ellipse, t0, half, -1.0), _advance(ellipse, t0, half, 1.0), t0)


def ccr(ellipse):
    """Capsulorhexis range: circle of diameter ``(l_major + l_minor) / 2``."""
    return Circle((ellipse.ox, ellipse.oy), 0.25 * (ellipse.l_major + ellipse.l_minor))


def build_cue(kind, ellipse, theta_deg=None, cfg=None):
    cfg = cfg or CueConfig()
    color = cfg.colors.get(kind, "")
    if kind == FLC:
        return VisualCue(FLC, ellipse, color)
    if kind == CCR:
        return VisualCue(CCR, ccr(ellipse), color)
    if theta_deg is None:
        raise MissingInput(f"{kind} needs the rotation angle")
    if kind == RRL:
        return VisualCue(RRL, rrl(ellipse, theta_deg), color)
    which = PRIMARY if kind in (PIG, PIC) else SECONDARY
    if kind in (PIG, SIG):
        return VisualCue(kind, incision_guideline(ellipse, theta_deg, which, cfg.flip), color)
    direction = guideline_direction(theta_deg, which, cfg.flip)
    return VisualCue(kind, incision_curve(ellipse, direction, cfg.arc_px(ellipse, which)), color)


def cues_for_phase(phase, ellipse, theta_deg=None, cue_map=None, cfg=None, skip_missing=False):
    """Build the cues configured for ``phase`` in a fixed drawing order.

    With ``skip_missing`` the rotation-dependent cues are silently dropped
    when ``theta_deg`` is unavailable instead of raising ``MissingInput``.
    """
    cue_map = PhaseCueMap() if cue_map is None else cue_map
    wanted = set(cue_map.kinds(phase))
    out = []
    for kind in CUE_ORDER:
        if kind not in wanted:
            continue
        if theta_deg is None and kind in ROTATION_CUES and skip_missing:
            continue
        out.append(build_cue(kind, ellipse, theta_deg, cfg))
    return out


def cue_from_dict(d):
    """Inverse of :meth:`VisualCue.to_dict`."""
    from .ellipse import EllipseParams
    kind = GEOMETRY_KIND.get(d.get("kind"))
    if kind == "segment":
        geo = Segment(tuple(d["start"]), tuple(d["end"]))
    elif kind == "circle":
        geo = Circle(tuple(d["center"]), float(d["radius"]))
    elif kind == "arc":
        geo = EllipseArc(EllipseParams(**d["ellipse"]), float(d["t_start"]), float(d["t_end"]),
                         d.get("t_center"))
    elif kind == "ellipse":
        geo = EllipseParams(**d["ellipse"])
    else:
        raise ValidationError(f"unknown cue kind {d.get('kind')!r}")
    return VisualCue(d["kind"], geo, d.get("color", ""))

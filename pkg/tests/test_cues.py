import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phacoar.cues import (CCR, CUE_ORDER, FLC, PIC, PIG, RRL, SIC, SIG, Circle, CueConfig,
                          EllipseArc, PhaseCueMap, Segment, arc_length, ccr, cue_from_dict,
                          cues_for_phase, incision_curve, incision_guideline, perimeter,
                          ray_parameter, rrl)
from phacoar.ellipse import EllipseParams, residuals
from phacoar.errors import MissingInput, ValidationError
from phacoar.render import cue_svg, overlay_svg

ellipses = st.builds(
    lambda ox, oy, a, r, phi: EllipseParams(ox, oy, a, a * r, phi),
    st.floats(0, 640), st.floats(0, 480), st.floats(20, 200), st.floats(0.4, 1.0),
    st.floats(0, np.pi))
angles = st.floats(-180, 180)


def test_rrl_examples():
    e = EllipseParams(320, 240, 100, 80, 0.3)
    s = rrl(e, 0.0)
    assert s.start == pytest.approx((260, 240)) and s.end == pytest.approx((380, 240))
    v = rrl(e, 90.0)
    assert v.start[0] == pytest.approx(v.end[0]) and v.length == pytest.approx(120)


def test_guideline_examples():
    e = EllipseParams(0, 0, 100, 80, 0)
    g = incision_guideline(e, 0.0, "primary")
    assert g.length == pytest.approx(54) and g.direction_deg == pytest.approx(95)
    assert incision_guideline(e, 0.0, "secondary").direction_deg == pytest.approx(175)
    assert incision_guideline(e, 0.0, "primary", flip=True).direction_deg == pytest.approx(-95)


def test_incision_curve_on_circle():
    e = EllipseParams(0, 0, 100, 100, 0)
    arc = incision_curve(e, 30.0, 40.0)
    assert arc.t_end - arc.t_start == pytest.approx(0.4, abs=1e-9)
    assert 0.5 * (arc.t_start + arc.t_end) == pytest.approx(np.deg2rad(30), abs=1e-9)


def test_ccr_examples():
    assert ccr(EllipseParams(0, 0, 100, 80, 0)).radius == pytest.approx(45)
    assert ccr(EllipseParams(0, 0, 30, 30, 0)).radius == pytest.approx(15)


@settings(max_examples=40, deadline=None)
@given(ellipses, angles, st.floats(0.02, 0.4))
def test_arc_properties(e, direction, frac):
    length = frac * perimeter(e)
    arc = incision_curve(e, direction, length)
    assert residuals(e, arc.sample(32)).max() < 1e-6
    assert arc.length() == pytest.approx(length, rel=1e-7)
    # symmetric about the guideline by arc length
    assert arc_length(e, arc.t_start, arc.t_center) == pytest.approx(length / 2, rel=1e-7)
    # the midpoint lies on the guideline ray
    mx, my = arc.midpoint - e.center
    ux, uy = np.cos(np.deg2rad(direction)), np.sin(np.deg2rad(direction))
    assert abs(mx * uy - my * ux) < 1e-6
    assert mx * ux + my * uy > 0


@settings(max_examples=40, deadline=None)
@given(ellipses, angles)
def test_ray_parameter_hits_direction(e, direction):
    p = e.point_at(ray_parameter(e, direction)) - e.center
    assert np.degrees(np.arctan2(p[1], p[0])) == pytest.approx(direction, abs=1e-7) or \
        abs(abs(direction) - 180) < 1e-7


@settings(max_examples=30, deadline=None)
@given(ellipses, angles, st.floats(-100, 100), st.floats(-100, 100), st.floats(-30, 30))
def test_equivariance(e, theta, dx, dy, delta):
    base = cues_for_phase(0, e, theta)
    moved = cues_for_phase(0, e.translated(dx, dy), theta)
    for a, b in zip(base, moved):
        if isinstance(a.geometry, Segment):
            assert np.allclose(np.subtract(b.geometry.start, a.geometry.start), (dx, dy), atol=1e-8)
            assert np.allclose(np.subtract(b.geometry.end, a.geometry.end), (dx, dy), atol=1e-8)
        elif isinstance(a.geometry, EllipseArc):
            assert np.allclose(b.geometry.midpoint - a.geometry.midpoint, (dx, dy), atol=1e-6)
    turned = cues_for_phase(0, e, theta + delta)
    for a, b in zip(base, turned):
        if isinstance(a.geometry, Segment):
            diff = (b.geometry.direction_deg - a.geometry.direction_deg - delta + 180) % 360 - 180
            assert abs(diff) < 1e-9


def test_default_map_and_order():
    e = EllipseParams(100, 100, 60, 50, 0.2)
    kinds = [c.kind for c in cues_for_phase(0, e, 5.0)]
    assert set(kinds) == {FLC, RRL, PIG, PIC, SIG, SIC}
    assert kinds == [k for k in CUE_ORDER if k in kinds]
    assert [c.kind for c in cues_for_phase(2, e)] == [FLC, CCR]
    assert [c.kind for c in cues_for_phase(7, e, 0.0)] == [FLC, RRL]
    assert len(PhaseCueMap()) == 10


def test_empty_map_entry_and_missing_theta():
    e = EllipseParams(100, 100, 60, 50, 0.2)
    cmap = PhaseCueMap.parse("FLC,RRL;;CCR")
    assert cues_for_phase(1, e, 0.0, cmap) == []
    with pytest.raises(MissingInput):
        cues_for_phase(0, e, None, cmap)
    assert [c.kind for c in cues_for_phase(0, e, None, cmap, skip_missing=True)] == [FLC]
    assert PhaseCueMap.parse(cmap.format()).entries == cmap.entries
    with pytest.raises(ValidationError):
        PhaseCueMap.parse("FLC,XYZ")
    with pytest.raises(ValidationError):
        cues_for_phase(5, e, 0.0, cmap)


def test_cue_dict_roundtrip_and_svg():
    e = EllipseParams(100, 100, 60, 50, 0.2)
    cues = cues_for_phase(0, e, 12.0, cfg=CueConfig(colors={k: "#123456" for k in CUE_ORDER}))
    cues += cues_for_phase(2, e)
    for c in cues:
        back = cue_from_dict(c.to_dict())
        assert back.to_dict() == c.to_dict()
        assert c.kind in overlay_svg([c], 200, 200) and cue_svg(c).startswith("<")
    assert isinstance(cues[-1].geometry, Circle)
    doc = overlay_svg(cues, 200, 200, label="frame 0")
    assert doc.count("<g class=") == len(cues) and doc.rstrip().endswith("</svg>")

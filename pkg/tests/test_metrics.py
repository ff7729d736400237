import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phacoar.errors import LengthMismatch, MissingColor, ShapeMismatch
from phacoar.metrics import (ConfusionMatrix, dice, phase_metrics, phase_palette, phase_runs,
                             ribbon_export, rotation_error, sequence_metrics)

labels = st.lists(st.integers(0, 4), min_size=0, max_size=60)


def runs_by_scan(seq):
    """Direct left-to-right scan, independent of the vectorised encoder."""
    out = []
    for i, v in enumerate(seq):
        if out and out[-1][2] == v:
            out[-1][1] = i + 1
        else:
            out.append([i, i + 1, v])
    return [tuple(r) for r in out]


def test_hand_example():
    gt = [0, 0, 0, 1, 1, 1]
    pred = [0, 0, 1, 1, 1, 1]
    m = phase_metrics(pred, gt)
    assert m["acc"] == pytest.approx(500 / 6)
    assert m["pre"] == pytest.approx(100 * (1 + 3 / 4) / 2)
    assert m["rec"] == pytest.approx(100 * (2 / 3 + 1) / 2)
    assert m["jac"] == pytest.approx(100 * (2 / 3 + 3 / 4) / 2)


def test_perfect_and_constant_prediction():
    gt = np.repeat(np.arange(4), 5)
    assert all(v == 100.0 for v in phase_metrics(gt, gt).values())
    m = phase_metrics(np.zeros(10, int), [0] * 5 + [1] * 5)
    assert m["acc"] == 50.0 and m["rec"] == 50.0
    assert m["pre"] == 25.0  # phase 1 never predicted
    with pytest.raises(LengthMismatch):
        phase_metrics([0, 1], [0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=50))
def test_metrics_bounded_and_consistent(pairs):
    pred, gt = (np.array(v) for v in zip(*pairs))
    m = phase_metrics(pred, gt, 4)
    assert all(0.0 <= v <= 100.0 for v in m.values())
    assert m["acc"] == pytest.approx(100 * np.mean(pred == gt))
    cm = ConfusionMatrix.from_labels(pred, gt, 4)
    assert cm.total == len(pairs)
    assert np.array_equal(ConfusionMatrix.from_csv(cm.to_csv()).counts, cm.counts)


def test_sequence_metrics_mean_sd():
    a = ([0, 0, 1, 1], [0, 0, 1, 1])
    b = ([0, 0, 0, 0], [0, 0, 1, 1])
    s = sequence_metrics([a, b])
    assert s["acc"]["mean"] == 75.0 and s["acc"]["sd"] == 25.0


def test_dice_cases():
    a = np.zeros((4, 4), bool)
    assert dice(a, a) == 100.0
    b = a.copy()
    b[0, :2] = True
    assert dice(a, b) == 0.0
    c = a.copy()
    c[0, 1:3] = True
    assert dice(b, c) == pytest.approx(50.0)
    assert dice(b, b) == 100.0
    with pytest.raises(ShapeMismatch):
        dice(a, np.zeros((3, 4)))


def test_rotation_error_wraps():
    assert rotation_error([179.0], [-179.0]) == (pytest.approx(2.0), 0.0)
    mean, sd = rotation_error([1.0, -3.0], [0.0, 0.0])
    assert (mean, sd) == (pytest.approx(2.0), pytest.approx(1.0))
    assert rotation_error([], []) == (0.0, 0.0)
    with pytest.raises(LengthMismatch):
        rotation_error([1.0], [1.0, 2.0])


@settings(max_examples=80, deadline=None)
@given(labels)
def test_phase_runs_matches_scan(seq):
    runs = phase_runs(seq)
    assert runs == runs_by_scan(seq)
    assert sum(e - s for s, e, _ in runs) == len(seq)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=40))
def test_ribbon_export_rects(pairs):
    pred, gt = (list(v) for v in zip(*pairs))
    svg, csv = ribbon_export(pred, gt, phase_palette(5))
    assert svg.count('class="pred"') == len(phase_runs(pred))
    assert svg.count('class="gt"') == len(phase_runs(gt))
    rows = csv.strip().splitlines()[1:]
    assert len(rows) == len(phase_runs(pred)) + len(phase_runs(gt))


def test_ribbon_errors():
    with pytest.raises(MissingColor):
        ribbon_export([0, 3], [0, 3], phase_palette(2))
    with pytest.raises(MissingColor):
        ribbon_export([0], [0], {0: ""})
    with pytest.raises(LengthMismatch):
        ribbon_export([0], [0, 0], phase_palette(2))


def test_palette_distinct():
    assert len(set(phase_palette(10))) == 10
    assert len(set(phase_palette(14))) == 14

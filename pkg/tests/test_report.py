import numpy as np

from phacoar import report
from phacoar.cues import cues_for_phase
from phacoar.ellipse import EllipseParams


def is_png(path):
    return path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_figures_are_written(tmp_path):
    pred, gt = [0, 0, 1, 1, 2], [0, 1, 1, 1, 2]
    report.ribbon_figure(tmp_path / "r.png", pred, gt, 3, names=["a", "b", "c"])
    report.rotation_figure(tmp_path / "rot.png", np.arange(5), [0, 1, 2, 3, 4], [0, 1, 2.5, 3, 179])
    report.confusion_figure(tmp_path / "c.png", [[2, 0], [1, 3]])
    report.loss_figure(tmp_path / "l.png", [1.0, 0.5, 0.2])
    e = EllipseParams(64, 64, 40, 32, 0.3)
    cues = cues_for_phase(0, e, 10.0) + cues_for_phase(2, e)
    report.overlay_figure(tmp_path / "o.png", np.full((128, 128), 0.4), cues, title="frame 0")
    for name in ("r.png", "rot.png", "c.png", "l.png", "o.png"):
        assert is_png(tmp_path / name)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c.png", "l.png", "o.png", "r.png", "rot.png"]

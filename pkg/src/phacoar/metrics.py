"""Evaluation metrics and phase-ribbon export."""
import io
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, MissingColor, ShapeMismatch


@dataclass
class ConfusionMatrix:
    """Counts with rows = ground truth, columns = prediction."""
    counts: np.ndarray

    @classmethod
    def from_labels(cls, pred, gt, k=None):
        pred = np.asarray(pred, dtype=int)
        gt = np.asarray(gt, dtype=int)
        if pred.shape != gt.shape:
            raise LengthMismatch(f"pred has {pred.size} frames, gt has {gt.size}")
        if k is None:
            k = int(max(pred.max(initial=-1), gt.max(initial=-1))) + 1
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (gt, pred), 1)
        return cls(counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def to_csv(self):
        k = len(self.counts)
        lines = ["gt\\pred," + ",".join(str(j) for j in range(k))]
        lines += [f"{i}," + ",".join(str(int(c)) for c in row) for i, row in enumerate(self.counts)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        rows = [line.split(",")[1:] for line in text.strip().splitlines()[1:]]
        return cls(np.array(rows, dtype=np.int64))

    def metrics(self):
        """Accuracy and macro precision/recall/Jaccard in percent.

        Macro averages cover the phases present in the ground truth. A
        present phase that is never predicted has precision 0.
        """
        c = self.counts.astype(float)
        tp = np.diag(c)
        gt_n = c.sum(axis=1)
        pred_n = c.sum(axis=0)
        present = gt_n > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            pre = np.where(pred_n > 0, tp / pred_n, 0.0)
            rec = tp / np.where(gt_n > 0, gt_n, 1.0)
            jac = tp / np.where(gt_n + pred_n - tp > 0, gt_n + pred_n - tp, 1.0)
        total = c.sum()
        return {
            "acc": float(100.0 * tp.sum() / total) if total else 0.0,
            "pre": 100.0 * float(pre[present].mean()) if present.any() else 0.0,
            "rec": 100.0 * float(rec[present].mean()) if present.any() else 0.0,
            "jac": 100.0 * float(jac[present].mean()) if present.any() else 0.0,
        }


def phase_metrics(pred, gt, k=None):
    """Acc, Pre, Rec and Jac (percent) for one labelled sequence."""
    if len(pred) != len(gt):
        raise LengthMismatch(f"pred has {len(pred)} frames, gt has {len(gt)}")
    if len(gt) == 0:
        raise LengthMismatch("empty sequence")
    return ConfusionMatrix.from_labels(pred, gt, k).metrics()


def sequence_metrics(pairs, k=None):
    """Mean and sd of each metric over ``[(pred, gt), ...]`` sequences."""
    rows = [phase_metrics(p, g, k) for p, g in pairs]
    return {m: {"mean": float(np.mean([r[m] for r in rows])), "sd": float(np.std([r[m] for r in rows]))}
            for m in ("acc", "pre", "rec", "jac")}


def dice(a, b):
    """Dice overlap in percent; two empty masks score 100.

    The empty/empty case is handled explicitly rather than with an
    additive smoothing term, so non-empty cases are exact.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    den = np.count_nonzero(a) + np.count_nonzero(b)
    if den == 0:
        return 100.0
    return 100.0 * 2.0 * np.count_nonzero(a & b) / den


def angle_difference(pred, gt):
    """Absolute difference on the circle, in ``[0, 180]`` degrees."""
    d = np.mod(np.asarray(pred, dtype=float) - np.asarray(gt, dtype=float), 360.0)
    return np.minimum(d, 360.0 - d)


def rotation_error(pred, gt):
    """Mean and sd of wrap-aware absolute rotation errors (degrees)."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"pred has {pred.size} angles, gt has {gt.size}")
    err = angle_difference(pred, gt)
    if err.size == 0:
        return 0.0, 0.0
    return float(err.mean()), float(err.std())


def phase_runs(labels):
    """Run-length encoding as ``[(start, end_exclusive, phase), ...]``."""
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        return []
    cut = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cut])
    ends = np.concatenate([cut, [labels.size]])
    return [(int(s), int(e), int(labels[s])) for s, e in zip(starts, ends)]


def phase_palette(k):
    """``k`` distinct hex colours (tab10, or tab20 beyond ten phases)."""
    from matplotlib import colormaps
    from matplotlib.colors import to_hex
    cmap = colormaps["tab10" if k <= 10 else "tab20"]
    return [to_hex(cmap(i % cmap.N)) for i in range(k)]


def _color(palette, phase):
    try:
        color = palette[phase]
    except (KeyError, IndexError):
        color = None
    if not color:
        raise MissingColor(f"no color for phase {phase}")
    return color


def ribbon_export(pred, gt, palette, width=800, height=24, gap=8):
    """Two aligned colour ribbons (prediction above, ground truth below).

    Returns ``(svg_text, csv_text)``; the CSV lists every run as
    ``ribbon,start,end,phase`` with ``end`` exclusive.
    """
    if len(pred) != len(gt):
        raise LengthMismatch(f"pred has {len(pred)} frames, gt has {len(gt)}")
    n = max(len(gt), 1)
    scale = width / n
    total_h = 2 * height + gap
    svg = io.StringIO()
    csv = io.StringIO()
    csv.write("ribbon,start,end,phase\n")
    svg.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" '
              f'viewBox="0 0 {width} {total_h}">\n')
    for row, (name, labels) in enumerate((("pred", pred), ("gt", gt))):
        y = row * (height + gap)
        for s, e, ph in phase_runs(labels):
            svg.write(f'<rect class="{name}" x="{s * scale:.4f}" y="{y}" width="{(e - s) * scale:.4f}" '
                      f'height="{height}" fill="{_color(palette, ph)}"/>\n')
            csv.write(f"{name},{s},{e},{ph}\n")
    svg.write("</svg>\n")
    return svg.getvalue(), csv.getvalue()

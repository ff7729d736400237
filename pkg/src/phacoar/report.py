"""Matplotlib figures written next to the delimited evaluation outputs."""
import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Arc, Circle as CirclePatch, Ellipse as EllipsePatch  # noqa: E402

from .cues import Circle, EllipseArc, Segment  # noqa: E402
from .io.formats import atomic_write  # noqa: E402
from .metrics import phase_palette, phase_runs  # noqa: E402


def _save(fig, path, dpi=120):
    # render to memory first so the file appears atomically
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=dpi, bbox_inches="tight")
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def ribbon_figure(path, pred, gt, k, names=None):
    """Prediction and ground-truth phase ribbons as a PNG."""
    palette = phase_palette(k)
    fig, ax = plt.subplots(figsize=(8, 1.6))
    for row, labels in enumerate((gt, pred)):
        for s, e, ph in phase_runs(labels):
            ax.barh(row, e - s, left=s, height=0.8, color=palette[ph], edgecolor="none")
    ax.set_yticks([0, 1])
    ax.set_yticklabels(["ground truth", "predicted"])
    ax.set_xlim(0, max(len(gt), 1))
    ax.set_xlabel("frame")
    if names:
        handles = [plt.Rectangle((0, 0), 1, 1, color=palette[i]) for i in range(k)]
        ax.legend(handles, names[:k], ncol=5, fontsize=6, loc="upper center",
                  bbox_to_anchor=(0.5, -0.6), frameon=False)
    _save(fig, path)


def rotation_figure(path, index, pred, gt):
    """Estimated against true rotation per frame, with the absolute error below."""
    index = np.asarray(index)
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 4), sharex=True)
    ax0.plot(index, gt, color="0.3", lw=1.5, label="true")
    ax0.plot(index, pred, ".", ms=3, color="tab:red", label="estimated")
    ax0.set_ylabel("rotation (deg)")
    ax0.legend(fontsize=7, frameon=False)
    err = np.abs((pred - gt + 180.0) % 360.0 - 180.0)
    ax1.plot(index, err, color="tab:blue", lw=1)
    ax1.set_ylabel("|error| (deg)")
    ax1.set_xlabel("frame")
    _save(fig, path)


def confusion_figure(path, counts, names=None):
    counts = np.asarray(counts)
    k = len(counts)
    rows = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, rows, out=np.zeros(counts.shape), where=rows > 0)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    ticks = names[:k] if names else [str(i) for i in range(k)]
    ax.set_xticks(range(k))
    ax.set_yticks(range(k))
    ax.set_xticklabels(ticks, rotation=90, fontsize=6)
    ax.set_yticklabels(ticks, fontsize=6)
    fig.colorbar(im, ax=ax, fraction=0.046)
    _save(fig, path)


def loss_figure(path, curve):
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(np.arange(1, len(curve) + 1), curve, marker="o", ms=3)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean sequence loss")
    _save(fig, path)


def overlay_figure(path, gray, cues, title=None):
    """Gray frame with cues drawn on top."""
    h, w = np.shape(gray)
    fig, ax = plt.subplots(figsize=(4, 4 * h / w))
    ax.imshow(gray, cmap="gray", vmin=0, vmax=1, origin="upper")
    for cue in cues:
        g, c = cue.geometry, cue.color or "white"
        if isinstance(g, Segment):
            ax.plot([g.start[0], g.end[0]], [g.start[1], g.end[1]], color=c, lw=1.5)
        elif isinstance(g, Circle):
            ax.add_patch(CirclePatch(g.center, g.radius, fill=False, color=c, lw=1.5))
        elif isinstance(g, EllipseArc):
            e = g.ellipse
            # Arc wants polar angles in the ellipse frame, not curve parameters
            t1, t2 = (np.degrees(np.arctan2(e.l_minor * np.sin(t), e.l_major * np.cos(t)))
                      for t in (g.t_start, g.t_end))
            ax.add_patch(Arc((e.ox, e.oy), 2 * e.l_major, 2 * e.l_minor, angle=np.degrees(e.phi),
                             theta1=t1, theta2=t2, color=c, lw=3))
        else:
            ax.add_patch(EllipsePatch((g.ox, g.oy), 2 * g.l_major, 2 * g.l_minor,
                                      angle=np.degrees(g.phi), fill=False, color=c, lw=1.5))
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=8)
    _save(fig, path)

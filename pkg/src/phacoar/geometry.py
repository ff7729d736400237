"""Binary-mask post-processing: components, contours and discrete curvature.

Masks are 2-D ``numpy`` boolean arrays indexed ``[row, col]`` (``[y, x]``).
Contour points are ``(x, y)`` integer pixel coordinates.

Angles and orientations follow one convention throughout the package:
"counter-clockwise in image coordinates" means increasing ``atan2(y, x)``
on raw pixel coordinates (y pointing down). On screen this appears
clockwise.
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (AllPointsRejected, ContourTooShort, EmptyMask,
                     MultipleComponents, ValidationError)

EXCLUDE_ABOVE = "exclude-above"
EXCLUDE_BELOW = "exclude-below"

# Moore neighbourhood, clockwise on screen starting from west: (dx, dy)
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_MOORE_INDEX = {d: i for i, d in enumerate(_MOORE)}


@dataclass
class Contour:
    """Ordered boundary of a mask component.

    Attributes
    ----------
    points : ndarray of shape (n, 2)
        ``(x, y)`` pixel coordinates in traversal order.
    closed : bool
        Whether the last point connects back to the first.
    """
    points: np.ndarray
    closed: bool = True

    def __len__(self):
        return len(self.points)

    def length(self):
        """Polyline length in pixels (including the closing segment)."""
        p = np.asarray(self.points, dtype=float)
        if len(p) < 2:
            return 0.0
        q = np.roll(p, -1, axis=0) if self.closed else p[1:]
        p = p if self.closed else p[:-1]
        return float(np.hypot(*(q - p).T).sum())

    def signed_area(self):
        """Shoelace area; positive for counter-clockwise order."""
        p = np.asarray(self.points, dtype=float)
        q = np.roll(p, -1, axis=0)
        return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


@dataclass
class CurvatureProfile:
    values: np.ndarray
    spacing: int


def as_mask(mask):
    """Validate and convert to a 2-D boolean array."""
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValidationError(f"mask must be 2-D and non-empty, got shape {m.shape}")
    return m.astype(bool, copy=False)


def _structure(connectivity):
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    raise ValidationError(f"connectivity must be 4 or 8, got {connectivity}")


def label_components(mask, connectivity=8):
    """Label connected foreground components (labels in raster order of first pixel)."""
    labels, n = ndimage.label(as_mask(mask), structure=_structure(connectivity))
    return labels, n


def largest_component(mask, connectivity=8):
    """Keep only the largest connected foreground component.

    Ties are broken in favour of the component whose first pixel comes
    earliest in row-major order.
    """
    labels, n = label_components(mask, connectivity)
    if n == 0:
        raise EmptyMask("mask has no foreground pixel")
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    # labels are numbered by first pixel in raster order, argmax picks the lowest
    best = int(np.argmax(areas)) + 1
    return labels == best


def trace_contour(mask):
    """Trace the outer border of a single 8-connected component.

    Moore-neighbour tracing starting at the first foreground pixel in
    row-major order, stopped when the first move repeats. The result is
    counter-clockwise in image coordinates (positive shoelace area).
    """
    m = as_mask(mask)
    _, n = label_components(m, 8)
    if n == 0:
        raise EmptyMask("mask has no foreground pixel")
    if n > 1:
        raise MultipleComponents(f"mask has {n} components")

    padded = np.pad(m, 1)
    ys, xs = np.nonzero(padded)
    start = (int(xs[0]), int(ys[0]))
    points = [start]
    current = start
    back = (start[0] - 1, start[1])  # west of the first raster pixel is background
    second = None
    while True:
        bdir = _MOORE_INDEX[(back[0] - current[0], back[1] - current[1])]
        nxt = None
        prev = back
        for k in range(1, 9):
            dx, dy = _MOORE[(bdir + k) % 8]
            cand = (current[0] + dx, current[1] + dy)
            if padded[cand[1], cand[0]]:
                nxt = cand
                break
            prev = cand
        if nxt is None:  # isolated pixel
            break
        if second is None:
            second = nxt
        elif current == start and nxt == second:
            break
        points.append(nxt)
        back = prev
        current = nxt
    if len(points) > 1 and points[-1] == start:
        points.pop()
    pts = np.asarray(points, dtype=np.int64) - 1
    return Contour(points=pts, closed=True)


def menger_curvature(a, b, c):
    """Curvature of the circle through three points (rows of ``(n, 2)`` arrays).

    Collinear or coincident triples give 0.
    """
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    ab = b - a
    ac = c - a
    bc = c - b
    cross = np.abs(ab[..., 0] * ac[..., 1] - ab[..., 1] * ac[..., 0])
    denom = (np.hypot(ab[..., 0], ab[..., 1]) * np.hypot(ac[..., 0], ac[..., 1])
             * np.hypot(bc[..., 0], bc[..., 1]))
    safe = np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, 2.0 * cross / safe, 0.0)


def curvature(contour, spacing=5):
    """Per-point Menger curvature of ``(p[i-k], p[i], p[i+k])`` with cyclic indexing.

    Parameters
    ----------
    contour : Contour or array_like of shape (n, 2)
        Closed point sequence.
    spacing : int
        Neighbour offset ``k`` along the contour. ``k = 1`` uses immediate
        neighbours.
    """
    pts = np.asarray(contour.points if isinstance(contour, Contour) else contour,
                     dtype=float)
    k = int(spacing)
    if k < 1:
        raise ValidationError("spacing must be >= 1")
    if len(pts) < 2 * k + 1:
        raise ContourTooShort(f"{len(pts)} points < 2*{k}+1")
    values = menger_curvature(np.roll(pts, k, axis=0), pts, np.roll(pts, -k, axis=0))
    return CurvatureProfile(values=values, spacing=k)


def normalized_curvature(profile):
    """Scale-free curvature ``l / (l + median(l))`` in ``[0, 1)``.

    A point at the contour's median curvature maps to 0.5; an isolated
    spike approaches 1. A threshold of 0.7 rejects points whose curvature
    exceeds 7/3 of the median.
    """
    v = np.asarray(profile.values, dtype=float)
    med = float(np.median(v))
    if med <= 0:
        # mostly straight contour: any bend is infinitely above the median
        return np.where(v > 0, 1.0, 0.0)
    return v / (v + med)


def curvature_keep_mask(profile, threshold=0.7, mode=EXCLUDE_ABOVE, normalize="median"):
    """Boolean mask of points that survive the curvature predicate."""
    values = np.asarray(profile.values, dtype=float)
    if normalize == "median":
        values = normalized_curvature(profile)
    elif normalize != "raw":
        raise ValidationError(f"unknown normalization {normalize!r}")
    if mode == EXCLUDE_ABOVE:
        return ~(values > threshold)
    if mode == EXCLUDE_BELOW:
        return ~(values < threshold)
    raise ValidationError(f"unknown filter mode {mode!r}")


def filter_by_curvature(contour, profile, threshold=0.7, mode=EXCLUDE_ABOVE,
                        normalize="median"):
    """Drop contour points whose curvature fails the threshold test.

    Returns the retained points in their original order.

    Raises
    ------
    AllPointsRejected
        If no point survives.
    """
    pts = np.asarray(contour.points if isinstance(contour, Contour) else contour)
    if len(pts) != len(profile.values):
        raise ValidationError("curvature profile does not match contour length")
    keep = curvature_keep_mask(profile, threshold, mode, normalize)
    if not keep.any():
        raise AllPointsRejected("curvature filter rejected every point")
    return pts[keep]

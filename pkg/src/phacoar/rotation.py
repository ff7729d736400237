"""Eye-rotation estimation by NCC between polar-unwrapped limbus annuli.

An annulus around the fitted limbus is resampled onto a
``(radial_bins, angular_bins)`` grid so that a rotation about the ellipse
centre becomes a cyclic shift along the angular axis. The shift is found
by exhaustive normalised cross-correlation with parabolic sub-bin
refinement.

Angles are degrees, positive counter-clockwise in image coordinates
(increasing ``atan2(y, x)`` with y pointing down).
"""
from dataclasses import dataclass, field

import numpy as np

from .ellipse import EllipseParams
from .errors import DegenerateAnnulus, ShapeMismatch, ValidationError, ZeroVariance

DEFAULT_ANGULAR_BINS = 720
DEFAULT_V_MAX = 2
DEFAULT_CONFIDENCE_FLOOR = 0.2


@dataclass(frozen=True)
class AnnulusSpec:
    """Band of radii ``[R - d_in, R + d_out]`` around the ellipse centre.

    ``R`` is the mean semi-axis; ``d_in = R / lambda_in`` and
    ``d_out = R / lambda_out``. The band is circular even for tilted
    ellipses.
    """
    ellipse: EllipseParams
    lambda_in: float = 3.0
    lambda_out: float = 3.0

    @property
    def mean_radius(self):
        return 0.5 * (self.ellipse.l_major + self.ellipse.l_minor)

    @property
    def d_in(self):
        return self.mean_radius / self.lambda_in

    @property
    def d_out(self):
        return self.mean_radius / self.lambda_out

    @property
    def radii(self):
        return self.mean_radius - self.d_in, self.mean_radius + self.d_out

    def default_radial_bins(self):
        return max(8, int(round(self.d_in + self.d_out)))

    def contains(self, point):
        x, y = point
        r = np.hypot(x - self.ellipse.ox, y - self.ellipse.oy) - self.mean_radius
        return bool(-self.d_in <= r <= self.d_out)


def annulus_membership(spec, point):
    return spec.contains(point)


@dataclass
class PolarPatch:
    """Annulus resampled to ``values[radial, angular]``.

    ``valid`` marks cells whose sample fell inside the frame. Mean and
    standard deviation over valid cells are computed once at construction.
    """
    values: np.ndarray
    valid: np.ndarray
    deg_per_bin: float
    mean: float = field(init=False)
    std: float = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape or self.values.ndim != 2:
            raise ShapeMismatch("values and valid must be equal 2-D grids")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("patch values must be finite")
        v = self.values[self.valid]
        self.mean = float(v.mean()) if v.size else 0.0
        self.std = float(v.std()) if v.size else 0.0

    @property
    def radial_bins(self):
        return self.values.shape[0]

    @property
    def angular_bins(self):
        return self.values.shape[1]

    @classmethod
    def from_values(cls, values, valid=None):
        values = np.asarray(values, dtype=float)
        if valid is None:
            valid = np.ones(values.shape, dtype=bool)
        return cls(values, valid, 360.0 / values.shape[1])

    def shifted(self, u):
        """Cyclic shift by ``u`` angular bins (content rotates by ``u * deg_per_bin``)."""
        return PolarPatch(np.roll(self.values, u, axis=1), np.roll(self.valid, u, axis=1),
                          self.deg_per_bin)


def bilinear_sample(image, xs, ys):
    """Bilinear interpolation at pixel-centre coordinates.

    Returns ``(values, valid)``; samples needing a pixel outside the image
    get value 0 and ``valid = False``.
    """
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.where(valid, out, 0.0), valid


def polar_unwrap(frame, spec, angular_bins=DEFAULT_ANGULAR_BINS, radial_bins=None):
    """Resample the annulus of ``spec`` from a gray frame.

    Cell ``(r, a)`` samples radius ``R - d_in + (r + 0.5) (d_in + d_out) / m``
    at angle ``(a + 0.5) 360 / n`` degrees about the ellipse centre.
    """
    if spec.d_in + spec.d_out < 1.0:
        raise DegenerateAnnulus(f"annulus width {spec.d_in + spec.d_out:.3g} px < 1")
    n = int(angular_bins)
    m = int(radial_bins) if radial_bins is not None else spec.default_radial_bins()
    if n < 1 or m < 1:
        raise ValidationError("bin counts must be positive")
    r_lo = spec.mean_radius - spec.d_in
    width = spec.d_in + spec.d_out
    radii = r_lo + (np.arange(m) + 0.5) * width / m
    angles = np.deg2rad((np.arange(n) + 0.5) * 360.0 / n)
    xs = spec.ellipse.ox + radii[:, None] * np.cos(angles)[None, :]
    ys = spec.ellipse.oy + radii[:, None] * np.sin(angles)[None, :]
    values, valid = bilinear_sample(frame, xs, ys)
    return PolarPatch(values, valid, 360.0 / n)


def _check_pair(ref, cur):
    if ref.values.shape != cur.values.shape:
        raise ShapeMismatch(f"patch grids differ: {ref.values.shape} vs {cur.values.shape}")
    if not ref.std > 0 or not cur.std > 0:
        raise ZeroVariance("NCC needs non-constant patches")


def ncc_score(ref, cur, shift=(0, 0)):
    """Normalised cross-correlation of ``ref`` with ``cur`` displaced by ``shift``.

    Compares ``ref[r, a]`` with ``cur[r + v, a + u]``; the angular index
    wraps, radial cells shifted off the grid are dropped. Means and
    deviations are taken over jointly valid cells, so the score lies in
    ``[-1, 1]``.
    """
    _check_pair(ref, cur)
    u, v = int(shift[0]), int(shift[1])
    m = ref.radial_bins
    lo, hi = max(0, -v), min(m, m - v)
    if hi <= lo:
        return 0.0
    a = ref.values[lo:hi]
    wa = ref.valid[lo:hi]
    b = np.roll(cur.values[lo + v:hi + v], -u, axis=1)
    wb = np.roll(cur.valid[lo + v:hi + v], -u, axis=1)
    w = wa & wb
    if w.sum() < 2:
        return 0.0
    x = a[w] - a[w].mean()
    y = b[w] - b[w].mean()
    den = np.sqrt((x @ x) * (y @ y))
    if den == 0:
        return 0.0
    return float(np.clip((x @ y) / den, -1.0, 1.0))


def _row_spectra(patch):
    # per-row angular spectra of the masked values, squares and mask, cached
    cached = getattr(patch, "_spectra", None)
    if cached is None:
        w = patch.valid.astype(float)
        x = patch.values * w
        cached = np.fft.rfft(np.stack([w, x, x * x]), axis=2)
        patch._spectra = cached
    return cached


def ncc_surface(ref, cur, v_max=DEFAULT_V_MAX):
    """Scores for every angular shift and radial shifts in ``[-v_max, v_max]``.

    Returns an array of shape ``(2 v_max + 1, angular_bins)``; row ``i``
    holds radial shift ``i - v_max``. All masked sums are circular
    correlations along the angular axis, evaluated with the FFT.
    """
    _check_pair(ref, cur)
    m, n = ref.values.shape
    fa = np.conj(_row_spectra(ref))
    fb = _row_spectra(cur)
    out = np.full((2 * v_max + 1, n), -np.inf)
    for i, v in enumerate(range(-v_max, v_max + 1)):
        lo, hi = max(0, -v), min(m, m - v)
        if hi <= lo:
            continue
        wa, a, aa = fa[:, lo:hi]
        wb, b, bb = fb[:, lo + v:hi + v]
        # count, sum_a, sum_b, sum_aa, sum_bb, sum_ab
        spec = np.stack([(wa * wb).sum(0), (a * wb).sum(0), (wa * b).sum(0),
                         (aa * wb).sum(0), (wa * bb).sum(0), (a * b).sum(0)])
        count, sa, sb, saa, sbb, sab = np.fft.irfft(spec, n=n, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = count > 1.5
            cnt = np.where(ok, count, 1.0)
            cov = sab - sa * sb / cnt
            var_a = saa - sa * sa / cnt
            var_b = sbb - sb * sb / cnt
            den = np.sqrt(np.maximum(var_a, 0) * np.maximum(var_b, 0))
            score = np.where(ok & (den > 1e-12), cov / np.where(den > 0, den, 1.0), 0.0)
        out[i] = np.clip(score, -1.0, 1.0)
    return out


@dataclass
class RotationEstimate:
    theta_deg: float
    peak_score: float
    u: int
    v: int
    low_confidence: bool


def wrap_degrees(theta):
    """Wrap an angle to ``(-180, 180]``."""
    t = float(np.mod(theta, 360.0))
    return t - 360.0 if t > 180.0 else t


def estimate_rotation(ref, cur, v_max=DEFAULT_V_MAX, confidence_floor=DEFAULT_CONFIDENCE_FLOOR):
    """Rotation of ``cur`` relative to ``ref`` in degrees.

    Exhaustive search over every angular shift and radial shifts within
    ``+-v_max``, then parabolic interpolation through the peak and its two
    angular neighbours.
    """
    surface = ncc_surface(ref, cur, v_max)
    i, u = np.unravel_index(int(np.argmax(surface)), surface.shape)
    n = surface.shape[1]
    row = surface[i]
    y0, ym, yp = row[u], row[(u - 1) % n], row[(u + 1) % n]
    den = ym - 2.0 * y0 + yp
    delta = 0.5 * (ym - yp) / den if den < 0 else 0.0
    delta = float(np.clip(delta, -0.5, 0.5))
    v = int(i) - v_max
    peak = ncc_score(ref, cur, (int(u), v))
    theta = wrap_degrees((int(u) + delta) * ref.deg_per_bin)
    return RotationEstimate(theta_deg=theta, peak_score=peak, u=int(u), v=v,
                            low_confidence=peak < confidence_floor)

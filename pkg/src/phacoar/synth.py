"""Deterministic synthetic data with exact ground truth, plus brute-force oracles.

Randomness flows through :func:`phacoar.seeding.make_rng`; frame ``i`` of
a scene uses stream ``(STREAM_FRAME, i)`` so it is reproducible on its own.

The oracles deliberately share no numeric kernels with the modules they
check: the ellipse oracle uses its own nearest-point root finder and the
rotation oracle resamples with ``scipy.ndimage.map_coordinates`` in image
space.
"""
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import ndimage

from .ellipse import EllipseParams
from .seeding import make_rng

STREAM_TEXTURE = 1
STREAM_FRAME = 2
STREAM_FEATURE_CENTERS = 3
STREAM_FEATURE_SEQ = 4
STREAM_CONTOUR = 5

PHASE_NAMES = (
    "incision", "VA injection", "capsulorhexis", "hydrodissection",
    "phacoemulsification", "irrigation", "capsule polishing", "lens implant",
    "VA removal", "tonifying",
)


# ---------------------------------------------------------------- scenes


@dataclass
class Occluder:
    """Rectangle ``(x0, y0, x1, y1)`` that hides the mask on frames ``[start, stop)``."""
    x0: int
    y0: int
    x1: int
    y1: int
    start: int = 0
    stop: int = 1 << 30
    intensity: float = 0.9


@dataclass
class SceneSpec:
    width: int = 256
    height: int = 256
    ellipse: EllipseParams = field(default_factory=lambda: EllipseParams(128.0, 128.0, 78.0, 70.0, 0.4))
    rotations: list = field(default_factory=lambda: [0.0])
    phases: list = field(default_factory=lambda: [0])
    seed: int = 0
    noise_sigma: float = 0.0
    spike_count: int = 0
    spike_size: float = 15.0
    occluders: list = field(default_factory=list)
    blur: bool = False
    empty_frames: tuple = ()

    def __post_init__(self):
        if len(self.rotations) != len(self.phases):
            raise ValueError("rotation schedule and phase script lengths differ")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class FrameBundle:
    index: int
    mask: np.ndarray
    gray: np.ndarray
    feature: np.ndarray = None


@dataclass
class FrameTruth:
    index: int
    ellipse: EllipseParams
    theta_abs: float
    theta_rel: float
    phase: int
    mask: np.ndarray


@dataclass
class EyeTexture:
    """Radial streaks plus low-frequency angular noise around the limbus."""
    radius: float
    streak_angle: np.ndarray
    streak_width: np.ndarray
    streak_amp: np.ndarray
    streak_r0: np.ndarray
    streak_r1: np.ndarray
    harmonic_amp: np.ndarray
    harmonic_phase: np.ndarray

    @classmethod
    def random(cls, seed, radius):
        rng = make_rng(seed, STREAM_TEXTURE)
        k = int(rng.integers(24, 49))
        r0 = rng.uniform(0.55, 0.95, k) * radius
        return cls(
            radius=radius,
            streak_angle=rng.uniform(0, 2 * np.pi, k),
            streak_width=rng.uniform(1.0, 3.5, k),
            streak_amp=rng.uniform(0.08, 0.3, k) * rng.choice([-1.0, 1.0], k),
            streak_r0=r0,
            streak_r1=r0 + rng.uniform(0.3, 0.8, k) * radius,
            harmonic_amp=rng.uniform(0.01, 0.05, 6),
            harmonic_phase=rng.uniform(0, 2 * np.pi, 6),
        )

    def evaluate(self, rho, alpha):
        R = self.radius
        base = (0.12 + 0.28 * _smoothstep(rho, 0.42 * R, 2.0)
                + 0.4 * _smoothstep(rho, R, 1.5))
        for j, (amp, ph) in enumerate(zip(self.harmonic_amp, self.harmonic_phase), start=1):
            base = base + amp * np.cos(j * alpha + ph) * np.exp(-((rho - R) / (0.5 * R)) ** 2)
        for ang, wid, amp, r0, r1 in zip(self.streak_angle, self.streak_width, self.streak_amp,
                                         self.streak_r0, self.streak_r1):
            d = np.angle(np.exp(1j * (alpha - ang))) * rho
            radial = _smoothstep(rho, r0, 2.0) * (1.0 - _smoothstep(rho, r1, 2.0))
            base = base + amp * np.exp(-0.5 * (d / wid) ** 2) * radial
        return np.clip(base, 0.0, 1.0)


def _smoothstep(x, edge, width):
    return 0.5 * (1.0 + np.tanh((x - edge) / width))


def render_gray(texture, ellipse, theta_deg, width, height):
    """Gray frame whose texture is rotated by ``theta_deg`` about the ellipse centre."""
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    dx = xs - ellipse.ox
    dy = ys - ellipse.oy
    rho = np.hypot(dx, dy)
    alpha = np.arctan2(dy, dx) - np.deg2rad(theta_deg)
    return texture.evaluate(rho, alpha)


def ellipse_polar_radius(ellipse, alpha):
    """Distance from the centre to the ellipse along direction ``alpha``."""
    beta = alpha - ellipse.phi
    a, b = ellipse.l_major, ellipse.l_minor
    return a * b / np.hypot(b * np.cos(beta), a * np.sin(beta))


def render_mask(ellipse, width, height, rng=None, noise_sigma=0.0, spikes=()):
    """Filled ellipse with optional smooth boundary noise and narrow outward spikes.

    ``spikes`` is a sequence of ``(angle, height)``; each spike is a
    triangle 4 px wide at the base.
    """
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    dx = xs - ellipse.ox
    dy = ys - ellipse.oy
    rho = np.hypot(dx, dy)
    alpha = np.arctan2(dy, dx)
    boundary = ellipse_polar_radius(ellipse, alpha)
    if noise_sigma > 0 and rng is not None:
        raw = rng.normal(0.0, 1.0, 360)
        smooth = ndimage.gaussian_filter1d(raw, 3.0, mode="wrap")
        smooth *= noise_sigma / (smooth.std() or 1.0)
        grid = np.arange(361) * (2 * np.pi / 360) - np.pi
        boundary = boundary + np.interp(alpha, grid, np.append(smooth, smooth[0]))
    mask = rho <= boundary
    for ang, h in spikes:
        base = ellipse_polar_radius(ellipse, ang)
        along = rho - base + 1.0
        across = np.abs(np.angle(np.exp(1j * (alpha - ang)))) * rho
        mask |= (along >= 0) & (along <= h) & (across <= 2.0 * (1.0 - along / h) + 0.5)
    return mask


def relative_rotations(rotations, phases):
    """Rotation of each frame relative to the first frame of its phase run."""
    out = []
    ref = None
    prev = None
    for theta, ph in zip(rotations, phases):
        if ph != prev:
            ref = theta
            prev = ph
        out.append(float(theta - ref))
    return out


def gen_scene(spec, frame_count=None):
    """Render frames and ground truth for ``spec``.

    Returns
    -------
    (list of FrameBundle, list of FrameTruth)
    """
    n = len(spec.phases) if frame_count is None else int(frame_count)
    if n > len(spec.phases):
        raise ValueError("frame_count exceeds the scripted schedule")
    e = spec.ellipse
    texture = EyeTexture.random(spec.seed, e.mean_radius)
    rel = relative_rotations(spec.rotations[:n], spec.phases[:n])
    true_mask = render_mask(e, spec.width, spec.height)
    bundles, truths = [], []
    for i in range(n):
        rng = make_rng(spec.seed, STREAM_FRAME, i)
        theta = float(spec.rotations[i])
        gray = render_gray(texture, e, theta, spec.width, spec.height)
        spikes = [(rng.uniform(-np.pi, np.pi), spec.spike_size) for _ in range(spec.spike_count)]
        mask = render_mask(e, spec.width, spec.height, rng, spec.noise_sigma, spikes)
        for occ in spec.occluders:
            if occ.start <= i < occ.stop:
                mask[occ.y0:occ.y1, occ.x0:occ.x1] = False
                gray[occ.y0:occ.y1, occ.x0:occ.x1] = occ.intensity
        if i in spec.empty_frames:
            mask[:] = False
        if spec.blur:
            gray = ndimage.gaussian_filter(gray, 1.5)
        bundles.append(FrameBundle(index=i, mask=mask, gray=gray))
        truths.append(FrameTruth(index=i, ellipse=e, theta_abs=theta, theta_rel=rel[i],
                                 phase=int(spec.phases[i]), mask=true_mask))
    return bundles, truths


def noisy_ellipse_points(ellipse, count, rng, noise_sigma=1.0, spike_fraction=0.0,
                         spike_size=15.0, min_gap=6, sector_fraction=2.0 / 3.0):
    """Ellipse samples with Gaussian noise and optional outward spike outliers.

    Spikes are single points pushed ``spike_size`` px along the outward
    normal. They are confined to a contiguous sector (one side of the
    eye, as a tool or lid would produce) and kept at least ``min_gap``
    indices apart.

    Returns
    -------
    (points, spike_indices)
    """
    t = np.linspace(0.0, 2 * np.pi, count, endpoint=False) + rng.uniform(0, 2 * np.pi / count)
    pts = ellipse.point_at(t) + rng.normal(0.0, noise_sigma, (count, 2))
    n_spikes = int(round(spike_fraction * count))
    idx = np.zeros(0, dtype=int)
    if n_spikes:
        sector = max(int(round(sector_fraction * count)), n_spikes * min_gap)
        gaps = min_gap + rng.multinomial(sector - n_spikes * min_gap, np.ones(n_spikes) / n_spikes)
        start = int(rng.integers(0, count))
        idx = (start + np.concatenate([[0], np.cumsum(gaps)[:-1]])) % count
        c, s = np.cos(ellipse.phi), np.sin(ellipse.phi)
        nxl = ellipse.l_minor * np.cos(t[idx])
        nyl = ellipse.l_major * np.sin(t[idx])
        norm = np.hypot(nxl, nyl)
        pts[idx, 0] += spike_size * (nxl * c - nyl * s) / norm
        pts[idx, 1] += spike_size * (nxl * s + nyl * c) / norm
    return pts, np.sort(idx)


def random_limbus_ellipse(rng, center_range=(200.0, 300.0), major=(75.0, 140.0),
                          minor_lo=60.0, max_ratio=0.85):
    a = rng.uniform(*major)
    b = rng.uniform(minor_lo, max_ratio * a)
    return EllipseParams(rng.uniform(*center_range), rng.uniform(*center_range), a, b,
                         rng.uniform(0.0, np.pi))


# -------------------------------------------------------------- features


@dataclass
class FeatureGenSpec:
    K_s: int = 10
    d: int = 2048
    seed: int = 0
    center_scale: float = 1.0
    sigma: float = 0.5
    duration: tuple = (40, 80)
    boundary_width: int = 4
    boundary_sigma: float = 3.0

    def __post_init__(self):
        if self.duration[0] < 1 or self.duration[1] < self.duration[0]:
            raise ValueError("durations must be >= 1")
        if self.sigma < 0 or self.boundary_sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass
class FeatureSequence:
    features: np.ndarray
    labels: np.ndarray
    boundary: np.ndarray


def phase_centers(spec):
    rng = make_rng(spec.seed, STREAM_FEATURE_CENTERS)
    return rng.normal(0.0, spec.center_scale, (spec.K_s, spec.d))


def gen_features(spec, sequences, durations=None):
    """Feature sequences following the fixed phase order ``0, 1, ..., K_s - 1``.

    Frames within ``boundary_width`` of a phase change are drawn with
    ``boundary_sigma`` instead of ``sigma``.
    """
    centers = phase_centers(spec)
    out = []
    for j in range(int(sequences)):
        rng = make_rng(spec.seed, STREAM_FEATURE_SEQ, j)
        if durations is None:
            dur = rng.integers(spec.duration[0], spec.duration[1] + 1, spec.K_s)
        else:
            dur = np.asarray(durations[j], dtype=int)
        labels = np.repeat(np.arange(spec.K_s), dur)
        starts = np.cumsum(dur)[:-1]
        idx = np.arange(len(labels))
        dist = np.min(np.abs(idx[:, None] - starts[None, :] + 0.5), axis=1) if len(starts) \
            else np.full(len(labels), np.inf)
        boundary = dist < spec.boundary_width
        sig = np.where(boundary, spec.boundary_sigma, spec.sigma)
        feats = centers[labels] + sig[:, None] * rng.normal(0.0, 1.0, (len(labels), spec.d))
        out.append(FeatureSequence(features=feats, labels=labels, boundary=boundary))
    return out


# --------------------------------------------------------------- oracles


def _nearest_distance_axis_aligned(a, b, x, y, iterations=64):
    """Distance from ``(x, y)`` to the ellipse ``(x/a)^2 + (y/b)^2 = 1``.

    Root bracketing on the Lagrange-multiplier equation in the first
    quadrant. All arguments broadcast together.
    """
    a, b, x, y = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, x, y)))
    swap = b > a
    a, b = np.where(swap, b, a), np.where(swap, a, b)
    x, y = np.where(swap, np.abs(y), np.abs(x)), np.where(swap, np.abs(x), np.abs(y))
    z0 = x / a
    z1 = y / b
    r0 = (a / b) ** 2
    g0 = z0 * z0 + z1 * z1 - 1.0
    s_lo = np.where(g0 < 0, z1 - 1.0, 0.0)
    s_hi = np.where(g0 < 0, 0.0, np.hypot(r0 * z0, z1) - 1.0)
    lo, hi = s_lo.copy(), s_hi.copy()
    # lanes that end up on the axis branches may divide by zero; they are discarded
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(iterations):
            s = 0.5 * (lo + hi)
            g = (r0 * z0 / (s + r0)) ** 2 + (z1 / (s + 1.0)) ** 2 - 1.0
            pos = g > 0
            lo = np.where(pos, s, lo)
            hi = np.where(pos, hi, s)
        s = 0.5 * (lo + hi)
        xe = r0 * x / (s + r0)
        ye = y / (s + 1.0)
        d_general = np.hypot(xe - x, ye - y)
    # y == 0: nearest point may leave the axis when x is inside the evolute
    thr = (a * a - b * b) / a
    xa = a * a * x / np.where(a * a - b * b > 0, a * a - b * b, 1.0)
    inside = x < thr
    ya = b * np.sqrt(np.clip(1.0 - (xa / a) ** 2, 0.0, None))
    d_axis = np.where(inside, np.hypot(xa - x, ya), np.abs(x - a))
    # coordinates within rounding of an axis take the exact axis branch (the
    # bisection root underflows there)
    on_x = y > 1e-12 * b
    return np.where(on_x, np.where(x > 1e-12 * a, d_general, np.abs(y - b)), d_axis)


def oracle_cost(params, points):
    """Sum of squared orthogonal distances via the oracle's own distance kernel.

    ``params`` may be a ``(5,)`` vector or a ``(g, 5)`` batch.
    """
    v = np.atleast_2d(np.asarray(params, dtype=float))
    p = np.asarray(points, dtype=float)
    ox, oy, a, b, phi = (v[:, i:i + 1] for i in range(5))
    dx = p[None, :, 0] - ox
    dy = p[None, :, 1] - oy
    c, s = np.cos(phi), np.sin(phi)
    xl = dx * c + dy * s
    yl = -dx * s + dy * c
    d = _nearest_distance_axis_aligned(a, b, xl, yl)
    out = np.sum(d * d, axis=1)
    return out if np.ndim(params) == 2 else float(out[0])


def oracle_ellipse(points, bounds, grid=5, levels=3, chunk=2048):
    """Coarse-to-fine grid search for the ellipse minimising orthogonal cost.

    Parameters
    ----------
    points : array_like (n, 2)
    bounds : sequence of five ``(lo, hi)`` pairs for ``ox, oy, a, b, phi``
    grid : samples per parameter per level
    levels : refinement levels after the initial grid; each re-centres the
        box on the best sample and shrinks it to one cell on either side.

    Returns
    -------
    (EllipseParams, cost, cell) where ``cell`` holds the final grid steps.
    """
    p = np.asarray(points, dtype=float)
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    best, best_cost = None, np.inf
    for _ in range(levels + 1):
        axes = [np.linspace(l, h, grid) for l, h in zip(lo, hi)]
        cand = np.array(list(product(*axes)))
        cand = cand[(cand[:, 2] > 0) & (cand[:, 3] > 0)]
        costs = np.concatenate([oracle_cost(cand[i:i + chunk], p)
                                for i in range(0, len(cand), chunk)])
        k = int(np.argmin(costs))
        if costs[k] <= best_cost:
            best, best_cost = cand[k], float(costs[k])
        step = (hi - lo) / (grid - 1)
        lo, hi = best - step, best + step
    cell = (hi - lo) / 2.0
    return EllipseParams.from_array(best).normalized(), best_cost, cell


def oracle_rotation(gray_a, gray_b, center, radii, step_deg=0.1, search=(-180.0, 180.0),
                    stride=1, chunk=60):
    """Rotation of ``gray_b`` relative to ``gray_a`` by exhaustive image-space search.

    For every candidate ``theta`` on a ``step_deg`` lattice in
    ``[search[0], search[1])`` the annulus pixels ``x`` of A are compared
    with B sampled (bilinear) at ``R(theta) (x - c) + c``; the candidate
    with the smallest sum of squared differences wins.
    """
    a = np.asarray(gray_a, dtype=float)
    b = np.asarray(gray_b, dtype=float)
    cx, cy = center
    ys, xs = np.mgrid[0:a.shape[0]:stride, 0:a.shape[1]:stride].astype(float)
    rho = np.hypot(xs - cx, ys - cy)
    sel = (rho >= radii[0]) & (rho <= radii[1])
    px, py = xs[sel] - cx, ys[sel] - cy
    ref = a[ys[sel].astype(int), xs[sel].astype(int)]
    thetas = np.arange(int(round((search[1] - search[0]) / step_deg))) * step_deg + search[0]
    best_theta, best_ssd = 0.0, np.inf
    for i in range(0, len(thetas), chunk):
        th = np.deg2rad(thetas[i:i + chunk])[:, None]
        qx = cx + np.cos(th) * px - np.sin(th) * py
        qy = cy + np.sin(th) * px + np.cos(th) * py
        vals = ndimage.map_coordinates(b, [qy.ravel(), qx.ravel()], order=1, mode="constant",
                                       cval=0.0).reshape(qx.shape)
        ssd = np.sum((vals - ref) ** 2, axis=1)
        k = int(np.argmin(ssd))
        if ssd[k] < best_ssd:
            best_ssd, best_theta = float(ssd[k]), float(thetas[i + k])
    return best_theta

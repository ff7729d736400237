"""Orthogonal-distance ellipse fitting with Levenberg-Marquardt.

The ellipse is parametrised by its centre ``(ox, oy)``, semi-axes
``l_major >= l_minor`` and tilt ``phi`` in ``[0, pi)``::

    x = ox + l_major cos(t) cos(phi) - l_minor sin(t) sin(phi)
    y = oy + l_major cos(t) sin(phi) + l_minor sin(t) cos(phi)

The fit minimises the sum of squared Euclidean distances from each point
to its nearest ellipse point. The nearest parameter ``t`` of every point is
found by a nested 1-D search, so the LM parameter vector stays at five.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, NumericalFailure, TooFewPoints, ValidationError

TWO_PI = 2.0 * np.pi
COARSE_SAMPLES = 64
NEWTON_ITERATIONS = 12
_GRID = np.arange(COARSE_SAMPLES) * (TWO_PI / COARSE_SAMPLES)
_GRID_COS = np.cos(_GRID)
_GRID_SIN = np.sin(_GRID)
_STEP = TWO_PI / COARSE_SAMPLES


@dataclass(frozen=True)
class EllipseParams:
    ox: float
    oy: float
    l_major: float
    l_minor: float
    phi: float = 0.0

    def as_array(self):
        return np.array([self.ox, self.oy, self.l_major, self.l_minor, self.phi])

    @classmethod
    def from_array(cls, v):
        return cls(*(float(x) for x in v))

    @property
    def center(self):
        return np.array([self.ox, self.oy])

    @property
    def mean_radius(self):
        return 0.5 * (self.l_major + self.l_minor)

    def validate(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValidationError("ellipse parameters must be finite")
        if not (self.l_major >= self.l_minor > 0):
            raise ValidationError(f"need l_major >= l_minor > 0, got {self.l_major}, {self.l_minor}")
        if not (0.0 <= self.phi < np.pi):
            raise ValidationError(f"phi must lie in [0, pi), got {self.phi}")
        return self

    def normalized(self):
        """Equivalent parameters with ``l_major >= l_minor`` and ``phi`` in ``[0, pi)``."""
        a, b, phi = abs(self.l_major), abs(self.l_minor), self.phi
        if b > a:
            a, b = b, a
            phi += 0.5 * np.pi
        phi = float(np.mod(phi, np.pi))
        if phi >= np.pi:  # mod can round up to pi
            phi = 0.0
        return EllipseParams(self.ox, self.oy, a, b, phi)

    def translated(self, dx, dy):
        return EllipseParams(self.ox + dx, self.oy + dy, self.l_major, self.l_minor, self.phi)

    def point_at(self, t):
        """Ellipse point(s) at parameter ``t``; returns ``(..., 2)``."""
        t = np.asarray(t, dtype=float)
        c, s = np.cos(self.phi), np.sin(self.phi)
        u = self.l_major * np.cos(t)
        v = self.l_minor * np.sin(t)
        return np.stack([self.ox + u * c - v * s, self.oy + u * s + v * c], axis=-1)

    def implicit(self, points):
        """``(x'/a)^2 + (y'/b)^2 - 1`` in the ellipse frame; zero on the curve."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        c, s = np.cos(self.phi), np.sin(self.phi)
        xl = p[:, 0] * c + p[:, 1] * s
        yl = -p[:, 0] * s + p[:, 1] * c
        return (xl / self.l_major) ** 2 + (yl / self.l_minor) ** 2 - 1.0

    def to_dict(self):
        return {"ox": self.ox, "oy": self.oy, "l_major": self.l_major,
                "l_minor": self.l_minor, "phi": self.phi}


@dataclass
class FitDiagnostics:
    final_cost: float
    iterations: int
    converged: bool
    rms_residual: float
    history: list = field(default_factory=list)


@dataclass
class LMConfig:
    max_iter: int = 100
    cost_tol: float = 1e-8
    param_tol: float = 1e-10
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    lambda_max: float = 1e10


def _as_points(points):
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValidationError(f"points must have shape (n, 2), got {p.shape}")
    return p


def init_guess(points):
    """Starting ellipse: centroid, both semi-axes at half the mean radius, no tilt."""
    p = _as_points(points)
    if len(p) < 5:
        raise TooFewPoints(f"need at least 5 points, got {len(p)}")
    center = p.mean(axis=0)
    d = p - center
    moments = d.T @ d / len(p)
    if np.linalg.det(moments) <= 1e-9:
        raise DegenerateGeometry("points are collinear or coincident")
    half = 0.5 * float(np.hypot(d[:, 0], d[:, 1]).mean())
    return EllipseParams(float(center[0]), float(center[1]), half, half, 0.0)


def _local(params, p):
    # point coordinates in the ellipse frame
    v = np.asarray(params, dtype=float)
    c, s = np.cos(v[4]), np.sin(v[4])
    dx = p[:, 0] - v[0]
    dy = p[:, 1] - v[1]
    return dx * c + dy * s, -dx * s + dy * c


def nearest_parameter(params, points):
    """Ellipse parameter of the nearest curve point for each input point.

    A 64-sample scan over ``[0, 2 pi)`` brackets the minimum of the squared
    distance to within one sample spacing on either side; safeguarded
    Newton steps on its derivative (bisection whenever a step would leave
    the bracket) then refine it to machine precision.
    """
    v = params.as_array() if isinstance(params, EllipseParams) else np.asarray(params, float)
    p = _as_points(points)
    xl, yl = _local(v, p)
    a, b = v[2], v[3]
    scan = (xl[:, None] - a * _GRID_COS) ** 2 + (yl[:, None] - b * _GRID_SIN) ** 2
    t = _GRID[np.argmin(scan, axis=1)]
    lo = t - _STEP
    hi = t + _STEP
    k = a * a - b * b
    for _ in range(NEWTON_ITERATIONS):
        ct, st = np.cos(t), np.sin(t)
        # half derivative of the squared distance and its slope
        g = xl * a * st - yl * b * ct - k * st * ct
        h = xl * a * ct + yl * b * st - k * (ct * ct - st * st)
        pos = g > 0
        hi = np.where(pos, t, hi)
        lo = np.where(pos, lo, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = t - g / h
        bad = ~((h > 0) & (tn >= lo) & (tn <= hi))
        t = np.where(bad, 0.5 * (lo + hi), tn)
    return np.mod(t, TWO_PI)


def residuals(params, points):
    """Unsigned orthogonal distance of each point to the ellipse."""
    p = _as_points(points)
    t = nearest_parameter(params, p)
    e = params if isinstance(params, EllipseParams) else EllipseParams.from_array(params)
    q = e.point_at(t)
    return np.hypot(p[:, 0] - q[:, 0], p[:, 1] - q[:, 1])


def point_residual(params, point):
    """Distance from a single point to its nearest ellipse point."""
    return float(residuals(params, np.reshape(np.asarray(point, float), (1, 2)))[0])


def cost(params, points):
    """Sum of squared orthogonal distances."""
    r = residuals(params, points)
    return float(r @ r)


def signed_residuals_and_jacobian(v, points):
    """Signed distances (positive outside) and their Jacobian w.r.t. ``v``.

    ``v = [ox, oy, a, b, phi]``. At the nearest point the tangent term
    vanishes, so each Jacobian row is minus the outward unit normal dotted
    with the partial derivatives of the ellipse point.
    """
    v = np.asarray(v, dtype=float)
    p = _as_points(points)
    t = nearest_parameter(v, p)
    ox, oy, a, b, phi = v
    c, s = np.cos(phi), np.sin(phi)
    ct, st = np.cos(t), np.sin(t)
    ex = ox + a * ct * c - b * st * s
    ey = oy + a * ct * s + b * st * c
    # outward normal: local (b cos t, a sin t), rotated by phi
    nxl, nyl = b * ct, a * st
    norm = np.hypot(nxl, nyl)
    nx = (nxl * c - nyl * s) / norm
    ny = (nxl * s + nyl * c) / norm
    r = nx * (p[:, 0] - ex) + ny * (p[:, 1] - ey)
    jac = np.empty((len(p), 5))
    jac[:, 0] = -nx
    jac[:, 1] = -ny
    jac[:, 2] = -(nx * ct * c + ny * ct * s)
    jac[:, 3] = -(-nx * st * s + ny * st * c)
    jac[:, 4] = -(nx * (-a * ct * s - b * st * c) + ny * (a * ct * c - b * st * s))
    return r, jac


def fit_lm(points, init=None, cfg=None):
    """Levenberg-Marquardt fit of the ellipse to ``points``.

    Parameters
    ----------
    points : array_like of shape (n, 2)
    init : EllipseParams, optional
        Starting parameters; defaults to :func:`init_guess`.
    cfg : LMConfig, optional

    Returns
    -------
    (EllipseParams, FitDiagnostics)
    """
    cfg = cfg or LMConfig()
    p = _as_points(points)
    if len(p) < 5:
        raise TooFewPoints(f"need at least 5 points, got {len(p)}")
    if init is None:
        init = init_guess(p)
    v = init.as_array()
    r, jac = signed_residuals_and_jacobian(v, p)
    current = float(r @ r)
    history = [current]
    lam = cfg.lambda0
    accepted = 0
    converged = current == 0.0
    iterations = 0
    while not converged and iterations < cfg.max_iter:
        iterations += 1
        hess = jac.T @ jac
        grad = jac.T @ r
        if not np.all(np.isfinite(hess)):
            raise NumericalFailure("non-finite Jacobian")
        diag = np.diag(hess).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        while True:
            try:
                step = np.linalg.solve(hess + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                cand = v + step
                if cand[2] > 0 and cand[3] > 0:
                    r_new, jac_new = signed_residuals_and_jacobian(cand, p)
                    new = float(r_new @ r_new)
                    if new < current:
                        break
            lam *= cfg.lambda_up
            if lam > cfg.lambda_max:
                if accepted == 0 and np.linalg.norm(grad) > 1e-12 * max(1.0, current):
                    raise NumericalFailure("damping exceeded lambda_max without an accepted step")
                # no descent direction left at working precision
                converged = True
                break
        if converged:
            break
        accepted += 1
        rel = (current - new) / current
        small_step = np.linalg.norm(step) < cfg.param_tol * (np.linalg.norm(v) + cfg.param_tol)
        v, r, jac, current = cand, r_new, jac_new, new
        history.append(current)
        lam = max(lam * cfg.lambda_down, 1e-15)
        if rel < cfg.cost_tol or small_step or current == 0.0:
            converged = True
    fitted = EllipseParams.from_array(v).normalized()
    diag = FitDiagnostics(final_cost=current, iterations=iterations, converged=converged,
                          rms_residual=float(np.sqrt(current / len(p))), history=history)
    return fitted, diag


def algebraic_fit(points):
    """Direct least-squares conic fit (Halir & Flusser), used only as a fallback start."""
    p = _as_points(points)
    if len(p) < 5:
        raise TooFewPoints(f"need at least 5 points, got {len(p)}")
    mean = p.mean(axis=0)
    scale = np.sqrt(((p - mean) ** 2).sum(axis=1).mean()) or 1.0
    x, y = ((p - mean) / scale).T
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1, s2, s3 = d1.T @ d1, d1.T @ d2, d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as exc:
        raise DegenerateGeometry("singular scatter matrix") from exc
    m = s1 + s2 @ t
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    _, vecs = np.linalg.eig(m)
    vecs = np.real(vecs)
    cond = 4 * vecs[0] * vecs[2] - vecs[1] ** 2
    if not np.any(cond > 0):
        raise DegenerateGeometry("no elliptical solution")
    a1 = vecs[:, np.argmax(cond > 0)]
    A, B, C = a1
    D, E, F = t @ a1
    # centre and axes of A x^2 + B xy + C y^2 + D x + E y + F = 0
    den = B * B - 4 * A * C
    cx = (2 * C * D - B * E) / den
    cy = (2 * A * E - B * D) / den
    f0 = A * cx * cx + B * cx * cy + C * cy * cy + D * cx + E * cy + F
    evals, evecs = np.linalg.eigh(np.array([[A, B / 2], [B / 2, C]]))
    axes = np.sqrt(np.abs(-f0 / evals))
    i = int(np.argmax(axes))
    phi = np.arctan2(evecs[1, i], evecs[0, i])
    out = EllipseParams(float(cx * scale + mean[0]), float(cy * scale + mean[1]),
                        float(axes[i] * scale), float(axes[1 - i] * scale), float(phi))
    return out.normalized()


def fit_ellipse(points, cfg=None, algebraic_fallback=True):
    """Fit from the centroid initialisation, retrying from an algebraic start on failure."""
    p = _as_points(points)
    try:
        fitted, diag = fit_lm(p, init_guess(p), cfg)
        if diag.converged or not algebraic_fallback:
            return fitted, diag
    except NumericalFailure:
        if not algebraic_fallback:
            raise
    return fit_lm(p, algebraic_fit(p), cfg)

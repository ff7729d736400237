"""Per-frame orchestration: phase, limbus ellipse, rotation and cues.

Each frame runs phase prediction (or takes a supplied phase), mask
clean-up, contour tracing, curvature filtering, ellipse fitting, rotation
against the current phase's reference, and cue construction. Geometry
failures never raise; they degrade through a fallback ladder:

1. fit failure: reuse the last valid ellipse and count staleness;
2. staleness above ``n_stale``: emit no cues;
3. rotation unavailable or low confidence: drop rotation-dependent cues.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from . import cues as cue_mod
from .ellipse import LMConfig, fit_ellipse
from .errors import InputExhausted, PhacoError
from .geometry import EXCLUDE_ABOVE, curvature, filter_by_curvature, largest_component, trace_contour
from .rotation import AnnulusSpec, estimate_rotation, polar_unwrap

STAGES = ("phase", "mask", "contour", "curvature", "fit", "rotation", "cues")
RESULT_VERSION = 1


@dataclass
class PipelineConfig:
    curv_spacing: int = 5
    curv_threshold: float = 0.7
    curv_mode: str = EXCLUDE_ABOVE
    curv_normalize: str = "median"
    curvature_filter: bool = True
    lambda_in: float = 3.0
    lambda_out: float = 3.0
    angular_bins: int = 720
    radial_bins: int = None
    v_max: int = 2
    confidence_floor: float = 0.2
    n_stale: int = 15
    hysteresis: int = 3
    geometry_only: bool = False
    lm: LMConfig = field(default_factory=LMConfig)
    cue: cue_mod.CueConfig = field(default_factory=cue_mod.CueConfig)
    cue_map: cue_mod.PhaseCueMap = field(default_factory=cue_mod.PhaseCueMap)


@dataclass
class PhaseReference:
    patch: object
    ellipse: object
    index: int


@dataclass
class SessionState:
    """Causal state carried between frames of one session."""
    recognizer: object = None
    phase: int = None
    candidate: int = None
    candidate_run: int = 0
    reference: PhaseReference = None
    last_ellipse: object = None
    staleness: int = 0


@dataclass
class FrameResult:
    index: int
    phase: int
    probs: list = None
    ellipse: object = None
    theta_deg: float = None
    rotation_score: float = None
    cues: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    fallback_ellipse: bool = False
    low_confidence_rotation: bool = False
    no_cues: bool = False
    error: str = None

    def to_record(self):
        """JSON-ready record (timings are reported separately so records stay reproducible)."""
        return {
            "v": RESULT_VERSION,
            "index": int(self.index),
            "phase": None if self.phase is None else int(self.phase),
            "probs": None if self.probs is None else [float(p) for p in self.probs],
            "ellipse": None if self.ellipse is None else self.ellipse.to_dict(),
            "theta_deg": self.theta_deg,
            "rotation_score": self.rotation_score,
            "cues": [c.to_dict() for c in self.cues],
            "flags": {"fallback_ellipse": self.fallback_ellipse,
                      "low_confidence_rotation": self.low_confidence_rotation,
                      "no_cues": self.no_cues},
            "error": self.error,
        }


class _Timer:
    def __init__(self, timings):
        self.timings = timings

    def __call__(self, stage):
        self.stage = stage
        return self

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.timings[self.stage] = self.timings.get(self.stage, 0.0) + \
            (time.perf_counter() - self.t0) * 1e3
        return False


def _update_phase(state, observed, hysteresis):
    # a new phase is adopted after ``hysteresis`` consecutive agreeing frames
    if state.phase is None:
        state.phase = observed
        state.candidate, state.candidate_run = observed, hysteresis
        return True
    if observed == state.candidate:
        state.candidate_run += 1
    else:
        state.candidate, state.candidate_run = observed, 1
    if state.candidate != state.phase and state.candidate_run >= max(hysteresis, 1):
        state.phase = state.candidate
        return True
    return False


def fit_limbus(mask, cfg):
    """Mask to ellipse: largest component, contour, curvature filter, LM fit."""
    comp = largest_component(mask)
    contour = trace_contour(comp)
    pts = contour.points
    if cfg.curvature_filter:
        prof = curvature(contour, cfg.curv_spacing)
        pts = filter_by_curvature(contour, prof, cfg.curv_threshold, cfg.curv_mode, cfg.curv_normalize)
    fitted, _ = fit_ellipse(pts, cfg.lm)
    return fitted


def process_frame(state, bundle, cfg=None, phase=None):
    """Run every stage on one frame.

    Parameters
    ----------
    state : SessionState
        Updated in place and returned.
    bundle : FrameBundle
    cfg : PipelineConfig
    phase : int, optional
        Externally supplied phase (geometry-only mode); adopted without
        hysteresis.

    Returns
    -------
    (SessionState, FrameResult)
    """
    cfg = cfg or PipelineConfig()
    timings = {s: 0.0 for s in STAGES}
    tick = _Timer(timings)
    probs = None

    with tick("phase"):
        if phase is None and not cfg.geometry_only and state.recognizer is not None \
                and bundle.feature is not None:
            probs = state.recognizer.predict(bundle.feature)
            changed = _update_phase(state, int(np.argmax(probs)), cfg.hysteresis)
        elif phase is not None:
            changed = _update_phase(state, int(phase), 1)
        else:
            changed = _update_phase(state, state.phase if state.phase is not None else 0, 1)
    if changed:
        state.reference = None
    result = FrameResult(index=bundle.index, phase=state.phase,
                         probs=None if probs is None else list(probs), timings=timings)

    ellipse = None
    try:
        with tick("mask"):
            comp = largest_component(bundle.mask)
        with tick("contour"):
            contour = trace_contour(comp)
        pts = contour.points
        if cfg.curvature_filter:
            with tick("curvature"):
                prof = curvature(contour, cfg.curv_spacing)
                pts = filter_by_curvature(contour, prof, cfg.curv_threshold, cfg.curv_mode,
                                          cfg.curv_normalize)
        with tick("fit"):
            ellipse, _ = fit_ellipse(pts, cfg.lm)
            ellipse.validate()
        state.last_ellipse = ellipse
        state.staleness = 0
    except PhacoError as exc:
        result.error = type(exc).__name__
        result.fallback_ellipse = True
        state.staleness += 1
        ellipse = state.last_ellipse
    result.ellipse = ellipse

    theta = None
    if ellipse is not None and bundle.gray is not None:
        with tick("rotation"):
            try:
                spec = AnnulusSpec(ellipse, cfg.lambda_in, cfg.lambda_out)
                if state.reference is None:
                    if not result.fallback_ellipse:
                        bins = cfg.radial_bins or spec.default_radial_bins()
                        patch = polar_unwrap(bundle.gray, spec, cfg.angular_bins, bins)
                        if patch.std > 0:
                            state.reference = PhaseReference(patch, ellipse, bundle.index)
                            theta, result.rotation_score = 0.0, 1.0
                else:
                    ref = state.reference.patch
                    cur = polar_unwrap(bundle.gray, spec, ref.angular_bins, ref.radial_bins)
                    est = estimate_rotation(ref, cur, cfg.v_max, cfg.confidence_floor)
                    result.rotation_score = est.peak_score
                    if est.low_confidence:
                        result.low_confidence_rotation = True
                    else:
                        theta = est.theta_deg
            except PhacoError as exc:
                result.low_confidence_rotation = True
                result.error = result.error or type(exc).__name__
    result.theta_deg = theta

    with tick("cues"):
        if ellipse is not None and state.staleness <= cfg.n_stale:
            result.cues = cue_mod.cues_for_phase(state.phase, ellipse, theta, cfg.cue_map, cfg.cue,
                                                 skip_missing=True)
    result.no_cues = not result.cues
    return state, result


@dataclass
class SessionSummary:
    frames: int
    total_ms: float
    fps: float
    stage_ms: dict
    fallback_ellipse: int
    low_confidence_rotation: int
    no_cues: int

    def to_dict(self):
        return {"frames": self.frames, "total_ms": self.total_ms, "fps": self.fps,
                "stage_ms": self.stage_ms, "fallback_ellipse": self.fallback_ellipse,
                "low_confidence_rotation": self.low_confidence_rotation, "no_cues": self.no_cues}


def run_session(stream, cfg=None, sinks=(), recognizer=None, phases=None):
    """Process frames strictly in order and summarise throughput.

    Parameters
    ----------
    stream : iterable of FrameBundle
    sinks : iterable of callables
        Each receives every FrameResult as soon as it is produced.
    recognizer : LsSatStream, optional
    phases : sequence or mapping, optional
        Externally supplied phase per frame index (geometry-only runs).
    """
    cfg = cfg or PipelineConfig()
    state = SessionState(recognizer=recognizer)
    per_stage = {s: [] for s in STAGES}
    counts = {"fallback_ellipse": 0, "low_confidence_rotation": 0, "no_cues": 0}
    n = 0
    start = time.perf_counter()
    last_index = None
    for bundle in stream:
        if last_index is not None and bundle.index <= last_index:
            raise InputExhausted(f"frame {bundle.index} out of order after {last_index}")
        last_index = bundle.index
        ph = None if phases is None else phases[bundle.index]
        state, res = process_frame(state, bundle, cfg, ph)
        for s in STAGES:
            per_stage[s].append(res.timings.get(s, 0.0))
        for k in counts:
            counts[k] += bool(getattr(res, k))
        for sink in sinks:
            sink(res)
        n += 1
    total = (time.perf_counter() - start) * 1e3
    stage_ms = {s: {"mean": float(np.mean(v)) if v else 0.0, "sd": float(np.std(v)) if v else 0.0}
                for s, v in per_stage.items()}
    return SessionSummary(frames=n, total_ms=total, fps=(n / (total / 1e3)) if n and total > 0 else 0.0,
                          stage_ms=stage_ms, **counts)

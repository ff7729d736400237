import numpy as np
import pytest

from phacoar.cues import CCR, FLC, PIC, RRL
from phacoar.errors import InputExhausted
from phacoar.metrics import angle_difference
from phacoar.pipeline import PipelineConfig, SessionState, process_frame, run_session
from phacoar.synth import FrameBundle, Occluder, SceneSpec, gen_scene


class ScriptedRecognizer:
    """Returns one-hot probabilities for a scripted label sequence."""

    def __init__(self, labels, k):
        self.labels = list(labels)
        self.k = k

    def predict(self, feature):
        p = np.zeros(self.k)
        p[self.labels.pop(0)] = 1.0
        return p


def collect(frames, cfg=None, **kw):
    out = []
    summary = run_session(frames, cfg, [out.append], **kw)
    return out, summary


def test_first_frame_of_phase_has_zero_rotation():
    frames, _ = gen_scene(SceneSpec(rotations=[4.0, 6.0], phases=[0, 0], seed=1))
    res, _ = collect(frames, phases=[0, 0])
    assert res[0].theta_deg == 0.0 and res[0].rotation_score == 1.0
    assert res[1].theta_deg == pytest.approx(2.0, abs=0.5)
    assert {FLC, RRL} <= {c.kind for c in res[0].cues}


def test_phase_change_resets_reference():
    frames, truths = gen_scene(SceneSpec(rotations=[0.0, 5.0, 9.0, 12.0], phases=[0, 0, 1, 1], seed=2))
    res, _ = collect(frames, phases=[0, 0, 1, 1])
    assert res[2].theta_deg == 0.0
    assert res[3].theta_deg == pytest.approx(truths[3].theta_rel, abs=0.5)


def test_empty_mask_falls_back_to_last_ellipse():
    spec = SceneSpec(rotations=[0.0] * 3, phases=[0] * 3, empty_frames=(1,), seed=3)
    frames, _ = gen_scene(spec)
    res, summary = collect(frames, phases=[0] * 3)
    assert res[1].fallback_ellipse and res[1].error == "EmptyMask"
    assert res[1].ellipse is res[0].ellipse
    assert res[1].cues and not res[2].fallback_ellipse
    assert summary.fallback_ellipse == 1


def test_staleness_ladder_ends_in_no_cues():
    n = 6
    spec = SceneSpec(rotations=[0.0] * n, phases=[2] * n, empty_frames=tuple(range(1, n)), seed=4)
    frames, _ = gen_scene(spec)
    res, summary = collect(frames, PipelineConfig(n_stale=2), phases=[2] * n)
    assert [r.fallback_ellipse for r in res] == [False] + [True] * (n - 1)
    assert [bool(r.cues) for r in res] == [True, True, True, False, False, False]
    assert all(r.no_cues for r in res[3:]) and summary.no_cues == 3
    assert [c.kind for c in res[1].cues] == [FLC, CCR]


def test_occluded_frame_drops_rotation_cues():
    # a reference taken from a held ellipse is never created
    spec = SceneSpec(rotations=[0.0, 1.0], phases=[0, 0], empty_frames=(0,), seed=5)
    frames, _ = gen_scene(spec)
    res, _ = collect(frames, phases=[0, 0])
    assert res[0].ellipse is None and res[0].no_cues
    assert res[1].theta_deg == 0.0


def test_end_to_end_against_truth():
    n = 60
    rng = np.random.default_rng(0)
    theta = np.cumsum(rng.uniform(-0.6, 0.6, n))
    phases = [0] * 20 + [3] * 20 + [7] * 20
    spec = SceneSpec(rotations=list(theta), phases=phases, seed=6, noise_sigma=0.5, spike_count=2,
                     occluders=[Occluder(30, 30, 80, 80, start=25, stop=30)])
    frames, truths = gen_scene(spec)
    res, summary = collect(frames, phases=phases)
    assert summary.frames == n and summary.fps > 0
    for r, t in zip(res, truths):
        assert r.phase == t.phase
        assert np.hypot(r.ellipse.ox - t.ellipse.ox, r.ellipse.oy - t.ellipse.oy) < 1.5
        assert r.theta_deg is not None
        assert angle_difference(r.theta_deg, t.theta_rel) < 0.5
    assert {c.kind for c in res[5].cues} >= {FLC, RRL, PIC}


def test_empty_stream_and_out_of_order():
    res, summary = collect([])
    assert res == [] and summary.frames == 0 and summary.fps == 0.0
    frames, _ = gen_scene(SceneSpec(rotations=[0.0, 0.0], phases=[0, 0]))
    with pytest.raises(InputExhausted):
        collect([frames[1], frames[0]], phases=[0, 0])


def test_recognizer_hysteresis():
    frames, _ = gen_scene(SceneSpec(rotations=[0.0] * 9, phases=[0] * 9, seed=7))
    for b in frames:
        b.feature = np.zeros(1)
    script = [0, 0, 1, 0, 1, 1, 1, 1, 2]
    res, _ = collect(frames, PipelineConfig(hysteresis=3), recognizer=ScriptedRecognizer(script, 3))
    assert [r.phase for r in res] == [0, 0, 0, 0, 0, 0, 1, 1, 1]
    assert res[0].probs == [1.0, 0.0, 0.0]
    # the reference resets when the adopted phase changes
    assert res[6].theta_deg == 0.0


def test_to_record_has_no_timings():
    frames, _ = gen_scene(SceneSpec())
    state, r = process_frame(SessionState(), frames[0], PipelineConfig(), phase=0)
    rec = r.to_record()
    assert rec["v"] == 1 and "timings" not in rec
    assert set(r.timings) >= {"mask", "fit", "rotation", "cues"}
    assert state.last_ellipse is r.ellipse


def test_gray_missing_skips_rotation():
    frames, _ = gen_scene(SceneSpec())
    b = FrameBundle(index=0, mask=frames[0].mask, gray=None)
    _, r = process_frame(SessionState(), b, phase=0)
    assert r.theta_deg is None and [c.kind for c in r.cues] == [FLC]

import numpy as np
import pytest

from phacoar.ellipse import EllipseParams, residuals
from phacoar.geometry import largest_component, trace_contour
from phacoar.rotation import AnnulusSpec, polar_unwrap
from phacoar.synth import (FeatureGenSpec, Occluder, SceneSpec, gen_features, gen_scene,
                           phase_centers, relative_rotations, render_mask)


def test_scene_is_deterministic():
    spec = SceneSpec(rotations=[0.0, 3.0, 6.0], phases=[0, 0, 1], seed=9, noise_sigma=1.0, spike_count=2)
    a, ta = gen_scene(spec)
    b, tb = gen_scene(spec)
    for x, y in zip(a, b):
        assert x.mask.tobytes() == y.mask.tobytes() and x.gray.tobytes() == y.gray.tobytes()
    other, _ = gen_scene(SceneSpec(rotations=[0.0, 3.0, 6.0], phases=[0, 0, 1], seed=10,
                                   noise_sigma=1.0, spike_count=2))
    assert other[1].gray.tobytes() != a[1].gray.tobytes()
    # a prefix renders the same frames
    prefix, _ = gen_scene(spec, 2)
    assert prefix[1].mask.tobytes() == a[1].mask.tobytes()


def test_clean_mask_contour_lies_on_ellipse():
    e = EllipseParams(128.3, 121.7, 80.0, 62.0, 0.6)
    mask = render_mask(e, 256, 256)
    c = trace_contour(largest_component(mask))
    assert residuals(e, c.points.astype(float)).max() <= 1.0


def test_rotation_is_polar_shift():
    spec = SceneSpec(rotations=[0.0, 7.0], phases=[0, 0], seed=1)
    frames, truths = gen_scene(spec)
    ann = AnnulusSpec(spec.ellipse)
    a = polar_unwrap(frames[0].gray, ann, angular_bins=360)
    b = polar_unwrap(frames[1].gray, ann, angular_bins=360)
    both = a.valid & b.valid
    rolled = np.roll(a.values, 7, axis=1)
    assert np.sqrt(np.mean((rolled - b.values)[both] ** 2)) < \
        np.sqrt(np.mean((a.values - b.values)[both] ** 2)) / 3
    assert truths[1].theta_rel == 7.0


def test_relative_rotations():
    assert relative_rotations([5, 7, 9, 2, 4], [0, 0, 0, 1, 1]) == [0, 2, 4, 0, 2]
    assert relative_rotations([], []) == []


def test_occluder_and_empty_frames():
    spec = SceneSpec(rotations=[0.0] * 3, phases=[0] * 3,
                     occluders=[Occluder(100, 100, 160, 160, start=1, stop=2)], empty_frames=(2,))
    frames, truths = gen_scene(spec)
    assert frames[0].mask[120, 120] and not frames[1].mask[120, 120]
    assert not frames[2].mask.any()
    assert truths[2].mask.any()


def test_scene_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(rotations=[0.0], phases=[0, 1])
    with pytest.raises(ValueError):
        gen_scene(SceneSpec(), 5)


def test_features_follow_durations():
    spec = FeatureGenSpec(K_s=3, d=8, seed=2)
    seq = gen_features(spec, 1, durations=[[2, 5, 3]])[0]
    assert seq.labels.tolist() == [0, 0, 1, 1, 1, 1, 1, 2, 2, 2]
    assert seq.features.shape == (10, 8)


def test_features_zero_sigma_are_centers():
    spec = FeatureGenSpec(K_s=4, d=6, seed=3, sigma=0.0, boundary_sigma=0.0, duration=(3, 5))
    seq = gen_features(spec, 1)[0]
    assert np.array_equal(seq.features, phase_centers(spec)[seq.labels])


def test_features_nearest_center_separable():
    spec = FeatureGenSpec(K_s=5, d=256, seed=4, sigma=0.5, boundary_sigma=0.5, duration=(10, 20))
    seq = gen_features(spec, 2)[1]
    c = phase_centers(spec)
    nearest = np.argmin(((seq.features[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
    assert np.array_equal(nearest, seq.labels)


def test_feature_boundary_flags():
    spec = FeatureGenSpec(K_s=2, d=2, seed=0, boundary_width=2)
    seq = gen_features(spec, 1, durations=[[6, 6]])[0]
    assert seq.boundary.tolist() == [False] * 4 + [True] * 4 + [False] * 4
    with pytest.raises(ValueError):
        FeatureGenSpec(duration=(0, 3))

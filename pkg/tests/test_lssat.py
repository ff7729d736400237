import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phacoar.errors import DivergenceDetected, EmptyClass, ShapeMismatch, ValidationError
from phacoar.lssat import (FrameLinearBaseline, LsSatConfig, LsSatStream, LsSatWeights,
                           TrainConfig, forward_sequence, inverse_freq_weights, long_short_cross,
                           phase_ce_loss, reduce_dim, seg_hybrid_loss, self_attention_block,
                           sf_loss, spatiotemporal_cross, train_toy, weighted_ce_loss)
from phacoar.lssat.layers import SHARED_CHUNK, attention_backward, attention_forward, layer_norm_forward
from phacoar.lssat.losses import dice_term
from phacoar.lssat.train import Adam, predict_sequence
from phacoar.seeding import make_rng
from phacoar.synth import FeatureGenSpec, gen_features

SMALL = LsSatConfig(d_raw=24, kappa=3, tau=4, n_self=1, n_cross=2, heads=2, K_s=3)


def perturbed(cfg, seed=0, scale=0.1):
    w = LsSatWeights.init(cfg, seed=seed)
    rng = make_rng(seed, 99)
    for k in w.tensors:
        w.tensors[k] = w.tensors[k] + scale * rng.normal(size=w.tensors[k].shape)
    return w


def test_config_defaults():
    cfg = LsSatConfig()
    assert cfg.d_sf == 128
    with pytest.raises(ValidationError):
        LsSatConfig(d_raw=100, kappa=16).validate()
    with pytest.raises(ValidationError):
        LsSatConfig(kappa=4, heads=3).validate()


def test_reduce_dim_examples():
    w = LsSatWeights.init(SMALL, seed=1)
    w.tensors["reduce.b"][:] = 0
    assert np.all(reduce_dim(np.zeros(24), w) == 0)
    e = np.zeros(24)
    e[5] = 1.0
    assert np.allclose(reduce_dim(e, w), w.tensors["reduce.W"][5])
    assert reduce_dim(np.zeros(2048), LsSatWeights.init(LsSatConfig())).shape == (128,)
    with pytest.raises(ShapeMismatch):
        reduce_dim(np.zeros(23), w)


def test_single_frame_attention():
    w = perturbed(SMALL)
    s = make_rng(1).normal(size=(1, 8))
    out, attn = self_attention_block(s, w, "long.0")
    assert np.all(attn == 1.0)
    p = w.tensors
    xn, _ = layer_norm_forward(s, p["long.0.lnq.g"], p["long.0.lnq.b"])
    v = xn @ p["long.0.Wv"] + p["long.0.bv"]
    assert np.allclose(out, s + v @ p["long.0.Wo"] + p["long.0.bo"], atol=1e-12)


def test_long_short_cross_tied_matches_self_attention():
    w = perturbed(SMALL)
    p = w.tensors
    p["ls.0.lnkv.g"] = p["ls.0.lnq.g"].copy()
    p["ls.0.lnkv.b"] = p["ls.0.lnq.b"].copy()
    s = make_rng(2).normal(size=(4, 8))
    a, _ = long_short_cross(s, s, w, "ls.0")
    b, _ = self_attention_block(s, w, "ls.0", causal=False)
    assert np.abs(a - b).max() <= 1e-6


def test_spatiotemporal_single_key():
    w = perturbed(SMALL)
    p = w.tensors
    rng = make_rng(3)
    q, kv = rng.normal(size=8), rng.normal(size=(1, 8))
    out, attn = spatiotemporal_cross(q, kv, w, "st.0")
    kn, _ = layer_norm_forward(kv, p["st.0.lnkv.g"], p["st.0.lnkv.b"])
    v = kn @ p["st.0.Wv"] + p["st.0.bv"]
    assert np.allclose(attn, 1.0)
    assert np.allclose(out, q + (v @ p["st.0.Wo"] + p["st.0.bo"])[0], atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 3 * SHARED_CHUNK + 5), st.integers(1, 4), st.integers(0, 10_000))
def test_shared_key_attention_matches_dense(b, n, seed):
    # the chunked shared-key path must equal the per-batch dense path
    rng = make_rng(5, seed)
    m, d, heads = b + 3, 8, 2
    q = rng.normal(size=(b, n, d))
    k, v = rng.normal(size=(1, m, d)), rng.normal(size=(1, m, d))
    mask = (np.arange(m)[None, None, :] <= np.arange(b)[:, None, None] + 1) & np.ones((b, n, 1), bool)
    out, cache = attention_forward(q, k, v, mask, heads)
    kb, vb = np.repeat(k, b, axis=0), np.repeat(v, b, axis=0)
    ref, rcache = attention_forward(q, kb, vb, mask, heads)
    assert np.allclose(out, ref, atol=1e-12)
    dout = rng.normal(size=out.shape)
    dq, dk, dv = attention_backward(dout, cache)
    rq, rk, rv = attention_backward(dout, rcache)
    assert np.allclose(dq, rq, atol=1e-12)
    assert np.allclose(dk, rk.sum(axis=0, keepdims=True), atol=1e-12)
    assert np.allclose(dv, rv.sum(axis=0, keepdims=True), atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 25), st.integers(0, 10_000), st.booleans())
def test_online_prefix_replay(t, seed, literal):
    cfg = LsSatConfig(d_raw=24, kappa=3, tau=4, n_self=1, n_cross=1,
                      heads=1 if literal else 2, K_s=3, literal=literal)
    w = perturbed(cfg, seed % 7)
    x = make_rng(6, seed).normal(size=(t + 5, 24))
    full = forward_sequence(w, x)
    assert np.allclose(forward_sequence(w, x[:t]), full[:t], atol=1e-12)
    assert np.allclose(full.sum(axis=1), 1.0)
    stream = LsSatStream(w)
    online = np.array([stream.predict(f) for f in x])
    assert np.allclose(online, full, atol=1e-12)


def test_future_frames_do_not_change_past():
    w = perturbed(SMALL)
    rng = make_rng(7)
    x = rng.normal(size=(12, 24))
    y = x.copy()
    y[8:] = rng.normal(size=(4, 24)) * 10
    assert np.array_equal(forward_sequence(w, x)[:8], forward_sequence(w, y)[:8])


def test_weights_roundtrip():
    w = perturbed(SMALL)
    back = LsSatWeights.from_bytes(w.to_bytes())
    assert back.config == w.config
    assert back.names() == w.names()
    assert all(np.array_equal(back[k], w[k]) for k in w.names())
    with pytest.raises(ValidationError):
        LsSatWeights.from_bytes(b"nope")


def test_phase_ce_examples():
    assert phase_ce_loss(np.eye(10)[3], 3) == pytest.approx(0.0, abs=1e-12)
    assert phase_ce_loss(np.full(10, 0.1), 4) == pytest.approx(np.log(10) / 10, abs=1e-12)
    assert phase_ce_loss(np.eye(10)[0] * (1 - 9e-6) + 1e-6, 5) > 1.0


def test_seg_hybrid_examples():
    gt = np.zeros((6, 6))
    gt[1:4, 2:5] = 1
    assert seg_hybrid_loss(gt, gt) == pytest.approx(0.0, abs=1e-6)
    half = np.full((6, 6), 0.5)
    # two channels, each 0.5 everywhere: sum(p g) = 0.5 * 36, sum(p) = 36, sum(g) = 36
    assert dice_term(np.stack([1 - half, half]), np.stack([1 - gt, gt])) == pytest.approx(0.5, abs=1e-6)
    empty = np.zeros((2, 4, 4))
    assert dice_term(empty, empty) == 0.0
    lit = seg_hybrid_loss(half, gt, literal=True)
    assert np.isfinite(lit) and lit > 0
    total = sf_loss(np.full(3, 1 / 3), 0, gt, gt, beta=0.5)
    assert total == pytest.approx(np.log(3) / 3, abs=1e-6)


def test_inverse_freq_examples():
    assert np.allclose(inverse_freq_weights([5, 5, 5]), 1.0)
    assert np.allclose(inverse_freq_weights([100, 50]), [2 / 3, 4 / 3])
    with pytest.raises(EmptyClass):
        inverse_freq_weights([3, 0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 1000), min_size=2, max_size=10), st.integers(2, 9))
def test_inverse_freq_scale_invariant(counts, s):
    a = inverse_freq_weights(counts)
    assert np.allclose(a, inverse_freq_weights(np.asarray(counts) * s))
    assert a.mean() == pytest.approx(1.0)
    assert np.allclose(a * counts, (a * counts)[0])


def test_weighted_ce_reduces_to_plain():
    rng = make_rng(8)
    p = rng.dirichlet(np.ones(4), size=6)
    y = rng.integers(0, 4, 6)
    assert weighted_ce_loss(p, y, np.ones(4)) == pytest.approx(float(phase_ce_loss(p, y).sum()))


def test_adam_first_step_is_lr_sized():
    params = {"x": np.array([1.0, -2.0])}
    opt = Adam(params, lr=0.1)
    opt.step(params, {"x": np.array([3.0, -0.5])})
    assert np.allclose(params["x"], [0.9, -1.9], atol=1e-6)


def test_train_reduces_loss_and_is_deterministic():
    spec = FeatureGenSpec(K_s=3, d=24, seed=1, duration=(8, 12))
    data = [(s.features, s.labels) for s in gen_features(spec, 3)]
    cfg = LsSatConfig(d_raw=24, kappa=3, tau=4, n_self=1, n_cross=1, heads=2, K_s=3)
    a = train_toy(data, cfg, TrainConfig(lr=5e-3, epochs=15, seed=2))
    b = train_toy(data, cfg, TrainConfig(lr=5e-3, epochs=15, seed=2))
    assert a.loss_curve[-1] < a.loss_curve[0]
    assert a.weights.to_bytes() == b.weights.to_bytes()
    acc = np.mean([np.mean(predict_sequence(a.weights, f) == l) for f, l in data])
    assert acc > 0.9


def test_train_divergence_detected():
    spec = FeatureGenSpec(K_s=2, d=8, seed=1, duration=(4, 6))
    data = [(s.features * np.inf, s.labels) for s in gen_features(spec, 1)]
    cfg = LsSatConfig(d_raw=8, kappa=2, tau=2, n_self=1, n_cross=1, heads=1, K_s=2)
    with pytest.raises(DivergenceDetected):
        with np.errstate(all="ignore"):
            train_toy(data, cfg, TrainConfig(epochs=1))


def test_linear_baseline_separable():
    spec = FeatureGenSpec(K_s=4, d=16, seed=2, sigma=0.05, duration=(10, 15))
    data = [(s.features, s.labels) for s in gen_features(spec, 2)]
    base = FrameLinearBaseline().fit(data)
    assert all(np.array_equal(base.predict(f), l) for f, l in data)

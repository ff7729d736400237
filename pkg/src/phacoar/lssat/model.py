"""Long-short spatiotemporal attention aggregator for online phase recognition.

Data flow for the prediction at frame ``t`` (all frames ``<= t`` only)::

    r_i   = W_reduce s_i + b                     (2048 -> 2048 / kappa)
    S_lr  = long self-attention stack over r_1..r_t        (causal)
    S_sr  = short self-attention stack over r_{t-tau+1}..r_t (causal)
    S_ls  = long-short cross stack: queries S_sr, keys/values S_lr
    p_hat = spatiotemporal cross stack: query r_t, keys/values S_ls
    p     = softmax(W_p LN(p_hat) + b_p)

Because the self-attention stacks are causal and every other operation is
row-wise, one forward pass over a whole sequence yields exactly the online
prediction for every frame; training uses that pass and
:class:`LsSatStream` serves frames one at a time.
"""
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ShapeMismatch, ValidationError
from ..seeding import make_rng
from .layers import (block_attention, block_backward, block_forward, layer_norm_backward,
                     layer_norm_forward, linear_backward, linear_forward, softmax)

MAGIC = b"LSSAT1"
STREAM_INIT = 11


@dataclass(frozen=True)
class LsSatConfig:
    d_raw: int = 2048
    kappa: int = 16
    tau: int = 20
    n_self: int = 4
    n_cross: int = 8
    heads: int = 8
    K_s: int = 10
    literal: bool = False

    @property
    def d_sf(self):
        return self.d_raw // self.kappa

    def validate(self):
        if self.kappa < 1 or self.d_raw % self.kappa:
            raise ShapeMismatch(f"kappa={self.kappa} must divide d_raw={self.d_raw}")
        if self.literal and self.heads != 1:
            raise ValidationError("literal mode uses a single head")
        if self.d_sf % self.heads:
            raise ShapeMismatch(f"heads={self.heads} must divide d_sf={self.d_sf}")
        if self.tau < 1 or self.K_s < 1 or self.n_self < 0 or self.n_cross < 0:
            raise ValidationError("tau, K_s must be >= 1 and layer counts >= 0")
        return self


STACKS = ("long", "short", "ls", "st")


def _stack_depth(cfg, stack):
    return cfg.n_self if stack in ("long", "short") else cfg.n_cross


@dataclass
class LsSatWeights:
    config: LsSatConfig
    tensors: dict

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return sorted(self.tensors)

    def copy(self):
        return LsSatWeights(self.config, {k: v.copy() for k, v in self.tensors.items()})

    @classmethod
    def init(cls, config, seed=0):
        """Random initialisation (Xavier-normal projections, unit layer norms)."""
        cfg = config.validate()
        rng = make_rng(seed, STREAM_INIT)
        d = cfg.d_sf
        t = {
            "reduce.W": rng.normal(0.0, np.sqrt(1.0 / cfg.d_raw), (cfg.d_raw, d)),
            "reduce.b": np.zeros(d),
            "head.W": rng.normal(0.0, np.sqrt(2.0 / (d + cfg.K_s)), (d, cfg.K_s)),
            "head.b": np.zeros(cfg.K_s),
        }
        if not cfg.literal:
            t["head.ln.g"] = np.ones(d)
            t["head.ln.b"] = np.zeros(d)
            for stack in STACKS:
                for i in range(_stack_depth(cfg, stack)):
                    pre = f"{stack}.{i}."
                    t[pre + "lnq.g"] = np.ones(d)
                    t[pre + "lnq.b"] = np.zeros(d)
                    if stack in ("ls", "st"):
                        t[pre + "lnkv.g"] = np.ones(d)
                        t[pre + "lnkv.b"] = np.zeros(d)
                    for name in ("Wq", "Wk", "Wv", "Wo"):
                        t[pre + name] = rng.normal(0.0, np.sqrt(1.0 / d), (d, d))
                    for name in ("bq", "bv", "bo"):
                        t[pre + name] = np.zeros(d)
        return cls(cfg, t)

    # -- serialisation -------------------------------------------------

    def to_bytes(self):
        """``LSSAT1`` container: named little-endian f64 tensors.

        Each record is ``u32 name_len, name, u32 rank, rank * u32 dims,
        f64 payload``. Config fields are stored as rank-0 tensors named
        ``config.<field>``.
        """
        out = [MAGIC]
        items = [(f"config.{f.name}", np.array(float(getattr(self.config, f.name))))
                 for f in fields(self.config)]
        items += [(k, self.tensors[k]) for k in self.names()]
        for name, arr in items:
            raw = name.encode("utf-8")
            arr = np.asarray(arr, dtype="<f8")
            out.append(struct.pack("<I", len(raw)) + raw)
            out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(arr.tobytes(order="C"))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data):
        if data[:len(MAGIC)] != MAGIC:
            raise ValidationError("not an LSSAT1 weight file")
        pos = len(MAGIC)
        cfg_vals, tensors = {}, {}
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims).copy()
            pos += 8 * count
            if name.startswith("config."):
                cfg_vals[name[len("config."):]] = float(arr)
            else:
                tensors[name] = arr
        kinds = {f.name: f.type for f in fields(LsSatConfig)}
        cfg = LsSatConfig(**{k: (bool(v) if kinds[k] in (bool, "bool") else int(v))
                             for k, v in cfg_vals.items() if k in kinds})
        return cls(cfg.validate(), tensors)


# ------------------------------------------------------------ operations


def reduce_dim(raw, weights):
    """Linear reduction of raw spatial features (last axis) to ``d_sf``."""
    raw = np.asarray(raw, dtype=float)
    w = weights["reduce.W"]
    if raw.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"feature dim {raw.shape[-1]} != {w.shape[0]}")
    return raw @ w + weights["reduce.b"]


def causal_mask(n):
    return np.tril(np.ones((n, n), dtype=bool))


def _prefix(name):
    # block names are accepted with or without the trailing dot ("long.0")
    return name if name.endswith(".") else name + "."


def self_attention_block(S, weights, prefix, heads=None, causal=True, literal=None):
    """Apply one self-attention block to ``S`` of shape ``(n, d)``.

    Returns ``(output, attention)`` with attention of shape ``(heads, n, n)``.
    """
    cfg = weights.config
    prefix = _prefix(prefix)
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[1] != cfg.d_sf:
        raise ShapeMismatch(f"expected (n, {cfg.d_sf}), got {S.shape}")
    lit = cfg.literal if literal is None else literal
    mask = causal_mask(len(S))[None] if causal else None
    out, cache = block_forward(weights.tensors, prefix, S[None], None, mask,
                               1 if lit else (heads or cfg.heads), lit)
    return out[0], block_attention(cache)[0]


def long_short_cross(S_sr, S_lr, weights, prefix, heads=None, literal=None):
    """Cross-attention with queries from the short window and keys/values from the long range."""
    cfg = weights.config
    prefix = _prefix(prefix)
    S_sr = np.asarray(S_sr, dtype=float)
    S_lr = np.asarray(S_lr, dtype=float)
    if S_sr.ndim != 2 or S_lr.ndim != 2 or S_sr.shape[1] != S_lr.shape[1]:
        raise ShapeMismatch("short and long features must be (n, d) with equal d")
    if len(S_sr) > len(S_lr):
        raise ShapeMismatch("short window longer than long range")
    lit = cfg.literal if literal is None else literal
    out, cache = block_forward(weights.tensors, prefix, S_sr[None], S_lr[None], None,
                               1 if lit else (heads or cfg.heads), lit)
    return out[0], block_attention(cache)[0]


def spatiotemporal_cross(s_t, S_ls, weights, prefix, heads=None, literal=None):
    """Single-query cross-attention of the current spatial feature over ``S_ls``."""
    cfg = weights.config
    prefix = _prefix(prefix)
    s_t = np.asarray(s_t, dtype=float)
    S_ls = np.asarray(S_ls, dtype=float)
    if s_t.shape != (S_ls.shape[-1],):
        raise ShapeMismatch("query and key feature dims differ")
    lit = cfg.literal if literal is None else literal
    out, cache = block_forward(weights.tensors, prefix, s_t[None, None], S_ls[None], None,
                               1 if lit else (heads or cfg.heads), lit)
    return out[0, 0], block_attention(cache)[0, :, 0]


# ------------------------------------------------------- whole sequences


def _window_index(T, tau):
    # frames covered by the window ending at each t; -1 marks warm-up padding
    idx = np.arange(T)[:, None] - (tau - 1) + np.arange(tau)[None, :]
    return np.where(idx >= 0, idx, -1)


def forward_sequence(weights, features, keep_cache=False):
    """Online predictions for every frame of a sequence.

    Parameters
    ----------
    weights : LsSatWeights
    features : (T, d_raw) array

    Returns
    -------
    probs : (T, K_s) array, or ``(probs, cache)`` when ``keep_cache``.
    """
    cfg = weights.config
    P = weights.tensors
    feats = np.asarray(features, dtype=float)
    if feats.ndim != 2 or feats.shape[1] != cfg.d_raw:
        raise ShapeMismatch(f"features must be (T, {cfg.d_raw}), got {feats.shape}")
    T, tau = len(feats), cfg.tau
    heads = 1 if cfg.literal else cfg.heads
    lit = cfg.literal
    caches = {}

    r, _ = linear_forward(feats, P["reduce.W"], P["reduce.b"])

    x = r[None]
    mask = causal_mask(T)[None]
    for i in range(cfg.n_self):
        x, caches[f"long.{i}"] = block_forward(P, f"long.{i}.", x, None, mask, heads, lit)
    s_lr = x

    widx = _window_index(T, tau)
    wvalid = widx >= 0
    w = r[np.maximum(widx, 0)] * wvalid[..., None]
    short_mask = causal_mask(tau)[None] & (wvalid[:, None, :] | np.eye(tau, dtype=bool)[None])
    for i in range(cfg.n_self):
        w, caches[f"short.{i}"] = block_forward(P, f"short.{i}.", w, None, short_mask, heads, lit)

    ls_mask = (np.arange(T)[None, :] <= np.arange(T)[:, None])[:, None, :]
    ls_mask = np.broadcast_to(ls_mask, (T, tau, T))
    for i in range(cfg.n_cross):
        w, caches[f"ls.{i}"] = block_forward(P, f"ls.{i}.", w, s_lr, ls_mask, heads, lit)

    q = r[:, None, :]
    st_mask = wvalid[:, None, :]
    for i in range(cfg.n_cross):
        q, caches[f"st.{i}"] = block_forward(P, f"st.{i}.", q, w, st_mask, heads, lit)
    p_hat = q[:, 0, :]

    if lit:
        h, ln = p_hat, None
    else:
        h, ln = layer_norm_forward(p_hat, P["head.ln.g"], P["head.ln.b"])
    logits, _ = linear_forward(h, P["head.W"], P["head.b"])
    probs = softmax(logits)
    if not keep_cache:
        return probs
    cache = dict(caches=caches, feats=feats, r=r, widx=widx, wvalid=wvalid, h=h, ln=ln,
                 s_lr=s_lr, w=w)
    return probs, cache


def backward_sequence(weights, cache, dlogits):
    """Gradients of all tensors given ``dL/dlogits`` of shape ``(T, K_s)``."""
    cfg = weights.config
    P = weights.tensors
    C = cache["caches"]
    grads = {}
    dh, grads["head.W"], grads["head.b"] = linear_backward(dlogits, cache["h"], P["head.W"])
    if cfg.literal:
        dp = dh
    else:
        dp, grads["head.ln.g"], grads["head.ln.b"] = layer_norm_backward(dh, cache["ln"])

    dq = dp[:, None, :]
    dw = np.zeros_like(cache["w"])
    for i in reversed(range(cfg.n_cross)):
        dq, dkv = block_backward(dq, P, f"st.{i}.", C[f"st.{i}"], grads)
        dw += dkv
    dr = dq[:, 0, :].copy()

    ds_lr = np.zeros_like(cache["s_lr"])
    for i in reversed(range(cfg.n_cross)):
        dw, dkv = block_backward(dw, P, f"ls.{i}.", C[f"ls.{i}"], grads)
        ds_lr += dkv
    for i in reversed(range(cfg.n_self)):
        dw, _ = block_backward(dw, P, f"short.{i}.", C[f"short.{i}"], grads)
    dw = dw * cache["wvalid"][..., None]
    widx = cache["widx"]
    np.add.at(dr, np.maximum(widx, 0).ravel(), dw.reshape(-1, dw.shape[-1]))

    dx = ds_lr
    for i in reversed(range(cfg.n_self)):
        dx, _ = block_backward(dx, P, f"long.{i}.", C[f"long.{i}"], grads)
    dr += dx[0]

    _, grads["reduce.W"], grads["reduce.b"] = linear_backward(dr, cache["feats"], P["reduce.W"])
    return grads


def attention_maps(cache):
    """All attention weight tensors from a forward cache, keyed by block name."""
    return {k: block_attention(v) for k, v in cache["caches"].items()}


# -------------------------------------------------------------- streaming


class LsSatStream:
    """Frame-by-frame online recogniser.

    Keeps the per-layer inputs of the causal long-range stack so each new
    frame costs one query row per long layer; the short window and the
    cross stacks are recomputed from the last ``tau`` frames.
    """

    def __init__(self, weights):
        self.weights = weights
        cfg = weights.config
        self._reduced = []
        self._long_inputs = [[] for _ in range(cfg.n_self)]
        self._long_out = []
        self.predictions = []

    @property
    def t(self):
        return len(self._reduced)

    def predict(self, feature):
        """Append one raw feature vector and return the phase probabilities."""
        cfg = self.weights.config
        P = self.weights.tensors
        heads = 1 if cfg.literal else cfg.heads
        lit = cfg.literal
        r = reduce_dim(np.asarray(feature, dtype=float).reshape(-1), self.weights)
        self._reduced.append(r)

        x = r[None, None]
        for i in range(cfg.n_self):
            self._long_inputs[i].append(x[0, 0])
            hist = np.asarray(self._long_inputs[i])[None]
            x, _ = block_forward(P, f"long.{i}.", x, hist, None, heads, lit)
        self._long_out.append(x[0, 0])
        s_lr = np.asarray(self._long_out)[None]

        w = np.asarray(self._reduced[-cfg.tau:])[None]
        n = w.shape[1]
        for i in range(cfg.n_self):
            w, _ = block_forward(P, f"short.{i}.", w, None, causal_mask(n)[None], heads, lit)
        for i in range(cfg.n_cross):
            w, _ = block_forward(P, f"ls.{i}.", w, s_lr, None, heads, lit)
        q = r[None, None]
        for i in range(cfg.n_cross):
            q, _ = block_forward(P, f"st.{i}.", q, w, None, heads, lit)
        p_hat = q[0]
        if not lit:
            p_hat, _ = layer_norm_forward(p_hat, P["head.ln.g"], P["head.ln.b"])
        probs = softmax(p_hat @ P["head.W"] + P["head.b"])[0]
        self.predictions.append(probs)
        return probs


def predict(stream, feature):
    return stream.predict(feature)


def config_dict(cfg):
    return asdict(cfg)

"""Forward/backward primitives for the attention aggregator (float64 numpy).

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` takes the upstream gradient and the cache. Parameter
gradients are accumulated into a caller-supplied dict keyed like the
parameter dict.
"""
import numpy as np

LN_EPS = 1e-5
SHARED_CHUNK = 16


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def layer_norm_forward(x, gain, bias, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dout, cache):
    xhat, inv, gain = cache
    red = tuple(range(dout.ndim - 1))
    dgain = np.sum(dout * xhat, axis=red)
    dbias = np.sum(dout, axis=red)
    dxhat = dout * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
    return dx, dgain, dbias


def _split(x, heads):
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _sum_to(x, shape):
    # reduce a broadcast batch dimension back to ``shape``
    if x.shape == shape:
        return x
    return x.sum(axis=0, keepdims=True)


def _masked_softmax_(scores, allowed):
    # in place: these score tensors dominate the memory traffic
    if allowed is not None:
        scores += np.where(allowed, 0.0, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


def _softmax_backward_(dattn, attn):
    # attn * (dattn - rowsum(attn * dattn)), overwriting dattn
    dattn *= attn
    dattn -= attn * dattn.sum(axis=-1, keepdims=True)
    return dattn


def attention_forward(q, k, v, mask, heads):
    """Multi-head scaled dot-product attention on projected inputs.

    Parameters
    ----------
    q : (B, n, d)
    k, v : (B or 1, m, d)
    mask : bool array broadcastable to (B, n, m); True where attention is allowed.
        Every query row must allow at least one key.
    heads : int

    Returns
    -------
    out : (B, n, d)
    cache : tuple, with attention weights ``(B, heads, n, m)`` at index 3
    """
    b, n, d = q.shape
    m = k.shape[1]
    dh = d // heads
    scale = 1.0 / np.sqrt(dh)
    kh, vh = _split(k, heads), _split(v, heads)
    if k.shape[0] == 1 and b > 1:
        # keys shared by the whole batch: score chunks of the batch per head,
        # each against keys up to its last allowed one (causal masks leave
        # most of the full score tensor empty)
        qh = q.reshape(b * n, heads, dh).transpose(1, 0, 2)
        allowed = None if mask is None else np.broadcast_to(mask, (b, n, m))
        if allowed is None:
            last = np.full(b, m)
        else:
            seen = allowed.any(axis=1)
            last = m - np.argmax(seen[:, ::-1], axis=1)
        out = np.empty((heads, b * n, dh))
        chunks = []
        for b0 in range(0, b, SHARED_CHUNK):
            b1 = min(b, b0 + SHARED_CHUNK)
            mc = int(last[b0:b1].max())
            sc = qh[:, b0 * n:b1 * n] @ kh[0, :, :mc].transpose(0, 2, 1)
            sc *= scale
            _masked_softmax_(sc, None if allowed is None else allowed[b0:b1, :, :mc].reshape(-1, mc))
            out[:, b0 * n:b1 * n] = sc @ vh[0, :, :mc]
            chunks.append((b0, b1, mc, sc))
        out = out.transpose(1, 0, 2).reshape(b, n, d)
        return out, (qh, kh, vh, None, scale, k.shape, (b, n, m, chunks))
    qh = _split(q, heads)
    attn = qh @ kh.transpose(0, 1, 3, 2)
    attn *= scale
    allowed = None
    if mask is not None:
        allowed = np.asarray(mask)
        allowed = allowed[:, None] if allowed.ndim == 3 else allowed
    _masked_softmax_(attn, allowed)
    out = _merge(attn @ vh)
    return out, (qh, kh, vh, attn, scale, k.shape, None)


def attention_backward(dout, cache):
    qh, kh, vh, attn, scale, kv_shape, flat = cache
    heads = kh.shape[1]
    if flat is not None:
        b, n, d = dout.shape
        m = kv_shape[1]
        do = dout.reshape(b * n, heads, d // heads).transpose(1, 0, 2)
        dqh = np.empty_like(qh)
        dkh = np.zeros(kh.shape[1:3] + (kh.shape[3],))
        dvh = np.zeros_like(dkh)
        for b0, b1, mc, sc in flat[3]:
            rows = slice(b0 * n, b1 * n)
            dvh[:, :mc] += sc.transpose(0, 2, 1) @ do[:, rows]
            dl = _softmax_backward_(do[:, rows] @ vh[0, :, :mc].transpose(0, 2, 1), sc)
            dqh[:, rows] = dl @ kh[0, :, :mc]
            dkh[:, :mc] += dl.transpose(0, 2, 1) @ qh[:, rows]
        dq = (dqh * scale).transpose(1, 0, 2).reshape(b, n, d)
        return dq, _merge(dkh[None] * scale), _merge(dvh[None])
    do = _split(dout, heads)
    dvh = attn.transpose(0, 1, 3, 2) @ do
    dl = _softmax_backward_(do @ vh.transpose(0, 1, 3, 2), attn)
    dq = _merge((dl @ kh) * scale)
    dkh = (dl.transpose(0, 1, 3, 2) @ qh) * scale
    return dq, _sum_to(_merge(dkh), kv_shape), _sum_to(_merge(dvh), kv_shape)


def attention_weights(cache):
    """Dense ``(B, heads, n, m)`` weights from an attention cache."""
    if cache[3] is not None:
        return cache[3]
    b, n, m, chunks = cache[6]
    heads = cache[1].shape[1]
    full = np.zeros((heads, b * n, m))
    for b0, _, mc, sc in chunks:
        full[:, b0 * n:b0 * n + sc.shape[1], :mc] = sc
    return full.reshape(heads, b, n, m).transpose(1, 0, 2, 3)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dout, x, w):
    red = tuple(range(dout.ndim - 1))
    flat_x = x.reshape(-1, x.shape[-1])
    flat_d = dout.reshape(-1, dout.shape[-1])
    dw = flat_x.T @ flat_d
    db = np.sum(dout, axis=red)
    dx = dout @ w.T
    if dx.shape != x.shape:
        dx = dx.reshape(x.shape)
    return dx, dw, db


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value.copy() if isinstance(value, np.ndarray) else value


def block_forward(params, prefix, xq, xkv, mask, heads, literal=False):
    """One attention block.

    ``xkv is None`` means self-attention (keys and values come from
    ``xq``). In normal mode the block is pre-norm with residual::

        out = xq + Wo(attn(LN(xq) Wq, LN(xkv) Wk, LN(xkv) Wv))

    Cross blocks normalise keys/values with their own ``lnkv`` gain/bias
    when present. In literal mode there are no projections, no
    normalisation, no residual and a single head::

        out = softmax(xq xkv^T / sqrt(d)) xkv
    """
    self_attn = xkv is None
    src = xq if self_attn else xkv
    if literal:
        out, ac = attention_forward(xq, src, src, mask, 1)
        return out, ("literal", self_attn, ac)
    p = params
    xqn, lnq = layer_norm_forward(xq, p[prefix + "lnq.g"], p[prefix + "lnq.b"])
    if self_attn:
        srcn, lnkv = xqn, None
    else:
        tag = "lnkv" if prefix + "lnkv.g" in p else "lnq"
        srcn, lnkv = layer_norm_forward(src, p[prefix + tag + ".g"], p[prefix + tag + ".b"])
    q, _ = linear_forward(xqn, p[prefix + "Wq"], p[prefix + "bq"])
    # no key bias: it shifts each query's logits by a constant and cancels in softmax
    k = srcn @ p[prefix + "Wk"]
    v, _ = linear_forward(srcn, p[prefix + "Wv"], p[prefix + "bv"])
    o, ac = attention_forward(q, k, v, mask, heads)
    y, _ = linear_forward(o, p[prefix + "Wo"], p[prefix + "bo"])
    return xq + y, ("full", self_attn, ac, xqn, lnq, srcn, lnkv, o)


def block_attention(cache):
    """Attention weights ``(B, heads, n, m)`` from a block cache."""
    return attention_weights(cache[2])


def block_backward(dout, params, prefix, cache, grads):
    """Backward of :func:`block_forward`; returns ``(dxq, dxkv)``.

    For self-attention ``dxkv`` is ``None`` and its contribution is folded
    into ``dxq``.
    """
    kind, self_attn = cache[0], cache[1]
    if kind == "literal":
        dq, dk, dv = attention_backward(dout, cache[2])
        if self_attn:
            return dq + dk + dv, None
        return dq, dk + dv
    _, _, ac, xqn, lnq, srcn, lnkv, o = cache
    p = params
    do, dwo, dbo = linear_backward(dout, o, p[prefix + "Wo"])
    _acc(grads, prefix + "Wo", dwo)
    _acc(grads, prefix + "bo", dbo)
    dq, dk, dv = attention_backward(do, ac)
    dxqn, dwq, dbq = linear_backward(dq, xqn, p[prefix + "Wq"])
    dsk, dwk, _ = linear_backward(dk, srcn, p[prefix + "Wk"])
    dsv, dwv, dbv = linear_backward(dv, srcn, p[prefix + "Wv"])
    for name, g in (("Wq", dwq), ("bq", dbq), ("Wk", dwk), ("Wv", dwv), ("bv", dbv)):
        _acc(grads, prefix + name, g)
    dsrcn = dsk + dsv
    if self_attn:
        dxqn = dxqn + dsrcn
    dxq, dg, db = layer_norm_backward(dxqn, lnq)
    _acc(grads, prefix + "lnq.g", dg)
    _acc(grads, prefix + "lnq.b", db)
    dxq = dxq + dout
    if self_attn:
        return dxq, None
    tag = "lnkv" if prefix + "lnkv.g" in p else "lnq"
    dxkv, dg, db = layer_norm_backward(dsrcn, lnkv)
    _acc(grads, prefix + tag + ".g", dg)
    _acc(grads, prefix + tag + ".b", db)
    return dxq, dxkv

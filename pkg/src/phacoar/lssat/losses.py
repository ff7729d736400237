"""Loss evaluators for phase recognition and limbus segmentation."""
import numpy as np

from ..errors import EmptyClass, ShapeMismatch

LOG_CLAMP = 1e-12
DICE_SMOOTH = 1e-6
ALPHA = 0.6
BETA = 0.5


def _onehot(gt, pred):
    # integer labels become one-hot rows; arrays shaped like pred pass through
    gt = np.asarray(gt)
    if gt.shape == pred.shape:
        return gt.astype(float)
    return np.eye(pred.shape[-1])[gt.astype(int)]


def phase_ce_loss(pred, gt):
    """Cross-entropy averaged over phases: ``-(1/K) sum_s g_s log p_s``.

    ``gt`` may be a one-hot vector or an integer label. Batched inputs
    (leading axes) return one value per row.
    """
    pred = np.asarray(pred, dtype=float)
    k = pred.shape[-1]
    g = _onehot(gt, pred)
    if g.shape != pred.shape:
        raise ShapeMismatch(f"gt shape {g.shape} vs pred {pred.shape}")
    return -np.sum(g * np.log(np.maximum(pred, LOG_CLAMP)), axis=-1) / k


def _two_channel(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return np.stack([1.0 - x, x])
    return x


def dice_term(pred, gt, smooth=DICE_SMOOTH):
    """``1 - Dice`` over all channels with additive smoothing (empty/empty gives 0)."""
    inter = np.sum(pred * gt)
    return 1.0 - (2.0 * inter + smooth) / (np.sum(pred) + np.sum(gt) + smooth)


def seg_hybrid_loss(pred, gt, alpha=ALPHA, literal=False):
    """Pixel cross-entropy plus ``alpha * (1 - Dice)``.

    Parameters
    ----------
    pred : array
        Foreground probabilities ``(H, W)`` or channel-first ``(C, H, W)``.
    gt : array
        Binary mask of the same layout.
    literal : bool
        Swap the roles inside the cross-entropy (prediction as weight,
        ground truth inside the clamped log), as the formula is printed.
    """
    p = _two_channel(pred)
    g = _two_channel(np.asarray(gt, dtype=float))
    if p.shape != g.shape:
        raise ShapeMismatch(f"pred {np.shape(pred)} vs gt {np.shape(gt)}")
    w, inside = (p, g) if literal else (g, p)
    ce = -np.mean(w * np.log(np.maximum(inside, LOG_CLAMP)))
    return float(ce + alpha * dice_term(p, g))


def sf_loss(phase_pred, phase_gt, seg_pred, seg_gt, alpha=ALPHA, beta=BETA):
    """Spatial-stage total: phase cross-entropy plus ``beta`` times the segmentation loss."""
    return float(phase_ce_loss(phase_pred, phase_gt) + beta * seg_hybrid_loss(seg_pred, seg_gt, alpha))


def inverse_freq_weights(counts):
    """Class weights proportional to ``total / count``, scaled to mean 1."""
    c = np.asarray(counts, dtype=float)
    if np.any(c <= 0):
        raise EmptyClass(f"classes without samples: {np.flatnonzero(c <= 0).tolist()}")
    w = c.sum() / c
    return w / w.mean()


def weighted_ce_loss(pred, gt, weights):
    """Class-weighted cross-entropy ``-(1/K) sum_s w_s g_s log p_s``, summed over frames."""
    pred = np.asarray(pred, dtype=float)
    k = pred.shape[-1]
    g = _onehot(gt, pred)
    if g.shape != pred.shape or np.shape(weights) != (k,):
        raise ShapeMismatch("pred, gt and weights disagree")
    return float(-np.sum(np.asarray(weights) * g * np.log(np.maximum(pred, LOG_CLAMP))) / k)


def weighted_ce_grad_logits(probs, labels, weights):
    """Gradient of :func:`weighted_ce_loss` with respect to the softmax logits."""
    probs = np.asarray(probs, dtype=float)
    k = probs.shape[-1]
    labels = np.asarray(labels, dtype=int)
    w = np.asarray(weights, dtype=float)[labels][:, None]
    g = np.eye(k)[labels]
    return w * (probs - g) / k

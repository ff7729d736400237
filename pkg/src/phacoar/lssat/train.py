"""Toy training loop for the aggregator and a frame-wise linear baseline."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceDetected, ValidationError
from ..seeding import make_rng
from .losses import inverse_freq_weights, weighted_ce_grad_logits, weighted_ce_loss
from .model import LsSatConfig, LsSatWeights, backward_sequence, forward_sequence

STREAM_SHUFFLE = 12


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0


class Adam:
    """Adam with bias correction, updating a dict of arrays in place."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params, grads):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sequence_loss(weights, features, labels, class_weights):
    probs = forward_sequence(weights, features)
    return weighted_ce_loss(probs, labels, class_weights)


def loss_and_grads(weights, features, labels, class_weights):
    probs, cache = forward_sequence(weights, features, keep_cache=True)
    loss = weighted_ce_loss(probs, labels, class_weights)
    grads = backward_sequence(weights, cache, weighted_ce_grad_logits(probs, labels, class_weights))
    return loss, grads, probs


@dataclass
class TrainResult:
    weights: LsSatWeights
    loss_curve: list = field(default_factory=list)
    class_weights: np.ndarray = None


def train_toy(dataset, model_cfg=None, train_cfg=None, on_epoch=None):
    """Fit the aggregator on ``[(features (T, d_raw), labels (T,)), ...]``.

    One Adam step per sequence (batch of one), frame losses summed within
    a sequence. The loss curve holds the mean sequence loss per epoch.

    Raises
    ------
    DivergenceDetected
        If a loss or gradient becomes non-finite.
    """
    if not dataset:
        raise ValidationError("empty dataset")
    train_cfg = train_cfg or TrainConfig()
    if model_cfg is None:
        model_cfg = LsSatConfig(d_raw=dataset[0][0].shape[1])
    k = model_cfg.K_s
    counts = np.zeros(k)
    for _, labels in dataset:
        counts += np.bincount(np.asarray(labels, dtype=int), minlength=k)[:k]
    class_weights = inverse_freq_weights(counts)
    weights = LsSatWeights.init(model_cfg, seed=train_cfg.seed)
    opt = Adam(weights.tensors, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
    rng = make_rng(train_cfg.seed, STREAM_SHUFFLE)
    curve = []
    for epoch in range(train_cfg.epochs):
        total = 0.0
        for j in rng.permutation(len(dataset)):
            feats, labels = dataset[j]
            loss, grads, _ = loss_and_grads(weights, feats, labels, class_weights)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceDetected(f"non-finite loss or gradient at epoch {epoch}")
            if train_cfg.grad_clip > 0:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > train_cfg.grad_clip:
                    grads = {n: g * (train_cfg.grad_clip / norm) for n, g in grads.items()}
            opt.step(weights.tensors, grads)
            total += loss
        curve.append(total / len(dataset))
        if on_epoch is not None:
            on_epoch(epoch, curve[-1])
    return TrainResult(weights, curve, class_weights)


def predict_sequence(weights, features):
    """Arg-max online predictions for one sequence."""
    return np.argmax(forward_sequence(weights, features), axis=1)


class FrameLinearBaseline:
    """Multinomial logistic regression on individual frames (no temporal context)."""

    def __init__(self, C=1.0, seed=0):
        from sklearn.linear_model import LogisticRegression
        self.model = LogisticRegression(C=C, max_iter=1000, random_state=seed)

    def fit(self, dataset):
        x = np.concatenate([f for f, _ in dataset])
        y = np.concatenate([np.asarray(l, dtype=int) for _, l in dataset])
        self.model.fit(x, y)
        return self

    def predict(self, features):
        return self.model.predict(np.asarray(features, dtype=float))

"""Attention-based online phase recogniser operating on per-frame features."""
from .losses import (inverse_freq_weights, phase_ce_loss, seg_hybrid_loss, sf_loss,
                     weighted_ce_loss)
from .model import (LsSatConfig, LsSatStream, LsSatWeights, forward_sequence, long_short_cross,
                    reduce_dim, self_attention_block, spatiotemporal_cross)
from .train import Adam, FrameLinearBaseline, TrainConfig, train_toy

__all__ = [
    "Adam", "FrameLinearBaseline", "LsSatConfig", "LsSatStream", "LsSatWeights", "TrainConfig",
    "forward_sequence", "inverse_freq_weights", "long_short_cross", "phase_ce_loss",
    "reduce_dim", "seg_hybrid_loss", "self_attention_block", "sf_loss", "spatiotemporal_cross",
    "train_toy", "weighted_ce_loss",
]

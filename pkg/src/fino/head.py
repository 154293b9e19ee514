"""Gating, change-feature extraction, and the segmentation head.

The gate aggregates both images' stage features with the shape features,
squashes them to a single-channel sigmoid map, and adds the (detached)
predicted shape mask so confident foreground gets amplified beyond 1 while
pseudo-change regions are damped. Change features are the absolute
difference of a shared projection of the gated branches, reweighted by a
squeeze-style channel attention. The head turns the finest change features
into per-pixel change probabilities.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import kaiming_uniform
from .layers import Conv2d


class RegaGate:
    """Single-channel spatial gate regularized by the predicted shape mask."""

    def __init__(self, store, stage, channels, rng):
        self.aggregate = Conv2d(store, f"rega.stage{stage}.gate", 3 * channels, 1,
                                1, rng)

    def __call__(self, x_a, x_b, shape_feat, shape_mask=None, clamp=False):
        if not (x_a.shape == x_b.shape == shape_feat.shape):
            raise ValueError("gate inputs must share one stage shape")
        gate = ad.sigmoid(self.aggregate(ad.concat_channels([x_a, x_b, shape_feat])))
        if shape_mask is not None:
            # mask supervision stays with the shape loss; the gate only reads it
            gate = gate + shape_mask.detach()
        if clamp:
            gate = gate.clip(0.0, 1.0)
        return gate, ad.mul(gate, x_a), ad.mul(gate, x_b)


class ChangeFeatures:
    """Projected absolute distance with channel re-weighting."""

    def __init__(self, store, stage, channels, rng):
        # shared projection into a common distribution space; bias would
        # cancel in the difference, so there is none
        self.proj = store.register(
            f"ccl.stage{stage}.proj",
            kaiming_uniform(rng, (channels, channels, 1, 1), channels))
        hidden = max(channels // 4, 1)
        self.attn_hidden = Conv2d(store, f"ccl.stage{stage}.attn.hidden",
                                  channels, hidden, 1, rng)
        self.attn_out = Conv2d(store, f"ccl.stage{stage}.attn.out", hidden,
                               channels, 1, rng)

    def __call__(self, gated_a, gated_b):
        if gated_a.shape != gated_b.shape:
            raise ValueError("gated branches must share a shape")
        dist = ad.absolute(ad.conv2d(gated_a, self.proj) - ad.conv2d(gated_b, self.proj))
        desc = ad.global_max_pool(dist) + ad.global_avg_pool(dist)
        weights = ad.sigmoid(self.attn_out(ad.relu(self.attn_hidden(desc))))
        return ad.mul(dist, weights), dist


class SegHead:
    """1x1 conv then three 3x3 convs; logits are upsampled, then squashed."""

    def __init__(self, store, channels, rng):
        self.conv0 = Conv2d(store, "head.conv0", channels, channels, 1, rng)
        self.conv1 = Conv2d(store, "head.conv1", channels, channels, 3, rng)
        self.conv2 = Conv2d(store, "head.conv2", channels, channels, 3, rng)
        self.conv3 = Conv2d(store, "head.conv3", channels, 1, 3, rng)

    def __call__(self, change, out_hw):
        x = ad.relu(self.conv0(change))
        x = ad.relu(self.conv1(x))
        x = ad.relu(self.conv2(x))
        logits = self.conv3(x)
        if logits.shape[2:] != tuple(out_hw):
            logits = ad.resize_bilinear(logits, out_hw)
        return ad.sigmoid(logits)


def decide(prob, threshold=0.5):
    """Binary decision: change iff probability strictly exceeds the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold {threshold} must lie in (0,1)")
    values = prob.values if isinstance(prob, ad.Tensor) else np.asarray(prob)
    return (values > threshold).astype(np.float64)

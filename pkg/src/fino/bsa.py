"""Brightness-aware contrastive losses and the shape-aware branch.

Brightness alignment acts on the coarsest (stage-4) features only: a global
cosine pull between pooled descriptors, and a per-position cosine alignment
supervised by the change mask. The shape branch runs at every stage: seven
parallel convolutions (square and asymmetric kernels) summed and rectified,
followed by a small per-pixel MLP that predicts a shape mask, which gets
its own BCE supervision against the downsampled ground truth.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .layers import Conv2d
from .losses import PROB_EPS, bce_mean

COS_EPS = 1e-8
NORM_EPS = 1e-12  # keeps sqrt differentiable when a feature vector is all zero

ASYM_KERNELS = ((1, 1), (1, 3), (3, 1), (3, 3), (1, 5), (5, 1), (5, 5))


def downsample_mask_max(mask, factor):
    """Block-max downsampling of a binary [B,1,H,W] array.

    Max (not nearest) so a thin changed structure survives to coarse stages
    as long as it covers at least one pixel per block.
    """
    b, c, h, w = mask.shape
    if h % factor or w % factor:
        raise ValueError(f"mask extents {h}x{w} not divisible by factor {factor}")
    blocks = mask.reshape(b, c, h // factor, factor, w // factor, factor)
    return blocks.max(axis=(3, 5))


def _pooled_cosine(xa, xb):
    """Batch cosine similarity of channel-pooled descriptors: [B]."""
    pa = ad.global_avg_pool(xa)
    pb = ad.global_avg_pool(xb)
    dot = (pa * pb).sum(axis=(1, 2, 3))
    na = ((pa * pa).sum(axis=(1, 2, 3)) + NORM_EPS).sqrt()
    nb = ((pb * pb).sum(axis=(1, 2, 3)) + NORM_EPS).sqrt()
    return dot / (na * nb + COS_EPS)


def cosine_map(xa, xb):
    """Per-position cosine of channel vectors: [B,C,H,W] x2 -> [B,1,H,W]."""
    dot = (xa * xb).sum(axis=1, keepdims=True)
    na = ((xa * xa).sum(axis=1, keepdims=True) + NORM_EPS).sqrt()
    nb = ((xb * xb).sum(axis=1, keepdims=True) + NORM_EPS).sqrt()
    return dot / (na * nb + COS_EPS)


def global_brightness_loss(x4_a, x4_b):
    """1 - cosine of globally pooled stage-4 descriptors, batch mean.

    Zero for identical features, 2 for exactly opposite descriptors.
    """
    if x4_a.shape != x4_b.shape:
        raise ValueError(f"shape mismatch {x4_a.shape} vs {x4_b.shape}")
    return (1.0 - _pooled_cosine(x4_a, x4_b)).mean()


def region_align_loss(x4_a, x4_b, gt_mask, literal_polarity=False):
    """Per-position cosine alignment of stage-4 features, BCE-supervised.

    The cosine is remapped from [-1,1] to [0,1] and clamped before the log.
    Default polarity pulls unchanged positions together (target 1 - y);
    literal_polarity flips the target to y.
    """
    gt_mask = np.asarray(gt_mask)
    if not np.isin(gt_mask, (0.0, 1.0)).all():
        raise ValueError("region alignment needs a strictly binary mask")
    _, _, h, w = x4_a.shape
    y = gt_mask
    if gt_mask.shape[2:] != (h, w):
        y = downsample_mask_max(gt_mask, gt_mask.shape[2] // h)
    s = cosine_map(x4_a, x4_b)
    p = ((s + 1.0) * 0.5).clip(PROB_EPS, 1.0 - PROB_EPS)
    target = y if literal_polarity else 1.0 - y
    t = ad.Tensor(target)
    return -(t * p.log() + (1.0 - t) * (1.0 - p).log()).mean()


class ShapeBranch:
    """Seven-kernel aggregation plus a per-pixel mask head for one stage."""

    def __init__(self, store, stage, channels, rng):
        self.convs = [
            Conv2d(store, f"bsa.stage{stage}.asym.k{kh}x{kw}", channels, channels,
                   (kh, kw), rng)
            for kh, kw in ASYM_KERNELS
        ]
        hidden = channels
        self.mask_hidden = Conv2d(store, f"bsa.stage{stage}.mask.hidden",
                                  channels, hidden, 1, rng)
        self.mask_out = Conv2d(store, f"bsa.stage{stage}.mask.out", hidden, 1, 1, rng)

    def __call__(self, context):
        total = self.convs[0](context)
        for conv in self.convs[1:]:
            total = total + conv(context)
        shape_feat = ad.relu(total)
        mask = ad.sigmoid(self.mask_out(ad.relu(self.mask_hidden(shape_feat))))
        return shape_feat, mask


def shape_supervision_loss(stage_masks, gt_mask):
    """Sum over stages of mean-pixel BCE against max-pool-downsampled GT.

    stage_masks: stage index -> predicted [B,1,h_i,w_i] probabilities.
    gt_mask: full-resolution binary [B,1,H,W] array.
    """
    gt_mask = np.asarray(gt_mask)
    total = None
    for _, pred in sorted(stage_masks.items()):
        factor = gt_mask.shape[2] // pred.shape[2]
        target = downsample_mask_max(gt_mask, factor)
        term = bce_mean(pred, target)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("shape supervision needs at least one stage mask")
    return total

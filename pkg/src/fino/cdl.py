"""Context-dependent learning: cascaded region-local attention.

Each stage scores its difference features against guidance from the next
coarser stage's change features (the top stage guides itself), normalizes
the scores with a softmax inside non-overlapping RxR regions, and uses the
resulting single-channel map to reweight a projected copy of the stage's
difference features. Attention is an element multiplication, not a matrix
product, so cost stays linear in the map size.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .layers import Conv2d


def effective_region(region, h, w):
    """Clamp the configured region size to the map extents."""
    r = min(region, h, w)
    if h % r or w % r:
        raise ValueError(f"region size {r} does not divide extents {h}x{w}")
    return r


def region_softmax(scores, region, dk):
    """Softmax of score/sqrt(dk) within each non-overlapping RxR region.

    scores: [B,1,H,W]; every region of the result sums to 1.
    """
    b, c, h, w = scores.shape
    r = effective_region(region, h, w)
    hr, wr = h // r, w // r
    z = ad.mul(scores, 1.0 / np.sqrt(dk))
    z = z.reshape(b, c, hr, r, wr, r).transpose(0, 1, 2, 4, 3, 5)
    z = ad.softmax(z.reshape(b, c, hr, wr, r * r), axis=-1)
    z = z.reshape(b, c, hr, wr, r, r).transpose(0, 1, 2, 4, 3, 5)
    return z.reshape(b, c, h, w)


class RegionAttention:
    """One cascade stage: fuse, score, normalize per region, reweight."""

    def __init__(self, store, stage, c_in, c_guide, rng, region=4):
        self.region = region
        self.dk = c_in + c_guide
        self.score = Conv2d(store, f"cdl.stage{stage}.score", self.dk, 1, 1, rng)
        # bias-free projection keeps zero difference features exactly silent
        self.value = Conv2d(store, f"cdl.stage{stage}.value", c_in, c_in, 1, rng,
                            bias=False)

    def __call__(self, diff, guide):
        if guide.shape[2:] != diff.shape[2:]:
            guide = ad.resize_bilinear(guide, diff.shape[2:])
        fused = ad.concat_channels([diff, guide])
        attn = region_softmax(self.score(fused), self.region, self.dk)
        return ad.mul(attn, self.value(diff)), attn


class ContextCascade:
    """Region attention modules chained coarse-to-fine.

    `stages` is a contiguous run ending at 4, e.g. (4,), (4,3), (4,3,2,1).
    Stage 4 has no coarser neighbour and guides itself with its own
    difference features; every other stage consumes the change features
    produced downstream of the stage above it.
    """

    def __init__(self, store, widths, rng, region=4, stages=(4, 3, 2, 1)):
        check_stage_subset(stages)
        self.stages = tuple(sorted(stages, reverse=True))
        self.attn = {}
        for i in self.stages:
            c_in = widths[i - 1]
            c_guide = widths[i - 1] if i == 4 else widths[i]
            self.attn[i] = RegionAttention(store, i, c_in, c_guide, rng, region)

    def run(self, diffs, produce_change):
        """Walk stages top-down.

        diffs: stage index -> difference features.
        produce_change(stage, context) -> change features for that stage,
        fed as guidance into the next finer stage.
        Returns (contexts, changes, attns) keyed by stage.
        """
        contexts, changes, attns = {}, {}, {}
        change_above = None
        for i in self.stages:
            guide = diffs[i] if change_above is None else change_above
            contexts[i], attns[i] = self.attn[i](diffs[i], guide)
            change_above = produce_change(i, contexts[i])
            changes[i] = change_above
        return contexts, changes, attns


def check_stage_subset(stages):
    s = tuple(sorted(stages, reverse=True))
    if not s or s[0] != 4 or s != tuple(range(4, 4 - len(s), -1)):
        raise ValueError(f"stage subset {stages} must be a contiguous run ending at 4")
    return s

"""Weight-shared Siamese encoder: four residual stages at 1/4 ... 1/32.

The same Encoder instance is applied to both images of a pair, so sharing
is structural: there is one set of parameters to read. Stage widths and
block counts are configuration; paper-scale pretrained weights are out of
scope here, only the staging layout matters downstream.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .layers import Conv2d, GroupNorm


@dataclass
class BackboneConfig:
    widths: tuple = (16, 32, 64, 128)
    blocks_per_stage: int = 1
    stem_stride: int = 2
    activation: str = "relu"
    norm: str = "none"      # none | group
    norm_groups: int = 4

    def validate(self):
        if len(self.widths) != 4:
            raise ValueError("backbone needs exactly four stage widths")
        if any(b >= a for a, b in zip(self.widths[1:], self.widths)):
            raise ValueError(f"stage widths {self.widths} must strictly increase")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")
        if self.stem_stride not in (1, 2):
            raise ValueError("stem stride must be 1 or 2")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.norm not in ("none", "group"):
            raise ValueError(f"unsupported norm {self.norm!r}")


class ResidualBlock:
    """Two 3x3 convs plus a skip; stride-2 entry blocks project the skip."""

    def __init__(self, store, name, cin, cout, rng, stride, cfg):
        self.conv1 = Conv2d(store, f"{name}.conv1", cin, cout, 3, rng, stride=stride)
        self.conv2 = Conv2d(store, f"{name}.conv2", cout, cout, 3, rng)
        self.proj = None
        if stride != 1 or cin != cout:
            self.proj = Conv2d(store, f"{name}.proj", cin, cout, 1, rng, stride=stride)
        self.norm1 = self.norm2 = None
        if cfg.norm == "group":
            # the largest divisor of the width not exceeding the configured count
            groups = max(g for g in range(1, min(cfg.norm_groups, cout) + 1)
                         if cout % g == 0)
            self.norm1 = GroupNorm(store, f"{name}.gn1", cout, groups)
            self.norm2 = GroupNorm(store, f"{name}.gn2", cout, groups)

    def __call__(self, x):
        h = self.conv1(x)
        if self.norm1 is not None:
            h = self.norm1(h)
        h = ad.relu(h)
        h = self.conv2(h)
        if self.norm2 is not None:
            h = self.norm2(h)
        skip = x if self.proj is None else self.proj(x)
        return ad.relu(h + skip)

    def skip_path(self, x):
        """The block output with the residual branch silenced (zero conv2)."""
        skip = x if self.proj is None else self.proj(x)
        return ad.relu(skip)


class Encoder:
    def __init__(self, store, cfg: BackboneConfig, rng):
        cfg.validate()
        self.cfg = cfg
        self.stem = Conv2d(store, "backbone.stem.conv", 3, cfg.widths[0], 3, rng,
                           stride=cfg.stem_stride)
        self.stages = []
        cin = cfg.widths[0]
        for i, cout in enumerate(cfg.widths, start=1):
            blocks = []
            for j in range(cfg.blocks_per_stage):
                stride = 2 if (i > 1 and j == 0) else 1
                blocks.append(ResidualBlock(
                    store, f"backbone.stage{i}.block{j}", cin, cout, rng, stride, cfg))
                cin = cout
            self.stages.append(blocks)

    def __call__(self, image):
        """image: [B,3,H,W] with H, W divisible by 32 -> four stage tensors."""
        _, _, h, w = image.shape
        if h % 32 or w % 32:
            raise ValueError(f"encoder input extents {h}x{w} not divisible by 32")
        x = ad.relu(self.stem(image))
        x = ad.max_pool(x, 2, 2)
        pyramid = []
        for blocks in self.stages:
            for block in blocks:
                x = block(x)
            pyramid.append(x)
        return pyramid


def feature_diff(stage_a, stage_b):
    """Per-stage change evidence: elementwise absolute difference."""
    if stage_a.shape != stage_b.shape:
        raise ValueError(f"diff shape mismatch {stage_a.shape} vs {stage_b.shape}")
    return ad.absolute(stage_a - stage_b)

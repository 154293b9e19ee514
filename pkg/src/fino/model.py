"""Full change-detection graph: Siamese encoder, context cascade,
shape/brightness branch, gating, change features, segmentation head.

Ablation flags bypass individual components so their contribution can be
measured; the stage subset restricts processing to a contiguous run of
coarse stages, with the head reading the finest processed stage.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .backbone import BackboneConfig, Encoder, feature_diff
from .bsa import (ShapeBranch, global_brightness_loss, region_align_loss,
                  shape_supervision_loss)
from .cdl import ContextCascade, check_stage_subset
from .head import ChangeFeatures, RegaGate, SegHead
from .losses import LossWeights, bce_mean, total_loss


@dataclass
class ModelConfig:
    widths: tuple = (16, 32, 64, 128)
    blocks_per_stage: int = 1
    stem_stride: int = 2
    activation: str = "relu"
    norm: str = "none"
    norm_groups: int = 4
    region_size: int = 4
    stages: tuple = (4, 3, 2, 1)
    disable_cdl: bool = False
    disable_bsa: bool = False
    disable_rega: bool = False
    gate_clamp: bool = False
    rcl_literal: bool = False

    def validate(self):
        self.backbone().validate()
        check_stage_subset(self.stages)
        if self.region_size < 1:
            raise ValueError("region size must be >= 1")

    def backbone(self):
        return BackboneConfig(self.widths, self.blocks_per_stage, self.stem_stride,
                              self.activation, self.norm, self.norm_groups)


@dataclass
class StageState:
    """Everything one cascade stage computes, for inspection and tests."""
    diff: Tensor = None
    context: Tensor = None
    attn: Tensor = None
    shape: Tensor = None
    mask: Tensor = None
    gate: Tensor = None
    gated_a: Tensor = None
    gated_b: Tensor = None
    dist: Tensor = None
    change: Tensor = None


@dataclass
class ForwardPass:
    prob: Tensor
    stages: dict = field(default_factory=dict)
    pyramid_a: list = field(default_factory=list)
    pyramid_b: list = field(default_factory=list)


class ChangeDetector:
    def __init__(self, cfg: ModelConfig = None, seed: int = 0, store: ParamStore = None):
        self.cfg = cfg or ModelConfig()
        self.cfg.validate()
        self.store = store if store is not None else ParamStore()
        widths = self.cfg.widths
        active = check_stage_subset(self.cfg.stages)

        # one init stream per component, so ablated twins share the rest
        def rng(tag):
            return np.random.default_rng((seed, 1, tag))

        self.encoder = Encoder(self.store, self.cfg.backbone(), rng(0))
        self.cascade = None
        if not self.cfg.disable_cdl:
            self.cascade = ContextCascade(self.store, widths, rng(1),
                                          self.cfg.region_size, active)
        self.shape_branches = {}
        if not self.cfg.disable_bsa:
            r = rng(2)
            self.shape_branches = {i: ShapeBranch(self.store, i, widths[i - 1], r)
                                   for i in active}
        self.gates = {}
        if not self.cfg.disable_rega:
            r = rng(3)
            self.gates = {i: RegaGate(self.store, i, widths[i - 1], r)
                          for i in active}
        r = rng(4)
        self.change_features = {i: ChangeFeatures(self.store, i, widths[i - 1], r)
                                for i in active}
        self.finest_stage = min(active)
        self.head = SegHead(self.store, widths[self.finest_stage - 1], rng(5))
        self.active_stages = active

    def forward(self, image_a, image_b, frozen_gate_masks=None) -> ForwardPass:
        """image_a/image_b: [B,3,H,W] arrays (or Tensors) -> probabilities.

        frozen_gate_masks optionally substitutes constant arrays for the
        shape masks the gates read. The gate detaches those masks anyway,
        so values are unchanged; finite-difference probes use this to keep
        the stop-gradient boundary fixed while perturbing parameters.
        """
        a = image_a if isinstance(image_a, Tensor) else Tensor(np.asarray(image_a))
        b = image_b if isinstance(image_b, Tensor) else Tensor(np.asarray(image_b))
        if a.shape != b.shape:
            raise ValueError(f"pair shape mismatch {a.shape} vs {b.shape}")
        out_hw = a.shape[2:]

        pyramid_a = self.encoder(a)
        pyramid_b = self.encoder(b)
        fwd = ForwardPass(prob=None, pyramid_a=pyramid_a, pyramid_b=pyramid_b)
        diffs = {i: feature_diff(pyramid_a[i - 1], pyramid_b[i - 1])
                 for i in self.active_stages}
        for i in self.active_stages:
            fwd.stages[i] = StageState(diff=diffs[i])

        def produce_change(stage, context):
            state = fwd.stages[stage]
            state.context = context
            if self.shape_branches:
                state.shape, state.mask = self.shape_branches[stage](context)
            else:
                state.shape = context
            if self.gates:
                gate_mask = state.mask
                if frozen_gate_masks is not None and gate_mask is not None:
                    gate_mask = Tensor(frozen_gate_masks[stage])
                state.gate, state.gated_a, state.gated_b = self.gates[stage](
                    pyramid_a[stage - 1], pyramid_b[stage - 1], state.shape,
                    gate_mask, clamp=self.cfg.gate_clamp)
            else:
                state.gated_a = pyramid_a[stage - 1]
                state.gated_b = pyramid_b[stage - 1]
            state.change, state.dist = self.change_features[stage](
                state.gated_a, state.gated_b)
            return state.change

        if self.cascade is not None:
            _, _, attns = self.cascade.run(diffs, produce_change)
            for i, attn in attns.items():
                fwd.stages[i].attn = attn
        else:
            for i in self.active_stages:
                produce_change(i, diffs[i])

        fwd.prob = self.head(fwd.stages[self.finest_stage].change, out_hw)
        return fwd

    def losses(self, fwd: ForwardPass, gt_mask, weights: LossWeights):
        """Total objective and per-component floats for one forward pass."""
        gt = np.asarray(gt_mask)
        l_cd = bce_mean(fwd.prob, gt)
        l_sal = 0.0
        l_gcl = 0.0
        l_rcl = 0.0
        if self.shape_branches:
            l_sal = shape_supervision_loss(
                {i: fwd.stages[i].mask for i in self.active_stages}, gt)
            if weights.aux > 0.0:
                l_gcl = global_brightness_loss(fwd.pyramid_a[3], fwd.pyramid_b[3])
                l_rcl = region_align_loss(fwd.pyramid_a[3], fwd.pyramid_b[3], gt,
                                          literal_polarity=self.cfg.rcl_literal)
        return total_loss(l_cd, l_sal, l_gcl, l_rcl, weights)

    def predict_prob(self, image_a, image_b):
        """Inference-only probabilities as a plain array."""
        with ad.no_grad():
            return self.forward(image_a, image_b).prob.values

"""Gradient verification suites: per-op probes and the full-graph check.

Finite differences cannot straddle a non-differentiable point, and freshly
initialized biases sit exactly on the ReLU kink wherever the incoming
activation is all-zero. The probes therefore jitter biases slightly before
checking; that changes nothing about which derivatives are verified.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor, grad_check
from .bsa import ShapeBranch, global_brightness_loss, region_align_loss, \
    shape_supervision_loss
from .backbone import BackboneConfig, Encoder
from .cdl import RegionAttention
from .data import SynthConfig, generate_pair
from .head import ChangeFeatures, RegaGate, SegHead
from .losses import LossWeights, bce_mean
from .model import ChangeDetector, ModelConfig

MODULE_NAMES = ("ops", "backbone", "cdl", "bsa", "head", "full")


def _jitter_biases(store, rng):
    for name, t in store.items():
        if name.endswith(".b") or name.endswith(".beta"):
            t.values += rng.uniform(0.01, 0.05, t.shape)


def op_probes(seed=0):
    """One grad-check probe per registered op on a small random instance."""
    rng = np.random.default_rng(seed)
    b, c, h, w = 2, 3, 6, 8
    probes = []

    def probe(name, shape, build):
        store = ParamStore()
        p = store.register("p", rng.standard_normal(shape))
        probes.append((name, (lambda p=p, build=build: build(p)), store))

    weight = Tensor(rng.standard_normal((b, c, h, w)))
    probe("add", (b, c, h, w), lambda p: (ad.add(p, weight) * weight).sum())
    probe("sub", (b, c, h, w), lambda p: (ad.sub(p, weight) * weight).mean())
    probe("mul", (b, c, h, w), lambda p: ad.mul(p, weight).sum())
    probe("div", (b, c, h, w), lambda p: ad.div(p, ad.sigmoid(weight) + 0.5).sum())
    probe("abs", (b, c, h, w), lambda p: (ad.absolute(p) * weight).sum())
    probe("relu", (b, c, h, w), lambda p: (ad.relu(p) * weight).sum())
    probe("sigmoid", (b, c, h, w), lambda p: (ad.sigmoid(p) * weight).sum())
    probe("log", (b, c, h, w),
          lambda p: (ad.sigmoid(p).clip(1e-6, 1 - 1e-6).log() * weight).sum())
    probe("sqrt", (b, c, h, w), lambda p: ((p * p + 0.3).sqrt() * weight).sum())
    probe("clip", (b, c, h, w), lambda p: (p.clip(-0.75, 0.75) * weight).sum())
    probe("softmax", (b, c, h, w), lambda p: (ad.softmax(p, axis=1) * weight).sum())
    probe("sum", (b, c, h, w),
          lambda p: (p.sum(axis=1, keepdims=True)
                     * weight.sum(axis=1, keepdims=True)).sum())
    probe("mean", (b, c, h, w),
          lambda p: (p.mean(axis=(2, 3), keepdims=True) * 3.0).sum())
    probe("reshape", (b, c, h, w), lambda p: (p.reshape(b, c * h, w) * 2.0).mean())
    probe("transpose", (b, c, h, w), lambda p: (p.transpose(0, 2, 3, 1) * 1.5).mean())
    probe("broadcast-mul-mask", (b, 1, h, w), lambda p: ad.mul(p, weight).sum())
    probe("broadcast-mul-channel", (b, c, 1, 1), lambda p: ad.mul(weight, p).sum())
    probe("concat-channels", (b, c, h, w),
          lambda p: ad.concat_channels([p, weight]).mean())

    kern = Tensor(rng.standard_normal((3, c, 3, 3)) * 0.5)
    probe("conv2d-kernel", (2, c, 3, 3),
          lambda p: (ad.conv2d(weight, p, padding=(1, 1)) * 1.0).mean())
    probe("conv2d-input", (b, c, h, w), lambda p: ad.conv2d(p, kern, stride=2).mean())
    probe("conv2d-bias", (3,),
          lambda p: ad.conv2d(weight, kern, padding=(1, 1), bias=p).mean())
    probe("max-pool", (b, c, h, w), lambda p: (ad.max_pool(p, 2, 2) * 1.0).sum())
    probe("avg-pool", (b, c, h, w), lambda p: (ad.avg_pool(p, 2, 2) * 1.0).sum())
    probe("global-avg-pool", (b, c, h, w), lambda p: ad.global_avg_pool(p).sum())
    probe("global-max-pool", (b, c, h, w), lambda p: ad.global_max_pool(p).sum())
    probe("resize-bilinear", (b, c, h, w),
          lambda p: (ad.resize_bilinear(p, (h * 2 - 3, w * 2)) * 1.0).mean())
    probe("resize-nearest", (b, c, h, w),
          lambda p: (ad.resize_nearest(p, (h * 2, w * 2)) * 1.0).mean())

    gn_store = ParamStore()
    gx = gn_store.register("x", rng.standard_normal((b, 4, h, w)))
    gg = gn_store.register("gamma", rng.uniform(0.5, 1.5, 4))
    gb = gn_store.register("beta", rng.standard_normal(4))
    gw = Tensor(rng.standard_normal((b, 4, h, w)))
    probes.append(("group-norm",
                   lambda: (ad.group_norm(gx, gg, gb, groups=2) * gw).mean(),
                   gn_store))
    return probes


def module_probes(seed=0):
    """Grad-check probes through each assembled component."""
    rng = np.random.default_rng(seed)
    probes = []

    store = ParamStore()
    enc = Encoder(store, BackboneConfig(widths=(2, 3, 4, 5)), np.random.default_rng(seed))
    _jitter_biases(store, rng)
    img = Tensor(rng.uniform(size=(1, 3, 32, 32)))
    wt = Tensor(rng.standard_normal((1, 5, 1, 1)))
    probes.append(("backbone", lambda: (enc(img)[3] * wt).mean(), store))

    store = ParamStore()
    attn = RegionAttention(store, 1, 4, 4, np.random.default_rng(seed), region=4)
    _jitter_biases(store, rng)
    diff = Tensor(rng.standard_normal((2, 4, 8, 8)))
    guide = Tensor(rng.standard_normal((2, 4, 8, 8)))
    aw = Tensor(rng.standard_normal((2, 4, 8, 8)))
    probes.append(("cdl", lambda: (attn(diff, guide)[0] * aw).mean(), store))

    store = ParamStore()
    branch = ShapeBranch(store, 1, 2, np.random.default_rng(seed))
    _jitter_biases(store, rng)
    bx = Tensor(rng.standard_normal((1, 2, 4, 4)))
    gt = (rng.uniform(size=(1, 1, 4, 4)) > 0.5).astype(float)

    def bsa_probe():
        feat, mask = branch(bx)
        x4a = feat * 1.0
        x4b = ad.relu(feat + 0.3)
        return (shape_supervision_loss({1: mask}, gt)
                + global_brightness_loss(x4a, x4b)
                + region_align_loss(x4a, x4b, gt))

    probes.append(("bsa", bsa_probe, store))

    store = ParamStore()
    gate = RegaGate(store, 1, 3, np.random.default_rng(seed))
    ccl = ChangeFeatures(store, 1, 3, np.random.default_rng(seed + 1))
    head = SegHead(store, 3, np.random.default_rng(seed + 2))
    _jitter_biases(store, rng)
    xa = Tensor(rng.uniform(size=(1, 3, 4, 4)))
    xb = Tensor(rng.uniform(size=(1, 3, 4, 4)))
    hf = Tensor(rng.uniform(size=(1, 3, 4, 4)))
    hm = Tensor(rng.uniform(0.2, 0.8, (1, 1, 4, 4)))
    hgt = (rng.uniform(size=(1, 1, 8, 8)) > 0.5).astype(float)

    def head_probe():
        _, ia, ib = gate(xa, xb, hf, hm)
        change, _ = ccl(ia, ib)
        return bce_mean(head(change, (8, 8)), hgt)

    probes.append(("head", head_probe, store))
    return probes


def full_graph_check(seed=0, step=1e-4, tol=1e-3):
    """Gradients of the whole pipeline at a 32x32 input vs finite differences.

    The gate deliberately reads the shape mask through a stop-gradient, so
    the probe holds that mask at its base value: the forward is unchanged
    at the base point and finite differences then measure exactly the
    function the graph differentiates.
    """
    cfg = ModelConfig(widths=(2, 4, 6, 8), region_size=4)
    model = ChangeDetector(cfg, seed=seed)
    rng = np.random.default_rng((seed, 99))
    _jitter_biases(model.store, rng)
    pair = generate_pair(SynthConfig(size=32, object_count=(2, 3), seed=seed), 0)
    image_a = pair.image_a[None]
    image_b = pair.image_b[None]
    mask = pair.mask[None]
    weights = LossWeights(0.1)

    with ad.no_grad():
        base = model.forward(image_a, image_b)
        if np.linalg.norm(base.pyramid_a[3].values) < 1e-3:
            raise RuntimeError("degenerate probe: stage-4 features vanished, "
                               "pick a different seed")
        frozen = {i: st.mask.values.copy() for i, st in base.stages.items()}
        base_total, _ = model.losses(base, mask, weights)

    def f():
        fwd = model.forward(image_a, image_b, frozen_gate_masks=frozen)
        total, _ = model.losses(fwd, mask, weights)
        return total

    with ad.no_grad():
        if f().item() != base_total.item():
            raise RuntimeError("frozen-mask probe diverged from the live model")
    return grad_check(f, model.store, step=step, tol=tol)


def run_suite(module="all", seed=0, tol=1e-3):
    """Run the requested checks; returns (all_passed, report lines)."""
    if module not in MODULE_NAMES + ("all",):
        raise ValueError(f"unknown gradcheck module {module!r}; "
                         f"choose from {', '.join(MODULE_NAMES + ('all',))}")
    lines = []
    ok = True

    def record(name, report):
        nonlocal ok
        status = "ok  " if report.passed else "FAIL"
        lines.append(f"{status} {name}: max rel err {report.max_error:.3e} "
                     f"({len(report.per_param)} tensors)")
        ok = ok and report.passed

    if module in ("ops", "all"):
        for name, f, store in op_probes(seed):
            record(f"op {name}", grad_check(f, store, tol=tol))
    if module in ("backbone", "cdl", "bsa", "head", "all"):
        for name, f, store in module_probes(seed):
            if module in (name, "all"):
                record(f"module {name}", grad_check(f, store, tol=tol))
    if module in ("full", "all"):
        record("full graph 32x32", full_graph_check(seed, tol=tol))
    return ok, lines

"""Training loop, evaluation runner, and checkpoint glue.

Determinism contract: given the same config and dataset, two runs produce
identical loss traces. Shuffling uses a per-epoch stream seeded from
(seed, epoch); each pair's augmentation stream is derived from
(seed, epoch, hash(pair id)), so worker scheduling could never reorder
random draws.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import backward
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import TrainConfig, config_hash, config_to_text, parse_config_text
from .data import AugmentPolicy, augment, save_mask_png
from .head import decide
from .losses import LossWeights
from .metrics import ConfusionCounts, MetricsReport, confusion, metrics
from .model import ChangeDetector
from .optim import AdamW, poly_lr


class DivergenceError(ad.NumericError):
    """Training hit a non-finite loss; parameters were rolled back.

    Carries the rolled-back TrainResult so callers can checkpoint the last
    good state before giving up.
    """

    def __init__(self, step, message, result=None):
        super().__init__(message)
        self.step = step
        self.result = result


@dataclass
class TrainResult:
    model: ChangeDetector
    optimizer: AdamW
    config: TrainConfig
    history: list = field(default_factory=list)
    steps: int = 0


def _pair_stream_id(pair_id: str) -> int:
    digest = hashlib.sha256(pair_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def train(cfg: TrainConfig, pairs, log_stream=None) -> TrainResult:
    cfg.validate()
    if not pairs:
        raise ValueError("training dataset is empty")
    sizes = {(p.height, p.width) for p in pairs}
    if len(sizes) != 1:
        raise ValueError(f"training pairs must share one size, got {sorted(sizes)}")

    model = ChangeDetector(cfg.to_model_config(), seed=cfg.seed)
    optimizer = AdamW(model.store, weight_decay=cfg.weight_decay)
    weights = LossWeights(cfg.aux_weight)
    policy = AugmentPolicy.named(cfg.augment)

    n = len(pairs)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    planned = cfg.epochs * steps_per_epoch
    total_steps = min(planned, cfg.max_steps) if cfg.max_steps else planned

    result = TrainResult(model=model, optimizer=optimizer, config=cfg)
    step = 0
    for epoch in range(cfg.epochs):
        if step >= total_steps:
            break
        perm = np.random.default_rng((cfg.seed, 2, epoch)).permutation(n)
        for start in range(0, n, cfg.batch_size):
            if step >= total_steps:
                break
            batch = []
            for idx in perm[start:start + cfg.batch_size]:
                pair = pairs[idx]
                rng = np.random.default_rng(
                    (cfg.seed, 3, epoch, _pair_stream_id(pair.id)))
                batch.append(augment(pair, policy, rng))
            images_a = np.stack([p.image_a for p in batch])
            images_b = np.stack([p.image_b for p in batch])
            masks = np.stack([p.mask for p in batch])

            lr = poly_lr(step, total_steps, cfg.base_lr, cfg.poly_power)
            snapshot = {name: t.values.copy() for name, t in model.store.items()}
            try:
                fwd = model.forward(images_a, images_b)
                total, comps = model.losses(fwd, masks, weights)
                backward(total)
            except ad.NumericError as exc:
                for name, t in model.store.items():
                    t.values[:] = snapshot[name]
                result.steps = step
                raise DivergenceError(
                    step, f"non-finite loss at step {step}: {exc}",
                    result=result) from exc
            optimizer.step(lr)
            model.store.zero_grad()

            record = {"step": step, "lr": lr, "l_cd": comps["l_cd"],
                      "l_sal": comps["l_sal"], "l_gcl": comps["l_gcl"],
                      "l_rcl": comps["l_rcl"], "total": comps["total"]}
            result.history.append(record)
            if log_stream is not None:
                log_stream.write(json.dumps(record) + "\n")
            step += 1
    result.steps = step
    return result


def evaluate(model: ChangeDetector, pairs, threshold=0.5, dump_dir=None) -> MetricsReport:
    """Global-count metrics over all pairs at one decision threshold."""
    if not pairs:
        raise ValueError("evaluation dataset is empty")
    if dump_dir:
        os.makedirs(dump_dir, exist_ok=True)
    counts = ConfusionCounts()
    for pair in pairs:
        prob = model.predict_prob(pair.image_a[None], pair.image_b[None])
        pred = decide(prob, threshold)
        counts = counts + confusion(pred[0], pair.mask)
        if dump_dir:
            save_mask_png(os.path.join(dump_dir, f"{pair.id}.png"), pred[0])
    return metrics(counts)


# ---------------------------------------------------------------------------
# checkpoint glue
# ---------------------------------------------------------------------------

def save_train_state(path, model, optimizer, cfg, step):
    tensors = {name: t.values for name, t in model.store.items()}
    tensors.update(optimizer.state_entries())
    save_checkpoint(path, tensors, step, config_to_text(cfg), config_hash(cfg))


def load_train_state(path):
    """Rebuild (model, optimizer, config, step) from a checkpoint file."""
    tensors, step, text, stored_hash = load_checkpoint(path)
    cfg = parse_config_text(text)
    if config_hash(cfg) != stored_hash:
        raise CheckpointError(f"{path}: config hash mismatch")
    model = ChangeDetector(cfg.to_model_config(), seed=cfg.seed)
    for name, t in model.store.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if tensors[name].shape != t.values.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        t.values[:] = tensors[name]
    optimizer = AdamW(model.store, weight_decay=cfg.weight_decay)
    optimizer.load_state_entries(tensors)
    return model, optimizer, cfg, step

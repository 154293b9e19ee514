"""Training objective: change-detection BCE plus weighted auxiliary terms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_EPS = 1e-6


@dataclass
class LossWeights:
    aux: float = 0.1  # shared weight on both brightness-alignment losses

    def validate(self):
        if not np.isfinite(self.aux) or self.aux < 0:
            raise ValueError(f"aux loss weight {self.aux} must be finite and >= 0")


def bce_mean(prob, target):
    """Mean-per-pixel binary cross-entropy with clamped probabilities."""
    if not isinstance(target, Tensor):
        target = Tensor(target)
    if prob.shape != target.shape:
        raise ValueError(f"bce shape mismatch {prob.shape} vs {target.shape}")
    p = ad.clip(prob, PROB_EPS, 1.0 - PROB_EPS)
    return -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()


def total_loss(l_cd, l_sal, l_gcl, l_rcl, weights: LossWeights):
    """Weighted sum of the four components.

    Returns (total, components) where components maps names to floats for
    logging. Non-finite inputs fail loudly with the offending name.
    """
    weights.validate()
    parts = {"l_cd": l_cd, "l_sal": l_sal, "l_gcl": l_gcl, "l_rcl": l_rcl}
    comps = {}
    for name, value in parts.items():
        v = value.item() if isinstance(value, Tensor) else float(value)
        if not np.isfinite(v):
            raise ad.NumericError(f"loss component {name} is not finite: {v}")
        comps[name] = v
    total = parts["l_cd"] + parts["l_sal"] \
        + parts["l_gcl"] * weights.aux + parts["l_rcl"] * weights.aux
    comps["total"] = total.item() if isinstance(total, Tensor) else float(total)
    return total, comps

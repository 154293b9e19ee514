"""AdamW with decoupled weight decay, plus the poly learning-rate schedule."""
from __future__ import annotations

import numpy as np


def poly_lr(step, total_steps, base_lr, power):
    """base_lr * (1 - step/total_steps) ** power."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * (1.0 - step / total_steps) ** power


class AdamW:
    """Bias-corrected Adam moments; decay is applied to the weights directly,
    never through the gradients. A step with any non-finite gradient is
    skipped entirely and counted."""

    def __init__(self, store, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.store = store
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {name: np.zeros_like(t.values) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.values) for name, t in store.items()}
        self.t = 0
        self.skipped = 0

    def step(self, lr):
        grads = {}
        for name, p in self.store.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            if not np.all(np.isfinite(g)):
                self.skipped += 1
                return False
            grads[name] = g
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.store.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.values -= lr * update + lr * self.weight_decay * p.values
        return True

    def state_entries(self):
        """Moment buffers and the step counter, named for the checkpoint."""
        out = {}
        for name in self.store.names():
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        out["opt.t"] = np.array([float(self.t)])
        return out

    def load_state_entries(self, entries):
        for name in self.store.names():
            self.m[name][:] = entries[f"opt.m.{name}"]
            self.v[name][:] = entries[f"opt.v.{name}"]
        self.t = int(entries["opt.t"][0])

"""Thin parameterized layers over the autodiff ops.

Each layer registers its tensors in a ParamStore at construction time, so
parameter order (and therefore init draws and checkpoints) is fixed by the
order the network is built in.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import kaiming_uniform


class Conv2d:
    """Convolution with He-uniform kernel init and zero-initialized bias."""

    def __init__(self, store, name, cin, cout, kernel, rng,
                 stride=1, padding="same", bias=True):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if padding == "same":
            padding = ((kh - 1) // 2, (kw - 1) // 2)
        self.stride = stride
        self.padding = padding
        self.weight = store.register(
            f"{name}.w", kaiming_uniform(rng, (cout, cin, kh, kw), cin * kh * kw))
        self.bias = store.register(f"{name}.b", np.zeros(cout)) if bias else None

    def __call__(self, x):
        return ad.conv2d(x, self.weight, self.stride, self.padding, self.bias)


class GroupNorm:
    def __init__(self, store, name, channels, groups):
        self.groups = groups
        self.gamma = store.register(f"{name}.gamma", np.ones(channels))
        self.beta = store.register(f"{name}.beta", np.zeros(channels))

    def __call__(self, x):
        return ad.group_norm(x, self.gamma, self.beta, self.groups)

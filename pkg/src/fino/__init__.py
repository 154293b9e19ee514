"""Bitemporal change detection with fine-grained context attention,
brightness/shape-aware noise decoupling, and gated change features.

Runs entirely on the float64 autodiff core in fino.autodiff; no external
deep-learning framework is involved.
"""

__version__ = "0.1.0"

from .autodiff import NumericError, ParamStore, Tensor, backward, grad_check, no_grad

__all__ = [
    "NumericError",
    "ParamStore",
    "Tensor",
    "backward",
    "grad_check",
    "no_grad",
    "__version__",
]

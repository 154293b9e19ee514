"""Dense float64 tensors with reverse-mode automatic differentiation.

The operation set is exactly what the change-detection graph needs:
2-d convolution, pooling, softmax, elementwise arithmetic, reductions,
resizing, and a finite-difference gradient checker used to verify all of
the above. Image-like data is laid out batch x channels x height x width.

Everything runs in 64-bit; any op that produces a NaN or Inf raises
NumericError immediately instead of letting it propagate.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np


class NumericError(ArithmeticError):
    """An operation produced a non-finite value."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values unchanged)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def _check_finite(arr, op):
    # single-reduction fast path; a finite array whose *sum* overflows is
    # re-examined element-wise before deciding
    if not np.isfinite(arr.sum()):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values produced by {op}")


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    Tensors produced by ops remember their inputs; backward() walks that
    graph and accumulates dLoss/dLeaf into every reachable leaf tensor
    that has requires_grad set.
    """

    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backprop")

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backprop = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """A view of the same values that is cut out of the graph."""
        return Tensor(self.values)

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"Tensor{tag}(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const(other, self.shape), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def abs(self):
        return absolute(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def clip(self, lo, hi):
        return clip(self, lo, hi)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)


def _const(x, shape=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None and arr.shape == ():
        arr = np.full(shape, float(arr))
    return Tensor(arr)


def _make(values, parents, backprop, op):
    """Wrap an op result; record the graph only when gradients can flow."""
    _check_finite(values, op)
    out = Tensor(values)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backprop = backprop
    return out


def _add_grad(grads, t, g):
    if not t.requires_grad:
        return
    key = id(t)
    if key in grads:
        grads[key] = grads[key] + g  # fresh array: stored buffers are never mutated
    else:
        grads[key] = g


def backward(loss):
    """Accumulate dloss/dleaf into .grad of every reachable leaf tensor.

    The loss must hold a single value. Repeated calls keep accumulating;
    callers zero parameter grads between steps.
    """
    if loss.values.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.values)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backprop is not None:
            node._backprop(g, grads)
        elif node.requires_grad:
            node.grad = np.array(g) if node.grad is None else node.grad + g


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b):
    a = _const(a)
    b = _const(b, a.shape)
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")

    def backprop(g, grads):
        _add_grad(grads, a, g)
        _add_grad(grads, b, g)

    return _make(a.values + b.values, (a, b), backprop, "add")


def sub(a, b):
    a = _const(a)
    b = _const(b, a.shape)
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch {a.shape} vs {b.shape}")

    def backprop(g, grads):
        _add_grad(grads, a, g)
        _add_grad(grads, b, -g)

    return _make(a.values - b.values, (a, b), backprop, "sub")


def _broadcast_axes(operand_shape, out_shape):
    return tuple(i for i, (s, o) in enumerate(zip(operand_shape, out_shape)) if s == 1 and o > 1)


def mul(a, b):
    """Elementwise product.

    Same-shape operands, a python scalar, or one of the two documented
    broadcast pairings for 4-d maps:
      * a one-channel mask [B,1,H,W] against features [B,C,H,W];
      * a channel vector [B,C,1,1] against features [B,C,H,W].
    Anything else is rejected so wiring bugs surface as shape errors.
    """
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        scale = float(b)
        a = _const(a)

        def backprop_s(g, grads):
            _add_grad(grads, a, g * scale)

        return _make(a.values * scale, (a,), backprop_s, "mul")

    a = _const(a)
    b = _const(b)
    if a.shape != b.shape and not _broadcast_ok(a.shape, b.shape):
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
    out_vals = a.values * b.values

    def backprop(g, grads):
        ga = g * b.values
        gb = g * a.values
        ax_a = _broadcast_axes(a.shape, out_vals.shape)
        ax_b = _broadcast_axes(b.shape, out_vals.shape)
        if ax_a:
            ga = ga.sum(axis=ax_a, keepdims=True)
        if ax_b:
            gb = gb.sum(axis=ax_b, keepdims=True)
        _add_grad(grads, a, ga)
        _add_grad(grads, b, gb)

    return _make(out_vals, (a, b), backprop, "mul")


def _broadcast_ok(sa, sb):
    if len(sa) != 4 or len(sb) != 4 or sa[0] != sb[0]:
        return False
    # [B,1,H,W] x [B,C,H,W]
    if sa[2:] == sb[2:] and (sa[1] == 1 or sb[1] == 1):
        return True
    # [B,C,1,1] x [B,C,H,W]
    if sa[1] == sb[1] and (sa[2:] == (1, 1) or sb[2:] == (1, 1)):
        return True
    return False


def div(a, b):
    a = _const(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return mul(a, 1.0 / float(b))
    b = _const(b)
    if a.shape != b.shape:
        raise ValueError(f"div shape mismatch {a.shape} vs {b.shape}")
    out_vals = a.values / b.values

    def backprop(g, grads):
        _add_grad(grads, a, g / b.values)
        _add_grad(grads, b, -g * a.values / (b.values * b.values))

    return _make(out_vals, (a, b), backprop, "div")


def absolute(x):
    """|x|; the subgradient at 0 is 0."""
    x = _const(x)
    sign = np.sign(x.values)

    def backprop(g, grads):
        _add_grad(grads, x, g * sign)

    return _make(np.abs(x.values), (x,), backprop, "abs")


def relu(x):
    x = _const(x)
    mask = x.values > 0.0

    def backprop(g, grads):
        _add_grad(grads, x, g * mask)

    return _make(np.where(mask, x.values, 0.0), (x,), backprop, "relu")


def sigmoid(x):
    x = _const(x)
    v = x.values
    out_vals = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                        np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def backprop(g, grads):
        _add_grad(grads, x, g * out_vals * (1.0 - out_vals))

    return _make(out_vals, (x,), backprop, "sigmoid")


def log(x):
    x = _const(x)
    if np.any(x.values <= 0.0):
        raise NumericError("log of a non-positive value")

    def backprop(g, grads):
        _add_grad(grads, x, g / x.values)

    return _make(np.log(x.values), (x,), backprop, "log")


def sqrt(x):
    """Square root; callers keep inputs strictly positive (the derivative
    blows up at 0)."""
    x = _const(x)
    if np.any(x.values < 0.0):
        raise NumericError("sqrt of a negative value")
    out_vals = np.sqrt(x.values)

    def backprop(g, grads):
        _add_grad(grads, x, g * 0.5 / out_vals)

    return _make(out_vals, (x,), backprop, "sqrt")


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only strictly inside the range."""
    x = _const(x)
    inside = (x.values > lo) & (x.values < hi)

    def backprop(g, grads):
        _add_grad(grads, x, g * inside)

    return _make(np.clip(x.values, lo, hi), (x,), backprop, "clip")


def concat_channels(tensors):
    """Concatenate 4-d tensors along the channel axis."""
    tensors = [_const(t) for t in tensors]
    base = tensors[0].shape
    for t in tensors:
        if t.ndim != 4 or t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise ValueError(f"concat extent mismatch: {[t.shape for t in tensors]}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backprop(g, grads):
        for t, piece in zip(tensors, np.split(g, splits, axis=1)):
            _add_grad(grads, t, piece)

    return _make(np.concatenate([t.values for t in tensors], axis=1),
                 tuple(tensors), backprop, "concat")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False):
    x = _const(x)
    axes = _norm_axis(axis, x.ndim)
    out_vals = x.values.sum(axis=axes, keepdims=keepdims)

    def backprop(g, grads):
        gk = g if keepdims else np.expand_dims(g, axes) if axes else g
        _add_grad(grads, x, np.broadcast_to(gk, x.shape).copy())

    return _make(out_vals, (x,), backprop, "sum")


def tmean(x, axis=None, keepdims=False):
    x = _const(x)
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out_vals = x.values.mean(axis=axes, keepdims=keepdims)

    def backprop(g, grads):
        gk = g if keepdims else np.expand_dims(g, axes) if axes else g
        _add_grad(grads, x, np.broadcast_to(gk, x.shape).copy() / n)

    return _make(out_vals, (x,), backprop, "mean")


def reshape(x, *shape):
    x = _const(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = x.shape

    def backprop(g, grads):
        _add_grad(grads, x, g.reshape(old))

    return _make(x.values.reshape(shape), (x,), backprop, "reshape")


def transpose(x, *axes):
    x = _const(x)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    inverse = tuple(np.argsort(axes))

    def backprop(g, grads):
        _add_grad(grads, x, g.transpose(inverse))

    return _make(x.values.transpose(axes), (x,), backprop, "transpose")


def softmax(x, axis):
    """Numerically stable softmax along one axis."""
    x = _const(x)
    axis = axis % x.ndim
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_vals = e / e.sum(axis=axis, keepdims=True)

    def backprop(g, grads):
        inner = (g * out_vals).sum(axis=axis, keepdims=True)
        _add_grad(grads, x, out_vals * (g - inner))

    return _make(out_vals, (x,), backprop, "softmax")


# ---------------------------------------------------------------------------
# convolution, pooling, resizing
# ---------------------------------------------------------------------------

def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _windows(arr, wh, ww, stride):
    """Strided read-only view of all wh x ww windows: [B,C,Ho,Wo,wh,ww]."""
    b, c, h, w = arr.shape
    ho = (h - wh) // stride + 1
    wo = (w - ww) // stride + 1
    sb, sc, sh, sw = arr.strides
    return np.lib.stride_tricks.as_strided(
        arr, (b, c, ho, wo, wh, ww), (sb, sc, sh * stride, sw * stride, sh, sw),
        writeable=False)


def conv2d(x, kernel, stride=1, padding=(0, 0), bias=None):
    """Cross-correlation of [B,Cin,H,W] with a [Cout,Cin,kh,kw] kernel.

    Output extent along each spatial axis is floor((n + 2p - k) / stride) + 1.
    Gradients are defined for the input, the kernel, and the optional
    per-output-channel bias.
    """
    x = _const(x)
    kernel = _const(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects 4-d input and kernel")
    b, cin, h, w = x.shape
    cout, kc, kh, kw = kernel.shape
    if kc != cin:
        raise ValueError(f"conv2d channel mismatch: input {cin}, kernel {kc}")
    if kh < 1 or kw < 1 or stride < 1:
        raise ValueError("conv2d kernel extents and stride must be positive")
    ph, pw = _pair(padding)
    if ph < 0 or pw < 0:
        raise ValueError("conv2d padding must be non-negative")
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ValueError(f"conv2d padded extents ({h + 2 * ph},{w + 2 * pw}) "
                         f"smaller than kernel ({kh},{kw})")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({cout},)")

    if ph or pw:
        padded = np.zeros((b, cin, h + 2 * ph, w + 2 * pw))
        padded[:, :, ph:ph + h, pw:pw + w] = x.values
    else:
        padded = x.values
    win = _windows(padded, kh, kw, stride)
    _, _, ho, wo, _, _ = win.shape
    cols = win.reshape(b, cin, ho, wo, kh * kw)
    cols = cols.transpose(0, 1, 4, 2, 3).reshape(b, cin * kh * kw, ho * wo)
    kmat = kernel.values.reshape(cout, cin * kh * kw)
    out_vals = np.matmul(kmat, cols).reshape(b, cout, ho, wo)
    if bias is not None:
        out_vals = out_vals + bias.values.reshape(1, cout, 1, 1)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backprop(g, grads):
        gmat = g.reshape(b, cout, ho * wo)
        if bias is not None and bias.requires_grad:
            _add_grad(grads, bias, g.sum(axis=(0, 2, 3)))
        if kernel.requires_grad:
            gk = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            _add_grad(grads, kernel, gk.reshape(cout, cin, kh, kw))
        if x.requires_grad:
            gcols = np.matmul(kmat.T, gmat)  # [B, cin*kh*kw, ho*wo]
            gcols = gcols.reshape(b, cin, kh, kw, ho, wo)
            gpad = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    gpad[:, :, i:i + (ho - 1) * stride + 1:stride,
                         j:j + (wo - 1) * stride + 1:stride] += gcols[:, :, i, j]
            _add_grad(grads, x, gpad[:, :, ph:ph + h, pw:pw + w])

    return _make(out_vals, parents, backprop, "conv2d")


def max_pool(x, window, stride=None):
    """Max pooling without padding. Ties send the gradient to the first
    (row-major) position inside the window."""
    x = _const(x)
    wh, ww = _pair(window)
    stride = wh if stride is None else int(stride)
    b, c, h, w = x.shape
    if wh > h or ww > w:
        raise ValueError(f"pool window ({wh},{ww}) larger than input ({h},{w})")
    win = _windows(x.values, wh, ww, stride)
    _, _, ho, wo, _, _ = win.shape
    flat = win.reshape(b, c, ho, wo, wh * ww)
    arg = flat.argmax(axis=-1)
    out_vals = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backprop(g, grads):
        bi, ci, yi, xi = np.indices((b, c, ho, wo))
        gx = np.zeros_like(x.values)
        np.add.at(gx, (bi, ci, yi * stride + arg // ww, xi * stride + arg % ww), g)
        _add_grad(grads, x, gx)

    return _make(out_vals, (x,), backprop, "max_pool")


def avg_pool(x, window, stride=None):
    """Average pooling without padding."""
    x = _const(x)
    wh, ww = _pair(window)
    stride = wh if stride is None else int(stride)
    b, c, h, w = x.shape
    if wh > h or ww > w:
        raise ValueError(f"pool window ({wh},{ww}) larger than input ({h},{w})")
    win = _windows(x.values, wh, ww, stride)
    _, _, ho, wo, _, _ = win.shape
    out_vals = win.mean(axis=(4, 5))
    n = wh * ww

    def backprop(g, grads):
        gx = np.zeros_like(x.values)
        gn = g / n
        for i in range(wh):
            for j in range(ww):
                gx[:, :, i:i + (ho - 1) * stride + 1:stride,
                   j:j + (wo - 1) * stride + 1:stride] += gn
        _add_grad(grads, x, gx)

    return _make(out_vals, (x,), backprop, "avg_pool")


def global_avg_pool(x):
    """Adaptive average pooling down to 1x1: each channel becomes its mean."""
    x = _const(x)
    b, c, h, w = x.shape
    out_vals = x.values.mean(axis=(2, 3), keepdims=True)

    def backprop(g, grads):
        _add_grad(grads, x, np.broadcast_to(g / (h * w), x.shape).copy())

    return _make(out_vals, (x,), backprop, "global_avg_pool")


def global_max_pool(x):
    return max_pool(x, (x.shape[2], x.shape[3]))


def _resize_axis(n_in, n_out):
    # align-corners=false sampling grid
    scale = n_in / n_out
    src = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(x, target):
    """Bilinear resize of [B,C,H,W] to target (H', W')."""
    x = _const(x)
    th, tw = _pair(target)
    if th < 1 or tw < 1:
        raise ValueError("resize target extents must be >= 1")
    b, c, h, w = x.shape
    y0, y1, fy = _resize_axis(h, th)
    x0, x1, fx = _resize_axis(w, tw)
    fy = fy[:, None]
    fx = fx[None, :]
    v = x.values
    out_vals = ((1 - fy) * (1 - fx) * v[:, :, y0[:, None], x0[None, :]]
                + (1 - fy) * fx * v[:, :, y0[:, None], x1[None, :]]
                + fy * (1 - fx) * v[:, :, y1[:, None], x0[None, :]]
                + fy * fx * v[:, :, y1[:, None], x1[None, :]])

    def backprop(g, grads):
        gx = np.zeros_like(v)
        bi, ci = np.indices((b, c))[:, :, :, None, None]
        yy0 = y0[None, None, :, None]
        yy1 = y1[None, None, :, None]
        xx0 = x0[None, None, None, :]
        xx1 = x1[None, None, None, :]
        np.add.at(gx, (bi, ci, yy0, xx0), g * (1 - fy) * (1 - fx))
        np.add.at(gx, (bi, ci, yy0, xx1), g * (1 - fy) * fx)
        np.add.at(gx, (bi, ci, yy1, xx0), g * fy * (1 - fx))
        np.add.at(gx, (bi, ci, yy1, xx1), g * fy * fx)
        _add_grad(grads, x, gx)

    return _make(out_vals, (x,), backprop, "resize_bilinear")


def resize_nearest(x, target):
    """Nearest-neighbour resize of [B,C,H,W] to target (H', W')."""
    x = _const(x)
    th, tw = _pair(target)
    if th < 1 or tw < 1:
        raise ValueError("resize target extents must be >= 1")
    b, c, h, w = x.shape
    yi = np.minimum((np.arange(th) * (h / th)).astype(np.int64), h - 1)
    xi = np.minimum((np.arange(tw) * (w / tw)).astype(np.int64), w - 1)
    out_vals = x.values[:, :, yi[:, None], xi[None, :]]

    def backprop(g, grads):
        gx = np.zeros_like(x.values)
        bi, ci = np.indices((b, c))[:, :, :, None, None]
        np.add.at(gx, (bi, ci, yi[None, None, :, None], xi[None, None, None, :]), g)
        _add_grad(grads, x, gx)

    return _make(out_vals, (x,), backprop, "resize_nearest")


def group_norm(x, gamma, beta, groups, eps=1e-5):
    """Group normalization over [B,C,H,W] with per-channel affine terms."""
    x = _const(x)
    b, c, h, w = x.shape
    if c % groups:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    gsize = c // groups
    xg = x.values.reshape(b, groups, gsize * h * w)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(b, c, h, w)
    gam = gamma.values.reshape(1, c, 1, 1)
    out_vals = xhat * gam + beta.values.reshape(1, c, 1, 1)

    def backprop(g, grads):
        if gamma.requires_grad:
            _add_grad(grads, gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _add_grad(grads, beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gh = (g * gam).reshape(b, groups, gsize * h * w)
            xh = xhat.reshape(b, groups, gsize * h * w)
            m1 = gh.mean(axis=2, keepdims=True)
            m2 = (gh * xh).mean(axis=2, keepdims=True)
            gx = (gh - m1 - xh * m2) * inv
            _add_grad(grads, x, gx.reshape(b, c, h, w))

    return _make(out_vals, (x, gamma, beta), backprop, "group_norm")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

class ParamStore:
    """Named learnable tensors with deterministic iteration order.

    Weight sharing (e.g. between the two branches of a pair) happens by
    construction: both callers read the same entry.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def register(self, name, values):
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(values, requires_grad=True, name=name)
        self._entries[name] = t
        return t

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def tensors(self):
        return self._entries.values()

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = None

    def value_count(self):
        return sum(t.size for t in self._entries.values())


def kaiming_uniform(rng, shape, fan_in):
    """He-style uniform init, fan-in mode with the ReLU gain."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Per-parameter maximum relative error of analytic vs numeric grads."""
    per_param: dict = field(default_factory=dict)
    step: float = 1e-4
    tol: float = 1e-3

    @property
    def max_error(self):
        return max(self.per_param.values(), default=0.0)

    @property
    def failures(self):
        return {k: v for k, v in self.per_param.items() if v > self.tol}

    @property
    def passed(self):
        return not self.failures

    def lines(self):
        out = []
        for name, err in self.per_param.items():
            flag = "ok  " if err <= self.tol else "FAIL"
            out.append(f"{flag} {name}: max rel err {err:.3e}")
        return out


def grad_check(f, params, step=1e-4, tol=1e-3):
    """Compare backward() gradients against central finite differences.

    `f` is a zero-argument callable returning a scalar Tensor and must be a
    deterministic function of `params` (a ParamStore or a name->Tensor
    mapping). Relative error uses max(|analytic|, |numeric|, 1e-8) as the
    denominator. Raises on non-deterministic `f`.
    """
    entries = dict(params.items()) if isinstance(params, ParamStore) else dict(params)
    with no_grad():
        first = float(f().values.reshape(()))
        second = float(f().values.reshape(()))
    if first != second:
        raise RuntimeError("grad_check: f is not deterministic "
                           f"({first!r} vs {second!r})")

    for t in entries.values():
        t.grad = None
    backward(f())
    analytic = {name: (np.zeros_like(t.values) if t.grad is None else t.grad.copy())
                for name, t in entries.items()}
    for t in entries.values():
        t.grad = None

    report = GradCheckReport(step=step, tol=tol)
    with no_grad():
        for name, t in entries.items():
            flat = t.values.reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + step
                hi = float(f().values.reshape(()))
                flat[i] = saved - step
                lo = float(f().values.reshape(()))
                flat[i] = saved
                numeric = (hi - lo) / (2.0 * step)
                a = analytic[name].reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
            report.per_param[name] = worst
    return report

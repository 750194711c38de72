"""Differentiable ops for the 3-D classifier.

Reductions accumulate in float64; results are stored in the input dtype.
Each op validates shapes up front and registers a closure computing parent
gradients (only for parents that require them).
"""

import numpy as np

from ..errors import NnError
from . import backend
from .tensor import Tensor, as_tensor, grad_enabled


def _make(data, parents, backward_builder, op):
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_builder(), op)
    return Tensor(data, False, op=op)


def _reduce(arr, axes, dtype, keepdims=False):
    return np.sum(arr, axis=axes, dtype=np.float64, keepdims=keepdims).astype(dtype, copy=False)


# ---------------------------------------------------------------------------
# layer ops

def conv3d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of (N,Ci,H,W,D) input with (Co,Ci,k,k,k) weights."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 5 or weight.data.ndim != 5:
        raise NnError("conv3d expects 5-D input and weights")
    co, ci, k = weight.shape[0], weight.shape[1], weight.shape[2]
    if weight.shape[3] != k or weight.shape[4] != k or k % 2 == 0:
        raise NnError("conv3d kernel must be cubic with odd extent")
    if x.shape[1] != ci:
        raise NnError(f"conv3d channel mismatch: input {x.shape[1]}, weight {ci}")
    for dim in x.shape[2:]:
        if backend.out_extent(dim, k, stride, padding) < 1:
            raise NnError("conv3d output would be empty")

    y, xp = backend.conv3d_forward(x.data, weight.data, stride, padding)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (co,):
            raise NnError("conv3d bias must have one entry per output channel")
        y = y + bias.data.reshape(1, co, 1, 1, 1)

    def build():
        need_x, need_w = x.requires_grad, weight.requires_grad
        need_b = bias is not None and bias.requires_grad
        saved_xp = xp if need_w else None

        def bwd(g):
            g = np.ascontiguousarray(g)
            gx = backend.conv3d_grad_input(g, weight.data, x.shape, stride, padding) if need_x else None
            gw = backend.conv3d_grad_weight(x.data, g, k, stride, padding,
                                            xp=saved_xp) if need_w else None
            gb = _reduce(g, (0, 2, 3, 4), g.dtype) if need_b else None
            return (gx, gw, gb) if bias is not None else (gx, gw)

        return bwd

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, parents, build, "conv3d")


class BnState:
    """Running statistics for one batch-norm layer (population variance)."""

    def __init__(self, channels, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.batches_tracked = 0


def batch_norm3d(x, gamma, beta, state, training, momentum=0.1, eps=1e-5):
    """Per-channel normalization over (N,H,W,D); updates running stats in train mode."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise NnError("batch_norm3d parameter shape mismatch")
    axes = (0, 2, 3, 4)
    dt = x.dtype
    if training:
        m = x.data.size // c
        mean64 = np.mean(x.data, axis=axes, dtype=np.float64)
        # buffered einsum accumulates in float64 without materializing a cast copy
        sq64 = np.einsum("nchwd,nchwd->c", x.data, x.data, dtype=np.float64) / m
        var64 = np.maximum(sq64 - mean64 * mean64, 0.0)
        state.running_mean = ((1.0 - momentum) * state.running_mean.astype(np.float64)
                              + momentum * mean64).astype(state.running_mean.dtype)
        state.running_var = ((1.0 - momentum) * state.running_var.astype(np.float64)
                             + momentum * var64).astype(state.running_var.dtype)
        state.batches_tracked += 1
    else:
        if state.batches_tracked == 0:
            raise NnError("batch_norm3d eval mode before any training batches")
        m = None
        mean64 = state.running_mean.astype(np.float64)
        var64 = state.running_var.astype(np.float64)

    inv = (1.0 / np.sqrt(var64 + eps)).astype(dt, copy=False)
    mean = mean64.astype(dt, copy=False)
    # fused affine y = x * scale + shift; x-hat is rebuilt lazily in backward
    scale = gamma.data * inv
    shift = beta.data - scale * mean
    y = x.data * scale[None, :, None, None, None] + shift[None, :, None, None, None]

    def build():
        need_x, need_g, need_b = x.requires_grad, gamma.requires_grad, beta.requires_grad

        def bwd(g):
            xhat = ((x.data - mean[None, :, None, None, None])
                    * inv[None, :, None, None, None]) if (need_g or need_x) else None
            dgamma = _reduce(g * xhat, axes, gamma.dtype) if (need_g or need_x) else None
            dbeta = _reduce(g, axes, beta.dtype) if (need_b or need_x) else None
            if need_x:
                gscaled = (gamma.data * inv)[None, :, None, None, None]
                if training:
                    gs = dbeta.astype(dt)[None, :, None, None, None]
                    gxs = dgamma.astype(dt)[None, :, None, None, None]
                    dx = gscaled * (g - gs / m - xhat * (gxs / m))
                else:
                    dx = gscaled * g
            else:
                dx = None
            return dx, (dgamma if need_g else None), (dbeta if need_b else None)

        return bwd

    return _make(y, (x, gamma, beta), build, "batch_norm3d")


def relu(x):
    x = as_tensor(x)
    y = np.maximum(x.data, 0)

    def build():
        mask = x.data > 0

        def bwd(g):
            return (g * mask,)

        return bwd

    return _make(y, (x,), build, "relu")


def avg_pool3d(x, window=2):
    """Non-overlapping cubic mean pooling; trailing odd extents are truncated."""
    x = as_tensor(x)
    n, c, h, w, d = x.shape
    ho, wo, do = h // window, w // window, d // window
    if ho < 1 or wo < 1 or do < 1:
        raise NnError("avg_pool3d input smaller than window")
    crop = x.data[:, :, :ho * window, :wo * window, :do * window]
    blocks = crop.reshape(n, c, ho, window, wo, window, do, window)
    y = np.mean(blocks, axis=(3, 5, 7), dtype=np.float64).astype(x.dtype, copy=False)

    def build():
        def bwd(g):
            ge = (g / float(window ** 3)).astype(x.dtype, copy=False)
            expanded = np.broadcast_to(
                ge[:, :, :, None, :, None, :, None],
                (n, c, ho, window, wo, window, do, window),
            ).reshape(n, c, ho * window, wo * window, do * window)
            if (ho * window, wo * window, do * window) == (h, w, d):
                return (np.ascontiguousarray(expanded),)
            gx = np.zeros((n, c, h, w, d), dtype=x.dtype)
            gx[:, :, :ho * window, :wo * window, :do * window] = expanded
            return (gx,)

        return bwd

    return _make(y, (x,), build, "avg_pool3d")


def global_avg_pool(x):
    x = as_tensor(x)
    n, c = x.shape[0], x.shape[1]
    count = x.data.size // (n * c)
    y = np.mean(x.data, axis=(2, 3, 4), dtype=np.float64).astype(x.dtype, copy=False)

    def build():
        shape = x.shape

        def bwd(g):
            ge = (g / float(count)).astype(x.dtype, copy=False)
            return (np.broadcast_to(ge[:, :, None, None, None], shape).copy(),)

        return bwd

    return _make(y, (x,), build, "global_avg_pool")


def linear(x, weight, bias=None):
    """x:(N,C) @ weight:(K,C).T + bias."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[1] != weight.shape[1]:
        raise NnError("linear feature mismatch")
    y64 = np.matmul(x.data.astype(np.float64, copy=False), weight.data.astype(np.float64, copy=False).T)
    if bias is not None:
        bias = as_tensor(bias)
        y64 = y64 + bias.data.astype(np.float64, copy=False)
    y = y64.astype(x.dtype, copy=False)

    def build():
        need_x, need_w = x.requires_grad, weight.requires_grad
        need_b = bias is not None and bias.requires_grad

        def bwd(g):
            g64 = g.astype(np.float64, copy=False)
            gx = np.matmul(g64, weight.data.astype(np.float64, copy=False)).astype(x.dtype) if need_x else None
            gw = np.matmul(g64.T, x.data.astype(np.float64, copy=False)).astype(weight.dtype) if need_w else None
            gb = _reduce(g, (0,), bias.dtype) if need_b else None
            return (gx, gw, gb) if bias is not None else (gx, gw)

        return bwd

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, parents, build, "linear")


def softmax(logits):
    """Row softmax with max subtraction; rows sum to 1 within float tolerance."""
    logits = as_tensor(logits)
    z = logits.data.astype(np.float64, copy=False)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p64 = e / e.sum(axis=1, keepdims=True)
    p = p64.astype(logits.dtype, copy=False)

    def build():
        def bwd(g):
            g64 = g.astype(np.float64, copy=False)
            inner = np.sum(g64 * p64, axis=1, keepdims=True)
            return ((p64 * (g64 - inner)).astype(logits.dtype, copy=False),)

        return bwd

    return _make(p, (logits,), build, "softmax")


def concat_channels(tensors):
    tensors = [as_tensor(t) for t in tensors]
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != len(first) or (t.shape[0],) + t.shape[2:] != (first[0],) + first[2:]:
            raise NnError(f"concat_channels shape mismatch: {first} vs {t.shape}")
    y = np.concatenate([t.data for t in tensors], axis=1)

    def build():
        sizes = [t.shape[1] for t in tensors]

        def bwd(g):
            out, start = [], 0
            for size in sizes:
                out.append(np.ascontiguousarray(g[:, start:start + size]))
                start += size
            return tuple(out)

        return bwd

    return _make(y, tuple(tensors), build, "concat_channels")


# ---------------------------------------------------------------------------
# scalar / loss plumbing

def add(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        y = a.data + a.dtype.type(b)

        def build_const():
            def bwd(g):
                return (g,)

            return bwd

        return _make(y, (a,), build_const, "add")
    if a.shape != b.shape:
        raise NnError("add shape mismatch")

    def build():
        def bwd(g):
            return g, g

        return bwd

    return _make(a.data + b.data, (a, b), build, "add")


def mul(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    if a.shape != b.shape:
        raise NnError("mul shape mismatch")

    def build():
        def bwd(g):
            return g * b.data, g * a.data

        return bwd

    return _make(a.data * b.data, (a, b), build, "mul")


def scale(x, c):
    x = as_tensor(x)
    cc = x.dtype.type(c)

    def build():
        def bwd(g):
            return (g * cc,)

        return bwd

    return _make(x.data * cc, (x,), build, "scale")


def mul_array(x, arr):
    """Multiply by a constant array (no gradient for the array)."""
    x = as_tensor(x)
    arr = np.asarray(arr, dtype=x.dtype)
    if arr.shape != x.shape:
        raise NnError("mul_array shape mismatch")

    def build():
        def bwd(g):
            return (g * arr,)

        return bwd

    return _make(x.data * arr, (x,), build, "mul_array")


def rsub_const(c, x):
    """c - x."""
    x = as_tensor(x)

    def build():
        def bwd(g):
            return (-g,)

        return bwd

    return _make(x.dtype.type(c) - x.data, (x,), build, "rsub_const")


def log(x):
    x = as_tensor(x)
    y = np.log(x.data)

    def build():
        def bwd(g):
            return (g / x.data,)

        return bwd

    return _make(y, (x,), build, "log")


def pow_const(x, exponent):
    x = as_tensor(x)
    e = float(exponent)
    y = np.power(x.data, x.dtype.type(e))

    def build():
        def bwd(g):
            if e == 0.0:
                return (np.zeros_like(x.data),)
            return (g * x.dtype.type(e) * np.power(x.data, x.dtype.type(e - 1.0)),)

        return bwd

    return _make(y, (x,), build, "pow_const")


def clip(x, lo, hi):
    x = as_tensor(x)
    y = np.clip(x.data, lo, hi)

    def build():
        mask = (x.data > lo) & (x.data < hi)

        def bwd(g):
            return (g * mask,)

        return bwd

    return _make(y, (x,), build, "clip")


def gather_rows(x, idx):
    """Pick x[i, idx[i]] for each row i of an (N,K) tensor."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != x.shape[0]:
        raise NnError("gather_rows index shape mismatch")
    if idx.min() < 0 or idx.max() >= x.shape[1]:
        raise NnError("gather_rows index out of range")
    rows = np.arange(x.shape[0])
    y = x.data[rows, idx]

    def build():
        def bwd(g):
            gx = np.zeros_like(x.data)
            gx[rows, idx] = g
            return (gx,)

        return bwd

    return _make(y, (x,), build, "gather_rows")


def mean_all(x):
    x = as_tensor(x)
    y = np.array(np.mean(x.data, dtype=np.float64), dtype=x.dtype)

    def build():
        def bwd(g):
            return (np.full(x.shape, g / x.size, dtype=x.dtype),)

        return bwd

    return _make(y, (x,), build, "mean_all")


def sum_all(x):
    x = as_tensor(x)
    y = np.array(np.sum(x.data, dtype=np.float64), dtype=x.dtype)

    def build():
        def bwd(g):
            return (np.full(x.shape, g, dtype=x.dtype),)

        return bwd

    return _make(y, (x,), build, "sum_all")

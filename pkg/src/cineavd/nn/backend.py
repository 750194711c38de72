"""Convolution backend selection.

Two interchangeable implementations of the 3-D convolution primitives:

* ``compiled`` -- Cython/OpenMP kernels (built at install time), used for
  stride-1 convolutions with kernel size > 1;
* ``numpy``   -- pure-numpy shift-and-matmul fallback, always available.

1x1x1 convolutions are channel matmuls and go through BLAS in both backends.
Every path accumulates in float64 and returns the storage dtype of its
inputs.  Set ``CINEAVD_FORCE_NUMPY=1`` to ignore the compiled extension.
"""

import os

import numpy as np

try:
    if os.environ.get("CINEAVD_FORCE_NUMPY") == "1":
        raise ImportError("numpy backend forced via CINEAVD_FORCE_NUMPY")
    from . import _convkernels as _ext

    BACKEND = "compiled"
except ImportError:
    _ext = None
    BACKEND = "numpy"


def out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _pad5(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))


def _scratch(width: int) -> np.ndarray:
    # rows padded to whole cache lines so per-thread accumulators never share one
    threads = _ext.max_threads() if _ext is not None else 1
    padded = ((width + 63) // 64 + 1) * 64
    return np.empty((max(threads, 1), padded), dtype=np.float64)


def _matmul_f64(a, b):
    """a @ b with float64 accumulation, result cast back to a.dtype."""
    dt = np.result_type(a.dtype, b.dtype)
    out = np.matmul(a.astype(np.float64, copy=False), b.astype(np.float64, copy=False))
    return out.astype(dt, copy=False)


def _conv1x1_fwd(x, w, stride, pad):
    n, ci, h, wd, d = x.shape
    co = w.shape[0]
    xp = _pad5(x, pad)
    ho = out_extent(h, 1, stride, pad)
    wo = out_extent(wd, 1, stride, pad)
    do = out_extent(d, 1, stride, pad)
    xs = xp[:, :, : (ho - 1) * stride + 1 : stride,
            : (wo - 1) * stride + 1 : stride,
            : (do - 1) * stride + 1 : stride]
    flat = np.ascontiguousarray(xs).reshape(n, ci, -1)
    y = _matmul_f64(w.reshape(co, ci)[None], flat)
    return y.reshape(n, co, ho, wo, do)


def _conv1x1_gw(x, gy, stride, pad):
    n, ci, h, wd, d = x.shape
    ho, wo, do = gy.shape[2:]
    xp = _pad5(x, pad)
    xs = xp[:, :, : (ho - 1) * stride + 1 : stride,
            : (wo - 1) * stride + 1 : stride,
            : (do - 1) * stride + 1 : stride]
    flat = np.ascontiguousarray(xs).reshape(n, ci, -1).astype(np.float64, copy=False)
    gflat = gy.reshape(gy.shape[0], gy.shape[1], -1).astype(np.float64, copy=False)
    gw = np.einsum("nop,ncp->oc", gflat, flat, optimize=True)
    return gw.reshape(gy.shape[1], ci, 1, 1, 1).astype(x.dtype, copy=False)


def _conv1x1_gx(gy, w, x_shape, stride, pad):
    n, ci, h, wd, d = x_shape
    co = w.shape[0]
    gflat = gy.reshape(n, co, -1)
    gxs = _matmul_f64(w.reshape(co, ci).T[None], gflat).reshape(
        n, ci, gy.shape[2], gy.shape[3], gy.shape[4])
    gxp = np.zeros((n, ci, h + 2 * pad, wd + 2 * pad, d + 2 * pad), dtype=gy.dtype)
    ho, wo, do = gy.shape[2:]
    gxp[:, :, : (ho - 1) * stride + 1 : stride,
        : (wo - 1) * stride + 1 : stride,
        : (do - 1) * stride + 1 : stride] = gxs
    if pad == 0:
        return gxp
    return np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + wd, pad:pad + d])


def _numpy_fwd_padded(xp, dtype, w, stride):
    n = xp.shape[0]
    co, k = w.shape[0], w.shape[2]
    hp, wp, dp = xp.shape[2:]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    do = (dp - k) // stride + 1
    out = np.zeros((n, co, ho, wo, do), dtype=np.float64)
    w64 = w.astype(np.float64)
    for kh in range(k):
        for kw in range(k):
            for kd in range(k):
                sl = xp[:, :, kh:kh + (ho - 1) * stride + 1:stride,
                        kw:kw + (wo - 1) * stride + 1:stride,
                        kd:kd + (do - 1) * stride + 1:stride].astype(np.float64, copy=False)
                out += np.tensordot(w64[:, :, kh, kw, kd], sl,
                                    axes=([1], [1])).transpose(1, 0, 2, 3, 4)
    return out.astype(dtype, copy=False)


def _numpy_gw_padded(xp, dtype, gy, k, stride):
    xp64 = xp.astype(np.float64, copy=False)
    gy64 = gy.astype(np.float64, copy=False)
    co, ci = gy.shape[1], xp.shape[1]
    ho, wo, do = gy.shape[2:]
    gw = np.empty((co, ci, k, k, k), dtype=np.float64)
    for kh in range(k):
        for kw in range(k):
            for kd in range(k):
                sl = xp64[:, :, kh:kh + (ho - 1) * stride + 1:stride,
                          kw:kw + (wo - 1) * stride + 1:stride,
                          kd:kd + (do - 1) * stride + 1:stride]
                gw[:, :, kh, kw, kd] = np.tensordot(gy64, sl, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return gw.astype(dtype, copy=False)


def _numpy_gx(gy, w, x_shape, stride, pad):
    n, ci, h, wd, d = x_shape
    k = w.shape[2]
    ho, wo, do = gy.shape[2:]
    gxp = np.zeros((n, ci, h + 2 * pad, wd + 2 * pad, d + 2 * pad), dtype=np.float64)
    gy64 = gy.astype(np.float64, copy=False)
    w64 = w.astype(np.float64)
    for kh in range(k):
        for kw in range(k):
            for kd in range(k):
                contrib = np.tensordot(w64[:, :, kh, kw, kd], gy64,
                                       axes=([0], [1])).transpose(1, 0, 2, 3, 4)
                gxp[:, :, kh:kh + (ho - 1) * stride + 1:stride,
                    kw:kw + (wo - 1) * stride + 1:stride,
                    kd:kd + (do - 1) * stride + 1:stride] += contrib
    gx = gxp[:, :, pad:pad + h, pad:pad + wd, pad:pad + d]
    return np.ascontiguousarray(gx).astype(gy.dtype, copy=False)


GW_SLABS = 8  # fixed slab count keeps the partial-sum order thread-count invariant


def conv3d_forward(x, w, stride=1, padding=0, xp=None):
    """Cross-correlation of (N,Ci,H,W,D) with (Co,Ci,k,k,k), float64 accumulation.

    Returns (y, xp); callers may hand xp back to conv3d_grad_weight to avoid
    re-padding in the backward pass.
    """
    k = w.shape[2]
    if k == 1:
        if _ext is not None and stride == 1 and padding == 0:
            n, ci, h, wd, d = x.shape
            y = np.empty((n, w.shape[0], h, wd, d), dtype=x.dtype)
            _ext.conv1x1_fwd(np.ascontiguousarray(x),
                             np.ascontiguousarray(w.reshape(w.shape[0], ci)), y,
                             _scratch(d))
            return y, None
        return _conv1x1_fwd(x, w, stride, padding), None
    if xp is None:
        xp = np.ascontiguousarray(_pad5(x, padding))
    if _ext is not None and stride == 1:
        n, ci, h, wd, d = x.shape
        ho = out_extent(h, k, 1, padding)
        wo = out_extent(wd, k, 1, padding)
        do = out_extent(d, k, 1, padding)
        y = np.empty((n, w.shape[0], ho, wo, do), dtype=x.dtype)
        _ext.conv3d_fwd(xp, np.ascontiguousarray(w.astype(x.dtype, copy=False)), y,
                        _scratch(max(do, 1)))
        return y, xp
    return _numpy_fwd_padded(xp, x.dtype, w, stride), xp


def conv3d_grad_weight(x, gy, k, stride=1, padding=0, xp=None):
    if k == 1:
        if _ext is not None and stride == 1 and padding == 0:
            co, ci = gy.shape[1], x.shape[1]
            n, ho = gy.shape[0], gy.shape[2]
            slabs = min(GW_SLABS, n * ho)
            partial = np.zeros((slabs, co * ci, 1), dtype=np.float64)
            _ext.conv1x1_gw(np.ascontiguousarray(x), np.ascontiguousarray(gy), partial)
            return partial.sum(axis=0).reshape(co, ci, 1, 1, 1).astype(x.dtype, copy=False)
        return _conv1x1_gw(x, gy, stride, padding)
    if xp is None:
        xp = np.ascontiguousarray(_pad5(x, padding))
    if _ext is not None and stride == 1:
        co, ci = gy.shape[1], x.shape[1]
        n, ho = gy.shape[0], gy.shape[2]
        slabs = min(GW_SLABS, n * ho)
        partial = np.zeros((slabs, co * ci, k ** 3), dtype=np.float64)
        _ext.conv3d_gw(xp, np.ascontiguousarray(gy), partial)
        gw = partial.sum(axis=0).reshape(co, ci, k, k, k)
        return gw.astype(x.dtype, copy=False)
    return _numpy_gw_padded(xp, x.dtype, gy, k, stride)


def conv3d_grad_input(gy, w, x_shape, stride=1, padding=0):
    k = w.shape[2]
    if k == 1:
        if _ext is not None and stride == 1 and padding == 0:
            co, ci = w.shape[0], w.shape[1]
            gx = np.empty(x_shape, dtype=gy.dtype)
            wt = np.ascontiguousarray(w.reshape(co, ci).T)
            _ext.conv1x1_fwd(np.ascontiguousarray(gy), wt, gx, _scratch(x_shape[4]))
            return gx
        return _conv1x1_gx(gy, w, x_shape, stride, padding)
    if _ext is not None and stride == 1 and padding <= k - 1:
        # full correlation with the flipped, channel-transposed kernel
        wt = np.ascontiguousarray(
            w.transpose(1, 0, 2, 3, 4)[:, :, ::-1, ::-1, ::-1].astype(gy.dtype, copy=False))
        gx, _ = conv3d_forward(np.ascontiguousarray(gy), wt, stride=1, padding=k - 1 - padding)
        return gx
    return _numpy_gx(gy, w, x_shape, stride, padding)

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Hot 3-D convolution kernels (stride 1, odd kernel, pre-padded input).

Accumulation is in double precision regardless of the storage dtype.  Loops
are arranged rows-outer / channels-inner so input rows stay cache resident
across output channels.  Each output element (and each weight-gradient slab)
is reduced by exactly one thread in a fixed order, and the weight-gradient
slab count is fixed, so results are bitwise reproducible for any thread
count.
"""

import numpy as np

cimport openmp
from cython.parallel cimport prange, threadid

ctypedef fused real_t:
    float
    double


def max_threads():
    return openmp.omp_get_max_threads()


def conv3d_fwd(real_t[:, :, :, :, ::1] xp, real_t[:, :, :, :, ::1] w,
               real_t[:, :, :, :, ::1] y, double[:, ::1] scratch):
    """y[n,co,o] = sum_ci,k w[co,ci,k] * xp[n,ci,o+k]; xp already padded."""
    cdef Py_ssize_t N = y.shape[0], Co = y.shape[1], Ho = y.shape[2], Wo = y.shape[3], Do = y.shape[4]
    cdef Py_ssize_t Ci = w.shape[1], K = w.shape[2]
    cdef Py_ssize_t idx, n, co, oh, ow, od, ci, kh, kw, kd, tid
    cdef Py_ssize_t HW = Ho * Wo
    cdef double w0, w1, w2
    cdef const real_t* xr
    cdef const real_t* wr
    cdef double* acc
    with nogil:
        for idx in prange(N * Co * HW, schedule='static'):
            n = idx // (Co * HW)
            co = (idx // HW) % Co
            oh = (idx % HW) // Wo
            ow = idx % Wo
            tid = threadid()
            acc = &scratch[tid, 0]
            for od in range(Do):
                acc[od] = 0.0
            for ci in range(Ci):
                for kh in range(K):
                    for kw in range(K):
                        xr = &xp[n, ci, oh + kh, ow + kw, 0]
                        wr = &w[co, ci, kh, kw, 0]
                        if K == 3:
                            w0 = <double> wr[0]
                            w1 = <double> wr[1]
                            w2 = <double> wr[2]
                            for od in range(Do):
                                acc[od] += w0 * <double> xr[od] + w1 * <double> xr[od + 1] + w2 * <double> xr[od + 2]
                        else:
                            for kd in range(K):
                                w0 = <double> wr[kd]
                                for od in range(Do):
                                    acc[od] += w0 * <double> xr[od + kd]
            for od in range(Do):
                y[n, co, oh, ow, od] = <real_t> acc[od]
    return None


def conv1x1_fwd(real_t[:, :, :, :, ::1] x, real_t[:, ::1] w,
                real_t[:, :, :, :, ::1] y, double[:, ::1] scratch):
    """Pointwise conv: y[n,co,p] = sum_ci w[co,ci] * x[n,ci,p] (stride 1, no pad).

    Rows-outer / channels-inner so each input row is read once per output
    position regardless of Co; double accumulation via per-thread scratch.
    """
    cdef Py_ssize_t N = y.shape[0], Co = y.shape[1], Ho = y.shape[2], Wo = y.shape[3], Do = y.shape[4]
    cdef Py_ssize_t Ci = w.shape[1]
    cdef Py_ssize_t idx, n, oh, ow, od, co, ci, tid
    cdef Py_ssize_t HW = Ho * Wo
    cdef double wv
    cdef const real_t* xr
    cdef double* acc
    with nogil:
        for idx in prange(N * HW, schedule='static'):
            n = idx // HW
            oh = (idx % HW) // Wo
            ow = idx % Wo
            tid = threadid()
            for co in range(Co):
                acc = &scratch[tid, 0]
                for od in range(Do):
                    acc[od] = 0.0
                for ci in range(Ci):
                    wv = <double> w[co, ci]
                    xr = &x[n, ci, oh, ow, 0]
                    for od in range(Do):
                        acc[od] += wv * <double> xr[od]
                for od in range(Do):
                    y[n, co, oh, ow, od] = <real_t> acc[od]
    return None


def conv1x1_gw(real_t[:, :, :, :, ::1] x, real_t[:, :, :, :, ::1] gy,
               double[:, :, ::1] partial):
    """Pointwise-conv weight gradient into per-slab partials (slabs summed by caller):
    partial[slab, co*Ci + ci, 0] accumulates sum_p gy[n,co,p] * x[n,ci,p]."""
    cdef Py_ssize_t N = gy.shape[0], Co = gy.shape[1], Ho = gy.shape[2], Wo = gy.shape[3], Do = gy.shape[4]
    cdef Py_ssize_t Ci = x.shape[1]
    cdef Py_ssize_t slabs = partial.shape[0]
    cdef Py_ssize_t slab, i, r, n, oh, ow, od, lim, co, ci
    cdef double a0, a1, a2, a3
    cdef const real_t* gr
    cdef const real_t* xr
    cdef Py_ssize_t NHo = N * Ho
    with nogil:
        for slab in prange(slabs, schedule='static'):
            for i in range((NHo - slab + slabs - 1) // slabs):
                r = slab + i * slabs
                n = r // Ho
                oh = r % Ho
                for ow in range(Wo):
                    for co in range(Co):
                        gr = &gy[n, co, oh, ow, 0]
                        for ci in range(Ci):
                            xr = &x[n, ci, oh, ow, 0]
                            a0 = a1 = a2 = a3 = 0.0
                            lim = Do - (Do % 4)
                            for od in range(0, lim, 4):
                                a0 = a0 + <double> gr[od] * <double> xr[od]
                                a1 = a1 + <double> gr[od + 1] * <double> xr[od + 1]
                                a2 = a2 + <double> gr[od + 2] * <double> xr[od + 2]
                                a3 = a3 + <double> gr[od + 3] * <double> xr[od + 3]
                            a0 = (a0 + a1) + (a2 + a3)
                            for od in range(lim, Do):
                                a0 = a0 + <double> gr[od] * <double> xr[od]
                            partial[slab, co * Ci + ci, 0] += a0
    return None


def conv3d_gw(real_t[:, :, :, :, ::1] xp, real_t[:, :, :, :, ::1] gy,
              double[:, :, ::1] partial):
    """Per-slab weight gradients: partial[slab, co*Ci, K^3]; caller sums slabs.

    Rows (n, oh) are dealt round-robin over a fixed number of slabs, so the
    final slab reduction (done by the caller in index order) is independent
    of the thread count.  The od reduction uses four independent scalar
    accumulator chains per tap (exact fixed-order sums, pipeline friendly).
    """
    cdef Py_ssize_t N = gy.shape[0], Co = gy.shape[1], Ho = gy.shape[2], Wo = gy.shape[3], Do = gy.shape[4]
    cdef Py_ssize_t Ci = xp.shape[1]
    cdef Py_ssize_t KK3 = partial.shape[2]
    cdef Py_ssize_t K = 1
    while K * K * K < KK3:
        K += 1
    cdef Py_ssize_t slabs = partial.shape[0]
    cdef Py_ssize_t slab, i, r, n, oh, ow, od, lim, co, ci, kh, kw, kd, base
    # scalar accumulator chains (Cython privatizes scalars, not C arrays)
    cdef double a00, a01, a02, a03, a10, a11, a12, a13, a20, a21, a22, a23
    cdef double g0, g1, g2, g3
    cdef const real_t* gr
    cdef const real_t* xr
    cdef double* acc
    cdef Py_ssize_t NHo = N * Ho
    with nogil:
        for slab in prange(slabs, schedule='static'):
            for i in range((NHo - slab + slabs - 1) // slabs):
                r = slab + i * slabs
                n = r // Ho
                oh = r % Ho
                for ow in range(Wo):
                    for co in range(Co):
                        gr = &gy[n, co, oh, ow, 0]
                        for ci in range(Ci):
                            acc = &partial[slab, co * Ci + ci, 0]
                            for kh in range(K):
                                for kw in range(K):
                                    xr = &xp[n, ci, oh + kh, ow + kw, 0]
                                    base = (kh * K + kw) * K
                                    if K == 3:
                                        a00 = a01 = a02 = a03 = 0.0
                                        a10 = a11 = a12 = a13 = 0.0
                                        a20 = a21 = a22 = a23 = 0.0
                                        lim = Do - (Do % 4)
                                        for od in range(0, lim, 4):
                                            g0 = <double> gr[od]
                                            g1 = <double> gr[od + 1]
                                            g2 = <double> gr[od + 2]
                                            g3 = <double> gr[od + 3]
                                            a00 = a00 + g0 * <double> xr[od]
                                            a01 = a01 + g1 * <double> xr[od + 1]
                                            a02 = a02 + g2 * <double> xr[od + 2]
                                            a03 = a03 + g3 * <double> xr[od + 3]
                                            a10 = a10 + g0 * <double> xr[od + 1]
                                            a11 = a11 + g1 * <double> xr[od + 2]
                                            a12 = a12 + g2 * <double> xr[od + 3]
                                            a13 = a13 + g3 * <double> xr[od + 4]
                                            a20 = a20 + g0 * <double> xr[od + 2]
                                            a21 = a21 + g1 * <double> xr[od + 3]
                                            a22 = a22 + g2 * <double> xr[od + 4]
                                            a23 = a23 + g3 * <double> xr[od + 5]
                                        a00 = (a00 + a01) + (a02 + a03)
                                        a10 = (a10 + a11) + (a12 + a13)
                                        a20 = (a20 + a21) + (a22 + a23)
                                        for od in range(lim, Do):
                                            g0 = <double> gr[od]
                                            a00 = a00 + g0 * <double> xr[od]
                                            a10 = a10 + g0 * <double> xr[od + 1]
                                            a20 = a20 + g0 * <double> xr[od + 2]
                                        acc[base] += a00
                                        acc[base + 1] += a10
                                        acc[base + 2] += a20
                                    else:
                                        for kd in range(K):
                                            a00 = a01 = a02 = a03 = 0.0
                                            lim = Do - (Do % 4)
                                            for od in range(0, lim, 4):
                                                a00 = a00 + <double> gr[od] * <double> xr[od + kd]
                                                a01 = a01 + <double> gr[od + 1] * <double> xr[od + 1 + kd]
                                                a02 = a02 + <double> gr[od + 2] * <double> xr[od + 2 + kd]
                                                a03 = a03 + <double> gr[od + 3] * <double> xr[od + 3 + kd]
                                            a00 = (a00 + a01) + (a02 + a03)
                                            for od in range(lim, Do):
                                                a00 = a00 + <double> gr[od] * <double> xr[od + kd]
                                            acc[base + kd] += a00
    return None

import numpy as np
import pytest


def naive_conv3d(x, w, bias=None, stride=1, padding=0):
    """7-loop reference convolution, float64 accumulation (independent oracle)."""
    n, ci, h, wd, d = x.shape
    co, _, k = w.shape[0], w.shape[1], w.shape[2]
    xp = np.zeros((n, ci, h + 2 * padding, wd + 2 * padding, d + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + wd, padding:padding + d] = x
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    do = (d + 2 * padding - k) // stride + 1
    y = np.zeros((n, co, ho, wo, do), dtype=np.float64)
    w64 = w.astype(np.float64)
    for nn in range(n):
        for oc in range(co):
            for oh in range(ho):
                for ow in range(wo):
                    for od in range(do):
                        acc = 0.0
                        for ic in range(ci):
                            for kh in range(k):
                                for kw in range(k):
                                    for kd in range(k):
                                        acc += (w64[oc, ic, kh, kw, kd]
                                                * xp[nn, ic, oh * stride + kh,
                                                     ow * stride + kw, od * stride + kd])
                        y[nn, oc, oh, ow, od] = acc + (bias[oc] if bias is not None else 0.0)
    return y


def naive_avg_pool3d(x, window=2):
    n, c, h, w, d = x.shape
    ho, wo, do = h // window, w // window, d // window
    y = np.zeros((n, c, ho, wo, do), dtype=np.float64)
    for nn in range(n):
        for cc in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    for od in range(do):
                        block = x[nn, cc,
                                  oh * window:(oh + 1) * window,
                                  ow * window:(ow + 1) * window,
                                  od * window:(od + 1) * window]
                        y[nn, cc, oh, ow, od] = np.mean(block.astype(np.float64))
    return y


def brute_force_dilate_diamond(mask, radius):
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for r in range(h):
        for c in range(w):
            for rr in range(max(0, r - radius), min(h, r + radius + 1)):
                for cc in range(max(0, c - radius), min(w, c + radius + 1)):
                    if abs(rr - r) + abs(cc - c) <= radius and mask[rr, cc]:
                        out[r, c] = True
    return out


def pairwise_auc(y_bin, scores):
    """O(n^2) Mann-Whitney AUC with half credit for ties."""
    pos = scores[y_bin]
    neg = scores[~y_bin]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

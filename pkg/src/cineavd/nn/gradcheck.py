"""Central finite-difference verification of reverse-mode gradients.

The checker evaluates the loss closure in whatever dtype the parameters use;
run it with float64 parameters so truncation error, not storage rounding,
dominates.  Step size is 1e-3 * max(1, |theta|) per coordinate.
"""

import numpy as np

from .tensor import Tensor


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def finite_difference_check(loss_fn, tensors, rng, samples_per_tensor=3,
                            h_scale=1e-3, tol=1e-4):
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    loss_fn must be a pure function of the current ``.data`` of ``tensors``
    (it is re-evaluated ~2 * samples_per_tensor times per tensor).  Returns
    (max_relative_error, n_checked); raises AssertionError past ``tol``.
    """
    tensors = list(tensors)
    loss = loss_fn()
    for t in tensors:
        t.grad = None
    loss.backward()
    analytic = []
    for t in tensors:
        if t.grad is None:
            analytic.append(np.zeros_like(t.data))
        else:
            analytic.append(np.array(t.grad, dtype=np.float64))

    worst, checked = 0.0, 0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        count = min(samples_per_tensor, flat.size)
        picks = rng.choice(flat.size, size=count, replace=False)
        for idx in picks:
            theta = float(flat[idx])
            h = h_scale * max(1.0, abs(theta))
            flat[idx] = theta + h
            up = float(loss_fn().data)
            flat[idx] = theta - h
            down = float(loss_fn().data)
            flat[idx] = theta
            fd = (up - down) / (2.0 * h)
            err = relative_error(float(grad.reshape(-1)[idx]), fd)
            worst = max(worst, err)
            checked += 1
            if err > tol:
                raise AssertionError(
                    f"gradient mismatch at {t.op} coord {idx}: "
                    f"analytic {float(grad.reshape(-1)[idx]):.8g} vs fd {fd:.8g} (rel {err:.3g})")
    return worst, checked


def make_param(rng, shape, scale=1.0, dtype=np.float64) -> Tensor:
    """Random leaf parameter for gradient tests."""
    t = Tensor((rng.standard_normal(shape) * scale).astype(dtype), requires_grad=True)
    return t

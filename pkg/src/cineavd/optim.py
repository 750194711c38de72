"""Bias-corrected Adam."""

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state: AdamState, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place update on a list of (name, array) params with matching grads.

    m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2 ;
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for (name, theta), grad in zip(params, grads):
        if grad is None:
            grad = np.zeros_like(theta)
        if not np.all(np.isfinite(grad)):
            raise TrainError(f"non-finite gradient for parameter {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m, v = state.m[name], state.v[name]
        m[...] = beta1 * m + (1.0 - beta1) * grad
        v[...] = beta2 * v + (1.0 - beta2) * (grad * grad)
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


class Adam:
    """Optimizer bound to a model's parameter tensors."""

    def __init__(self, named_params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None

    def step(self):
        pairs = [(name, p.data) for name, p in self.named_params]
        grads = [p.grad for _, p in self.named_params]
        adam_step(pairs, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

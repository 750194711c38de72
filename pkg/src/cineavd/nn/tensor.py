"""Reverse-mode autodiff over dense numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional backward closure recorded at
creation time (the tape).  ``Tensor.backward`` walks the tape in reverse
topological order and accumulates gradients into ``.grad`` of every reachable
node, so intermediate activations (needed for attention maps) get gradients
for free.  Values are float32 by default; pass float64 arrays to run the
whole graph in double precision (used by the finite-difference checks).
"""

import math

import numpy as np

from ..errors import NnError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def assert_finite(arr: np.ndarray, where: str) -> None:
    """Cheap single-pass finiteness check (sum is finite iff no NaN/Inf at our scales)."""
    if not math.isfinite(float(np.sum(arr))):
        raise NnError(f"non-finite values after {where}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        if isinstance(data, Tensor):
            data = data.data
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        assert_finite(data, op)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.parents = parents if self.requires_grad else ()
        self.backward_fn = backward_fn if self.requires_grad else None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, op="detach")

    def zero_grad(self) -> None:
        self.grad = None

    def _topo_order(self):
        order, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    def backward(self, seed=None, grad_store=None) -> None:
        """Accumulate d(self)/d(node) into ``.grad`` of every node on the tape.

        With ``grad_store`` (a dict keyed by id(tensor)), gradients go there
        instead and no tensor is mutated -- used where the caller must stay
        read-only on shared parameters (e.g. attention maps).
        """
        if not self.requires_grad:
            raise NnError("backward on a tensor that does not require grad")
        if seed is None:
            if self.data.size != 1:
                raise NnError("backward without seed requires a scalar output")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise NnError("backward seed shape mismatch")

        if grad_store is None:
            def get(node):
                return node.grad

            def put(node, g):
                node.grad = g
        else:
            def get(node):
                return grad_store.get(id(node))

            def put(node, g):
                grad_store[id(node)] = g

        put(self, seed if get(self) is None else get(self) + seed)
        for node in reversed(self._topo_order()):
            node_grad = get(node)
            if node.backward_fn is None or node_grad is None:
                continue
            for parent, pgrad in zip(node.parents, node.backward_fn(node_grad)):
                if pgrad is None or not parent.requires_grad:
                    continue
                if not math.isfinite(float(np.sum(pgrad))):
                    raise NnError(f"NaN encountered during backward of {node.op}")
                prev = get(parent)
                put(parent, pgrad if prev is None else prev + pgrad)

    # Minimal operator sugar; the layer ops live in cineavd.nn.functional.
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F
        return F.scale(self, -1.0)

    def __sub__(self, other):
        from . import functional as F
        return F.add(self, F.scale(other, -1.0) if isinstance(other, Tensor) else -other)

    def __truediv__(self, scalar):
        from . import functional as F
        return F.scale(self, 1.0 / float(scalar))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op!r})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)

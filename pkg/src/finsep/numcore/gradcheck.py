"""Central finite-difference check of tape gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_grad(fn, tensors, step=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. each tensor's data (in place perturbation)."""
    grads = []
    with no_grad():
        for t in tensors:
            g = np.zeros_like(t.data)
            flat, gflat = t.data.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = float(fn().data)
                flat[i] = orig - step
                down = float(fn().data)
                flat[i] = orig
                gflat[i] = (up - down) / (2 * step)
            grads.append(g)
    return grads


def relative_error(a, b) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn, tensors, step=1e-5):
    """Return the worst relative error between tape and finite-difference gradients.

    ``fn`` rebuilds the graph from ``tensors`` and returns a scalar Tensor.
    """
    for t in tensors:
        t.grad = None
    backward(fn())
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    numeric = numeric_grad(fn, tensors, step)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def random_projection_loss(rng, out_shape):
    """A fixed random linear functional, so every output element carries gradient."""
    from . import ops
    weights = Tensor(rng.standard_normal(out_shape))
    return lambda y: ops.sum(ops.mul(y, weights))


__all__ = ["check_gradients", "numeric_grad", "random_projection_loss", "relative_error", "Tensor"]

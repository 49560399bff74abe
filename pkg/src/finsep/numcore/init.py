"""Parameter initializers."""

import numpy as np

from .tensor import Tensor


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64, name=None) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True, name=name)


def constant(shape, value: float, dtype=np.float64, name=None) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=True, name=name)


def lstm_params(rng, n_in: int, hidden: int, dtype=np.float64, prefix="lstm"):
    """(w_ih, w_hh, bias) with the forget-gate bias set to +1."""
    w_ih = uniform_fan_in(rng, (4 * hidden, n_in), hidden, dtype, f"{prefix}.w_ih")
    w_hh = uniform_fan_in(rng, (4 * hidden, hidden), hidden, dtype, f"{prefix}.w_hh")
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = 1.0
    return w_ih, w_hh, Tensor(b, requires_grad=True, name=f"{prefix}.bias")

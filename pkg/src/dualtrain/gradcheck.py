"""Central finite-difference oracle for the autodiff primitives."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d arr by central differences; ``arr`` is perturbed in place and restored."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(
    build_loss: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-5,
) -> float:
    """Compare autodiff against finite differences for every input array.

    ``build_loss`` receives fresh leaf tensors wrapping ``inputs`` and must
    return a scalar tensor. Returns the worst relative error over all inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    backward(build_loss(leaves))
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        def f():
            return build_loss([Tensor(a) for a in arrays]).item()

        numeric = numerical_gradient(f, arr, h)
        worst = max(worst, relative_error(leaf.grad, numeric))
    return worst

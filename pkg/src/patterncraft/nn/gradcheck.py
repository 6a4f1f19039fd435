"""Central finite-difference gradient checking (float64, eps 1e-5)."""
from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(loss_fn: Callable[[], float], param: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of loss_fn w.r.t. param, mutated in place."""
    grad = np.zeros_like(param, dtype=np.float64)
    it = np.nditer(param, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = param[idx]
        param[idx] = orig + eps
        hi = loss_fn()
        param[idx] = orig - eps
        lo = loss_fn()
        param[idx] = orig
        grad[idx] = (hi - lo) / (2 * eps)
        it.iternext()
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-6)
    return float(np.max(np.abs(a - b) / denom))

"""Central finite-difference gradient checking.

Independent of the autodiff tape: the numeric gradient perturbs raw numpy
arrays and re-runs the forward function, so it can stand as an oracle for
``Tensor.backward``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def numeric_gradient(f: Callable[..., float], arrays: Sequence[np.ndarray],
                     index: int, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f w.r.t. arrays[index]."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    target = arrays[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(*arrays))
        flat[i] = orig - eps
        fm = float(f(*arrays))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))

"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor

STEP = 1e-6


def numeric_grad(f: Callable[[], float], x: Tensor, step: float = STEP) -> Tensor:
    """d f / d x by central differences; ``f`` reads ``x`` in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return g


def max_rel_error(analytic: Tensor, numeric: Tensor, floor: float = 1e-4) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor * scale)``.

    ``scale`` is the largest magnitude in either array, so entries that are tiny
    relative to the rest of the gradient are judged on absolute error at that
    scale instead of amplifying finite-difference roundoff.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    err = np.divide(np.abs(a - n), denom, out=np.zeros_like(a), where=denom > 0)
    return float(err.max())

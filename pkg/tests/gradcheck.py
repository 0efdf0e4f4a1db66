"""Central finite-difference oracle shared by the unit and acceptance tests."""
import numpy as np


def numeric_grad(f, params, h=1e-6):
    """Central differences of scalar ``f()`` with respect to ``params`` (modified in place)."""
    g = np.empty_like(params)
    for k in range(params.size):
        old = params[k]
        params[k] = old + h
        fp = f()
        params[k] = old - h
        fm = f()
        params[k] = old
        g[k] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b, floor=1e-6):
    """Elementwise |a - b| / max(|a|, |b|, floor)."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)

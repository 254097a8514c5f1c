"""Central finite-difference gradient oracle, independent of the tape engine.

The oracle perturbs each input entry by +/-h, re-runs the forward function,
and forms (f(x+h) - f(x-h)) / 2h.  It never touches the reverse-mode code
path, so agreement between the two is a genuine two-route check.
"""

import numpy as np


def finite_difference_grads(f, arrays, h=1e-5):
    """Gradients of the scalar ``f(*arrays)`` w.r.t. every entry of every array."""
    grads = []
    for k, arr in enumerate(arrays):
        g = np.zeros_like(arr, dtype=np.float64)
        flat = g.reshape(-1)
        base = [a.copy() for a in arrays]
        for i in range(arr.size):
            plus = [a.copy() for a in base]
            plus[k].reshape(-1)[i] += h
            minus = [a.copy() for a in base]
            minus[k].reshape(-1)[i] -= h
            flat[i] = (f(*plus) - f(*minus)) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor) over all entries of all arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max(initial=0.0)))
    return worst

"""Shared numerical helpers for the test suite."""

import numpy as np


def central_difference_gradient(f, x, h=1e-5):
    """Central-difference gradient of a scalar function f at x.

    g_i = (f(x + h e_i) - f(x - h e_i)) / (2h), accurate to O(h^2).
    """
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def relative_error(approx, exact):
    """||approx - exact|| / max(||exact||, 1e-12)."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return float(np.linalg.norm(approx - exact)
                 / max(np.linalg.norm(exact), 1e-12))

"""Numba-compiled hot kernels for tree training and traversal.

Semantics must stay in lockstep with ``_gbdt_numpy``; both backends scan
features in ascending index order, place candidate thresholds at midpoints
between consecutive distinct sorted values, and keep the first candidate on
gain ties (strict improvement only).
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def best_split(x, g, h, reg_lambda, gamma, min_child_weight):
    """Exact greedy search over all (feature, midpoint) candidates.

    Returns (feature, threshold, gain); feature is -1 when no candidate has
    strictly positive gain. Gain is
    0.5*(GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)) - gamma, and children
    whose hessian sum falls below min_child_weight are skipped.
    """
    m, d = x.shape
    total_g = 0.0
    total_h = 0.0
    for i in range(m):
        total_g += g[i]
        total_h += h[i]
    parent = total_g * total_g / (total_h + reg_lambda)

    best_gain = 0.0
    best_feature = -1
    best_threshold = 0.0
    for f in range(d):
        order = np.argsort(x[:, f], kind="mergesort")
        gl = 0.0
        hl = 0.0
        for i in range(m - 1):
            oi = order[i]
            gl += g[oi]
            hl += h[oi]
            x0 = x[oi, f]
            x1 = x[order[i + 1], f]
            if x0 == x1:
                continue
            hr = total_h - hl
            if hl < min_child_weight or hr < min_child_weight:
                continue
            gr = total_g - gl
            gain = (
                0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent)
                - gamma
            )
            if gain > best_gain:
                best_gain = gain
                best_feature = f
                best_threshold = 0.5 * (x0 + x1)
    return best_feature, best_threshold, best_gain


@njit(cache=True)
def apply_tree(feature, threshold, left, right, x):
    """Route every row to its node index (value < threshold goes left)."""
    n = x.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if x[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out

"""Vectorized pure-numpy fallback for the tree kernels.

Mirrors ``_gbdt_numba`` candidate order and tie handling: features scanned
ascending, thresholds at midpoints of consecutive distinct sorted values,
first candidate kept on ties (np.argmax returns the first maximum).
"""

import numpy as np

NAME = "numpy"


def best_split(x, g, h, reg_lambda, gamma, min_child_weight):
    m, d = x.shape
    # cumsum accumulates sequentially, matching the numba loop bit for bit
    # (np.sum's pairwise order would flip near-tied gains in late rounds)
    total_g = float(np.cumsum(g)[-1])
    total_h = float(np.cumsum(h)[-1])
    parent = total_g * total_g / (total_h + reg_lambda)

    best_gain = 0.0
    best_feature = -1
    best_threshold = 0.0
    for f in range(d):
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        gl = np.cumsum(g[order])[:-1]
        hl = np.cumsum(h[order])[:-1]
        gr = total_g - gl
        hr = total_h - hl
        valid = (xs[:-1] != xs[1:]) & (hl >= min_child_weight) & (hr >= min_child_weight)
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gains = (
                0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent)
                - gamma
            )
        gains = np.where(valid, gains, -np.inf)
        i = int(np.argmax(gains))
        if gains[i] > best_gain:
            best_gain = float(gains[i])
            best_feature = f
            best_threshold = 0.5 * (xs[i] + xs[i + 1])
    return best_feature, best_threshold, best_gain


def apply_tree(feature, threshold, left, right, x):
    n = x.shape[0]
    cur = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    while True:
        f = feature[cur]
        internal = f >= 0
        if not internal.any():
            return cur
        vals = x[rows, np.where(internal, f, 0)]
        nxt = np.where(vals < threshold[cur], left[cur], right[cur])
        cur = np.where(internal, nxt, cur)

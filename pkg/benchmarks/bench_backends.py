"""Benchmark the numba kernels against the pure-numpy fallback.

Times full fits (exact greedy boosting) and batch prediction on synthetic
data at a few sizes, then prints a comparison table. The numba backend is
warmed before timing so JIT compilation is excluded.

Usage: python benchmarks/bench_backends.py [--rounds 20] [--repeats 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import tabdistill as td
from tabdistill.dataset import FeatureSpec, LabeledDataset, Schema
from tabdistill.gbdt import Hyperparams, fit, predict_proba


def synthetic(n_rows: int, n_features: int, n_classes: int, seed: int) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    schema = Schema(
        features=tuple(FeatureSpec(f"feature {j}", "numeric") for j in range(n_features)),
        label_column="Class",
        class_labels=tuple(str(c) for c in range(n_classes)),
    )
    x = rng.uniform(-10, 10, size=(n_rows, n_features))
    labels = rng.integers(0, n_classes, size=n_rows).tolist()
    rows = [[float(v) for v in row] for row in x]
    return LabeledDataset(schema, rows, labels)


def time_backend(backend: str, ds: LabeledDataset, params: Hyperparams, repeats: int):
    td.set_backend(backend)
    fit_times, predict_times = [], []
    model = None
    for _ in range(repeats):
        start = time.perf_counter()
        model = fit(ds, params)
        fit_times.append(time.perf_counter() - start)
        x = model.encode(ds)
        start = time.perf_counter()
        predict_proba(model, x)
        predict_times.append(time.perf_counter() - start)
    return min(fit_times), min(predict_times), model


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rounds", type=int, default=20)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    params = Hyperparams(rounds=args.rounds)
    sizes = [(200, 4, 2), (1000, 8, 2), (2000, 10, 3)]

    try:
        td.set_backend("numba")
    except ImportError:
        print("numba is not importable here; nothing to compare")
        return
    # warm the JIT on a tiny problem so compilation stays out of the timings
    fit(synthetic(30, 3, 2, seed=0), Hyperparams(rounds=2, max_depth=3))

    print(f"{'rows':>6} {'feats':>5} {'classes':>7} | {'numba fit':>10} {'numpy fit':>10} {'speedup':>7} | {'numba pred':>10} {'numpy pred':>10}")
    for n_rows, n_features, n_classes in sizes:
        ds = synthetic(n_rows, n_features, n_classes, seed=n_rows)
        nb_fit, nb_pred, nb_model = time_backend("numba", ds, params, args.repeats)
        np_fit, np_pred, np_model = time_backend("numpy", ds, params, args.repeats)
        assert nb_model is not None and np_model is not None
        same = all(
            np.array_equal(a.feature, b.feature)
            for ra, rb in zip(nb_model.trees, np_model.trees)
            for a, b in zip(ra, rb)
        )
        marker = "" if same else "  (!! backends disagree)"
        print(
            f"{n_rows:>6} {n_features:>5} {n_classes:>7} | "
            f"{nb_fit:>9.3f}s {np_fit:>9.3f}s {np_fit / nb_fit:>6.1f}x | "
            f"{nb_pred:>9.4f}s {np_pred:>9.4f}s{marker}"
        )
    td.set_backend("numba")


if __name__ == "__main__":
    main()

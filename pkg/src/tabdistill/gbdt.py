"""Gradient-boosted decision trees with a softmax objective.

Self-contained exact-greedy boosting: one regression tree per class per
round, fitted on first/second-order gradients of softmax cross-entropy. The
first tree of the ensemble supplies the leaf partition used for sample
grouping, and per-row prediction entropy supplies the difficulty ranking.

Hot kernels come from ``_gbdt_numba`` (default) or the pure-numpy fallback
``_gbdt_numpy``, selected by the ``TABDISTILL_BACKEND`` env var
(auto | numba | numpy).
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import LabeledDataset, OrdinalEncoding, encode_ordinal
from .errors import ConfigError, InsufficientDataError

log = logging.getLogger(__name__)

_HESS_FLOOR = 1e-16  # degenerate-probability guard
BASE_SCORE = 0.5  # constant initial margin; equal scores mean uniform softmax


def _load_backend(name: str):
    if name == "numpy":
        from . import _gbdt_numpy

        return _gbdt_numpy
    from . import _gbdt_numba

    return _gbdt_numba


def _select_backend():
    requested = os.environ.get("TABDISTILL_BACKEND", "auto").strip().lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ConfigError(f"TABDISTILL_BACKEND must be auto|numba|numpy, got {requested!r}")
    if requested == "numpy":
        return _load_backend("numpy")
    try:
        return _load_backend("numba")
    except ImportError:
        if requested == "numba":
            raise
        log.info("numba unavailable, using numpy kernels")
        return _load_backend("numpy")


_kernels = _select_backend()


def backend_name() -> str:
    return _kernels.NAME


def set_backend(name: str) -> str:
    """Swap kernels at runtime (benchmarks and backend-parity tests)."""
    global _kernels
    if name not in ("numba", "numpy"):
        raise ConfigError(f"backend must be numba|numpy, got {name!r}")
    _kernels = _load_backend(name)
    return _kernels.NAME


@dataclass(frozen=True)
class Hyperparams:
    rounds: int = 100
    learning_rate: float = 0.3
    max_depth: int = 6
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ValueError("reg_lambda, gamma, min_child_weight must be >= 0")


@dataclass(frozen=True)
class DecisionTree:
    """Binary regression tree as flat arrays.

    ``feature[i] == -1`` marks a leaf; leaves carry ``weight`` (already
    learning-rate scaled) and consecutive ``leaf_id`` 0..n_leaves-1 in
    left-to-right order. Routing: value < threshold goes left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray
    leaf_id: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Node index reached by every row of x."""
        return _kernels.apply_tree(self.feature, self.threshold, self.left, self.right, x)

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "weight": self.weight.tolist(),
            "leaf_id": self.leaf_id.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DecisionTree":
        return cls(
            feature=np.asarray(obj["feature"], dtype=np.int32),
            threshold=np.asarray(obj["threshold"], dtype=np.float64),
            left=np.asarray(obj["left"], dtype=np.int32),
            right=np.asarray(obj["right"], dtype=np.int32),
            weight=np.asarray(obj["weight"], dtype=np.float64),
            leaf_id=np.asarray(obj["leaf_id"], dtype=np.int32),
        )


def leaf_index(tree: DecisionTree, row: np.ndarray) -> int:
    """Leaf id reached by one encoded row."""
    x = np.atleast_2d(np.asarray(row, dtype=np.float64))
    node = tree.apply(x)[0]
    return int(tree.leaf_id[node])


def _build_tree(
    x: np.ndarray, g: np.ndarray, h: np.ndarray, params: Hyperparams
) -> DecisionTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    weight: list[float] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        weight.append(0.0)

        f, t = -1, 0.0
        if depth < params.max_depth and idx.size >= 2:
            f, t, _gain = _kernels.best_split(
                np.ascontiguousarray(x[idx]),
                np.ascontiguousarray(g[idx]),
                np.ascontiguousarray(h[idx]),
                params.reg_lambda,
                params.gamma,
                params.min_child_weight,
            )
        if f < 0:
            total_g = float(g[idx].sum())
            denom = float(h[idx].sum()) + params.reg_lambda
            weight[node] = -params.learning_rate * total_g / denom if denom > 0 else 0.0
        else:
            feature[node] = int(f)
            threshold[node] = float(t)
            mask = x[idx, f] < t
            left[node] = grow(idx[mask], depth + 1)
            right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(x.shape[0], dtype=np.int64), 0)

    # preorder construction puts leaves in left-to-right order already
    leaf_id = np.full(len(feature), -1, dtype=np.int32)
    next_id = 0
    for i, f in enumerate(feature):
        if f < 0:
            leaf_id[i] = next_id
            next_id += 1
    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        weight=np.asarray(weight, dtype=np.float64),
        leaf_id=leaf_id,
    )


def _softmax(margins: np.ndarray) -> np.ndarray:
    shifted = margins - margins.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class GbdtModel:
    """Fitted ensemble: ``trees[round][class_index]`` regression trees."""

    params: Hyperparams
    class_labels: tuple[str, ...]
    encoding: OrdinalEncoding
    trees: tuple[tuple[DecisionTree, ...], ...]
    base_score: float = BASE_SCORE
    loss_curve: tuple[float, ...] = ()

    @property
    def class_count(self) -> int:
        return len(self.class_labels)

    @property
    def first_tree(self) -> DecisionTree:
        # "first tree" = class-0 tree of round 0, the canonical ordering
        return self.trees[0][0]

    @property
    def n_features(self) -> int:
        return len(self.encoding.kinds)

    def encode(self, dataset: LabeledDataset) -> np.ndarray:
        return self.encoding.encode_rows(dataset.rows)

    def predict_margin(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(
                f"expected shape (n, {self.n_features}), got {x.shape}"
            )
        margins = np.full((x.shape[0], self.class_count), self.base_score, dtype=np.float64)
        for per_class in self.trees:
            for c, tree in enumerate(per_class):
                nodes = tree.apply(x)
                margins[:, c] += tree.weight[nodes]
        return margins

    def save(self, path: str | Path) -> None:
        obj = {
            "format_version": "1",
            "params": asdict(self.params),
            "class_labels": list(self.class_labels),
            "base_score": self.base_score,
            "encoding": self.encoding.to_json(),
            "trees": [[t.to_json() for t in per_class] for per_class in self.trees],
            "loss_curve": list(self.loss_curve),
        }
        Path(path).write_text(json.dumps(obj, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GbdtModel":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if obj.get("format_version") != "1":
            raise ConfigError(f"unsupported model format {obj.get('format_version')!r}")
        return cls(
            params=Hyperparams(**obj["params"]),
            class_labels=tuple(obj["class_labels"]),
            encoding=OrdinalEncoding.from_json(obj["encoding"]),
            trees=tuple(
                tuple(DecisionTree.from_json(t) for t in per_class)
                for per_class in obj["trees"]
            ),
            base_score=float(obj["base_score"]),
            loss_curve=tuple(obj.get("loss_curve", ())),
        )


def fit(train: LabeledDataset, params: Hyperparams, seed: int = 0) -> GbdtModel:
    """Boost ``params.rounds`` rounds of per-class trees on softmax gradients.

    Deterministic given (train, params); exact greedy search uses no
    randomness, so ``seed`` is recorded for interface parity only.
    """
    if len(train) == 0:
        raise InsufficientDataError("cannot fit on an empty training set")
    x, encoding = encode_ordinal(train)
    y = np.asarray(train.labels, dtype=np.int64)
    k = len(train.schema.class_labels)
    n = x.shape[0]
    onehot = np.zeros((n, k), dtype=np.float64)
    onehot[np.arange(n), y] = 1.0

    margins = np.full((n, k), BASE_SCORE, dtype=np.float64)
    losses = []

    def cross_entropy() -> float:
        p = _softmax(margins)
        return float(-np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300))))

    losses.append(cross_entropy())
    rounds: list[tuple[DecisionTree, ...]] = []
    for _ in range(params.rounds):
        p = _softmax(margins)
        per_class: list[DecisionTree] = []
        for c in range(k):
            grad = p[:, c] - onehot[:, c]
            hess = np.maximum(p[:, c] * (1.0 - p[:, c]), _HESS_FLOOR)
            tree = _build_tree(x, grad, hess, params)
            per_class.append(tree)
        for c, tree in enumerate(per_class):
            nodes = tree.apply(x)
            margins[:, c] += tree.weight[nodes]
        rounds.append(tuple(per_class))
        losses.append(cross_entropy())

    return GbdtModel(
        params=params,
        class_labels=tuple(train.schema.class_labels),
        encoding=encoding,
        trees=tuple(rounds),
        loss_curve=tuple(losses),
    )


def predict_proba(model: GbdtModel, row) -> np.ndarray:
    """Class probabilities for one encoded row or an encoded matrix.

    Accepts a 1-D encoded vector (returns shape (k,)), a 2-D encoded matrix
    (returns (n, k)), or a raw cell sequence which is encoded first.
    """
    if isinstance(row, np.ndarray):
        x = row.astype(np.float64, copy=False)
        single = x.ndim == 1
        x = np.atleast_2d(x)
    else:
        x = model.encoding.encode_rows([list(row)])
        single = True
    probs = _softmax(model.predict_margin(x))
    return probs[0] if single else probs


def entropy(p: Sequence[float]) -> float:
    """Shannon entropy in nats with the 0*ln(0) := 0 convention."""
    total = 0.0
    for v in p:
        if v > 0.0:
            total -= v * math.log(v)
    return total


def entropy_scores(model: GbdtModel, train: LabeledDataset) -> list[float]:
    probs = predict_proba(model, model.encode(train))
    masked = np.where(probs > 0.0, probs, 1.0)  # 0*log(0) -> 0
    return (-(probs * np.log(masked)).sum(axis=1)).tolist()


@dataclass(frozen=True)
class LeafGroup:
    leaf_id: int
    indices: tuple[int, ...]


def group_by_first_tree(model: GbdtModel, train: LabeledDataset) -> list[LeafGroup]:
    """Partition training rows by the leaf they reach in the first tree.

    Groups come back in leaf-id order; leaves that catch no rows are dropped
    with a log note (cannot happen for the data the tree was fitted on).
    """
    tree = model.first_tree
    nodes = tree.apply(model.encode(train))
    leaf_of_row = tree.leaf_id[nodes]
    groups = []
    for lid in range(tree.n_leaves):
        members = np.flatnonzero(leaf_of_row == lid)
        if members.size == 0:
            log.info("first-tree leaf %d is empty; dropped from grouping", lid)
            continue
        groups.append(LeafGroup(leaf_id=lid, indices=tuple(int(i) for i in members)))
    return groups


def rank_select(scores: Sequence[float], k: int, direction: str) -> list[int]:
    """Indices of the k lowest/highest scores, ties to the smaller original
    index, output sorted by original index."""
    if direction not in ("lowest", "highest"):
        raise ValueError(f"direction must be 'lowest' or 'highest', got {direction!r}")
    if not 1 <= k <= len(scores):
        raise ValueError(f"k={k} outside [1, {len(scores)}]")
    sign = 1.0 if direction == "lowest" else -1.0
    chosen = sorted(range(len(scores)), key=lambda i: (sign * scores[i], i))[:k]
    return sorted(chosen)


def default_hard_count(n_train: int) -> int:
    """Hard-sample budget: half the training data, floored, at least one."""
    return max(1, n_train // 2)

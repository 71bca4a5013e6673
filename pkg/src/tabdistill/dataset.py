"""Tabular dataset loading, task metadata, splitting plans, and ordinal encoding.

Cells are ``float`` (numeric), ``str`` (categorical token), or ``None``
(missing). Column kinds live on the schema; a column is inferred numeric iff
every non-missing cell parses as a finite real, and hints override inference.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptyInputError,
    InsufficientDataError,
    ParseError,
    SchemaError,
)

NUMERIC = "numeric"
CATEGORICAL = "categorical"

Cell = float | str | None

# Token used when a missing cell is rendered into prompt text; the tree
# engine never sees it (missing numerics impute the training median, missing
# categoricals take the reserved code).
MISSING_TOKEN = "unknown"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # NUMERIC or CATEGORICAL

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"unknown feature kind {self.kind!r} for {self.name!r}")


@dataclass(frozen=True)
class Schema:
    """Ordered feature declarations plus the label space.

    ``verbalizer`` maps each class label to the natural-language answer token
    used in prompts (e.g. "1" -> "Yes"); it must be total and injective over
    ``class_labels``.
    """

    features: tuple[FeatureSpec, ...]
    label_column: str
    class_labels: tuple[str, ...]
    verbalizer: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names")
        if self.label_column in names:
            raise SchemaError(f"label column {self.label_column!r} listed among features")
        if self.class_labels:
            if len(self.class_labels) < 2:
                raise SchemaError("need at least 2 class labels")
            if len(set(self.class_labels)) != len(self.class_labels):
                raise SchemaError("duplicate class labels")
            verb = self.verbalizer or {c: c for c in self.class_labels}
            missing = [c for c in self.class_labels if c not in verb]
            if missing:
                raise SchemaError(f"verbalizer missing entries for {missing}")
            answers = [verb[c] for c in self.class_labels]
            if len(set(answers)) != len(answers):
                raise SchemaError("verbalizer is not injective over class labels")
            object.__setattr__(self, "verbalizer", verb)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def answer_choices(self) -> tuple[str, ...]:
        return tuple(self.verbalizer[c] for c in self.class_labels)

    def verbalize(self, label_index: int) -> str:
        return self.verbalizer[self.class_labels[label_index]]


@dataclass(frozen=True)
class TaskSpec:
    """Natural-language framing of one classification task.

    ``prediction_goal`` feeds the rule-merge instruction ("...patterns for
    predicting {goal}."); it defaults to the question text when the metadata
    file does not set it.
    """

    title: str
    description: str
    question: str
    answer_instruction: str
    answer_choices: tuple[str, ...]
    prediction_goal: str = ""
    label_column: str | None = None
    verbalizer: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.answer_choices)) != len(self.answer_choices):
            raise SchemaError("duplicate answer choices")
        if not self.answer_choices:
            raise SchemaError("answer_choices must be non-empty")
        if not self.prediction_goal:
            object.__setattr__(self, "prediction_goal", self.question)


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    fold_count: int = 5
    train_fraction: float = 0.8
    few_shot_n: int = 16
    test_cap: int = 1000

    def __post_init__(self):
        if self.fold_count < 2:
            raise ValueError("fold_count must be >= 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.few_shot_n < 1:
            raise ValueError("few_shot_n must be >= 1")
        if self.test_cap < 1:
            raise ValueError("test_cap must be >= 1")


class LabeledDataset:
    """Immutable rows of cells plus integer label indices into the schema."""

    def __init__(self, schema: Schema, rows: Sequence[Sequence], labels: Sequence[int]):
        if len(rows) != len(labels):
            raise SchemaError("rows and labels length mismatch")
        d = len(schema.features)
        for i, row in enumerate(rows):
            if len(row) != d:
                raise SchemaError(f"row {i} has {len(row)} cells, schema declares {d}")
        k = len(schema.class_labels)
        for i, lab in enumerate(labels):
            if not 0 <= lab < k:
                raise SchemaError(f"row {i} has invalid label index {lab}")
        self.schema = schema
        self.rows = tuple(tuple(r) for r in rows)
        self.labels = tuple(int(x) for x in labels)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_features(self) -> int:
        return len(self.schema.features)

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        return LabeledDataset(
            self.schema,
            [self.rows[i] for i in indices],
            [self.labels[i] for i in indices],
        )

    def class_counts(self) -> list[int]:
        counts = [0] * len(self.schema.class_labels)
        for lab in self.labels:
            counts[lab] += 1
        return counts


def _parse_finite(token: str) -> float | None:
    try:
        v = float(token)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_task_spec(path: str | Path) -> TaskSpec:
    """Read task metadata (JSON object) and validate required keys."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        meta = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ParseError(f"task file {path}: {e}") from e
    if not isinstance(meta, dict):
        raise SchemaError(f"task file {path}: expected a JSON object")
    for key in ("title", "description", "question", "answer_instruction", "answer_choices"):
        if key not in meta:
            raise SchemaError(f"task file {path}: missing key {key!r}")
    choices = meta["answer_choices"]
    if not isinstance(choices, list) or not all(isinstance(c, str) for c in choices):
        raise SchemaError("answer_choices must be a list of strings")
    verbalizer = meta.get("verbalizer") or {}
    if verbalizer:
        image = list(verbalizer.values())
        if image != list(choices):
            raise SchemaError(
                f"verbalizer image {image} must equal answer_choices {list(choices)} in order"
            )
    return TaskSpec(
        title=meta["title"],
        description=meta["description"],
        question=meta["question"],
        answer_instruction=meta["answer_instruction"],
        answer_choices=tuple(choices),
        prediction_goal=meta.get("prediction_goal", ""),
        label_column=meta.get("label_column"),
        verbalizer=dict(verbalizer),
    )


def schema_hints_from_task(task: TaskSpec) -> Schema:
    """Minimal hint schema (no feature kinds) carrying label/verbalizer info."""
    if task.verbalizer:
        class_labels = tuple(task.verbalizer)
        verbalizer = dict(task.verbalizer)
    else:
        class_labels = tuple(task.answer_choices)
        verbalizer = {c: c for c in class_labels}
    return Schema(
        features=(),
        label_column=task.label_column or "",
        class_labels=class_labels,
        verbalizer=verbalizer,
    )


def load_csv(
    path: str | Path,
    schema_hints: Schema | None = None,
    delimiter: str = ",",
) -> LabeledDataset:
    """Load a delimited text file with a header row into a LabeledDataset.

    Column kinds are inferred (numeric iff every non-missing cell parses as a
    finite real) unless ``schema_hints`` declares a kind for that column.
    Hints also supply the label column, the class-label order, and the
    verbalizer; without hints the last column is the label and class labels
    appear in first-appearance order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        table = list(reader)
    if not table:
        raise EmptyInputError(f"{path}: file is empty")
    header, data = table[0], table[1:]
    if not data:
        raise EmptyInputError(f"{path}: no data rows after header")

    label_column = None
    if schema_hints is not None and schema_hints.label_column:
        label_column = schema_hints.label_column
        if label_column not in header:
            raise SchemaError(f"{path}: label column {label_column!r} not in header {header}")
    else:
        label_column = header[-1]
    label_pos = header.index(label_column)
    feature_names = [h for i, h in enumerate(header) if i != label_pos]
    feature_pos = [i for i in range(len(header)) if i != label_pos]

    for rownum, row in enumerate(data, start=1):
        if len(row) != len(header):
            raise ParseError(
                f"{path}: row {rownum} has {len(row)} fields, header has {len(header)}"
            )

    hinted_kinds: dict[str, str] = {}
    if schema_hints is not None:
        for spec in schema_hints.features:
            if spec.name not in feature_names:
                raise SchemaError(f"{path}: hinted feature {spec.name!r} not in header")
            hinted_kinds[spec.name] = spec.kind

    kinds: list[str] = []
    for name, pos in zip(feature_names, feature_pos):
        if name in hinted_kinds:
            kinds.append(hinted_kinds[name])
            continue
        numeric = True
        for row in data:
            token = row[pos].strip()
            if token == "":
                continue
            if _parse_finite(token) is None:
                numeric = False
                break
        kinds.append(NUMERIC if numeric else CATEGORICAL)

    rows: list[list] = []
    raw_labels: list[str] = []
    for row in data:
        cells: list = []
        for kind, pos in zip(kinds, feature_pos):
            token = row[pos].strip()
            if token == "":
                cells.append(None)
            elif kind == NUMERIC:
                cells.append(_parse_finite(token))  # non-finite parses become missing
            else:
                cells.append(token)
        rows.append(cells)
        raw_labels.append(row[label_pos].strip())

    if schema_hints is not None and schema_hints.class_labels:
        class_labels = list(schema_hints.class_labels)
        verbalizer = dict(schema_hints.verbalizer)
        unknown = sorted(set(raw_labels) - set(class_labels))
        if unknown:
            raise SchemaError(f"{path}: labels {unknown} not in declared class labels")
    else:
        class_labels = []
        for lab in raw_labels:
            if lab not in class_labels:
                class_labels.append(lab)
        verbalizer = {c: c for c in class_labels}

    schema = Schema(
        features=tuple(FeatureSpec(n, k) for n, k in zip(feature_names, kinds)),
        label_column=label_column,
        class_labels=tuple(class_labels),
        verbalizer=verbalizer,
    )
    index = {c: i for i, c in enumerate(class_labels)}
    labels = [index[lab] for lab in raw_labels]
    return LabeledDataset(schema, rows, labels)


def split_train_test(
    dataset: LabeledDataset, plan: SplitPlan, fold: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic train/test split for one fold of the plan.

    One permutation is drawn from ``plan.seed``; fold i takes the i-th block
    of ceil((1-train_fraction)*n) indices as its test set (tail-clamped when
    the last block would overrun), then the test set is capped at
    ``plan.test_cap`` by seeded subsampling. Train is the complement of the
    pre-cap test block, original row order preserved.
    """
    if not 0 <= fold < plan.fold_count:
        raise ValueError(f"fold {fold} outside plan with {plan.fold_count} folds")
    n = len(dataset)
    if n < plan.fold_count:
        raise InsufficientDataError(f"{n} rows cannot support {plan.fold_count} folds")
    size = math.ceil((1.0 - plan.train_fraction) * n)
    if size >= n:
        raise InsufficientDataError("test fraction leaves no training rows")
    perm = np.random.default_rng(plan.seed).permutation(n)
    start = fold * size
    if start + size <= n:
        block = perm[start : start + size]
    else:
        block = perm[n - size : n]
    test_idx = np.sort(block)
    if size > plan.test_cap:
        rng = np.random.default_rng([plan.seed, fold, 1])
        test_idx = np.sort(rng.choice(test_idx, plan.test_cap, replace=False))
    in_block = np.zeros(n, dtype=bool)
    in_block[block] = True
    train_idx = np.flatnonzero(~in_block)
    return dataset.subset(train_idx.tolist()), dataset.subset(test_idx.tolist())


def sample_few_shot(
    train: LabeledDataset, n: int, seed, stratified: bool = False
) -> LabeledDataset:
    """Uniform subset of n rows without replacement, original order retained.

    ``stratified=True`` samples per class proportionally (off by default; the
    protocol's plain sampling is uniform).
    """
    if n > len(train):
        raise InsufficientDataError(f"cannot sample {n} rows from {len(train)}")
    if n == len(train):
        return train
    rng = np.random.default_rng(seed)
    if not stratified:
        idx = np.sort(rng.choice(len(train), n, replace=False))
        return train.subset(idx.tolist())

    by_class: dict[int, list[int]] = {}
    for i, lab in enumerate(train.labels):
        by_class.setdefault(lab, []).append(i)
    quotas = {lab: int(n * len(ix) / len(train)) for lab, ix in by_class.items()}
    short = n - sum(quotas.values())
    for lab in sorted(by_class, key=lambda L: -len(by_class[L]))[:short]:
        quotas[lab] += 1
    chosen: set[int] = set()
    for lab in sorted(by_class):
        take = min(quotas[lab], len(by_class[lab]))
        chosen.update(rng.choice(by_class[lab], take, replace=False).tolist())
    if len(chosen) < n:  # classes too small for their quota: top up uniformly
        rest = [i for i in rng.permutation(len(train)).tolist() if i not in chosen]
        chosen.update(rest[: n - len(chosen)])
    return train.subset(sorted(chosen))


def shuffle_columns(row: Sequence, schema: Schema, seed) -> tuple[list[str], list]:
    """One permutation applied identically to feature names and values."""
    d = len(schema.features)
    if len(row) != d:
        raise SchemaError(f"row has {len(row)} cells, schema declares {d}")
    perm = np.random.default_rng(seed).permutation(d)
    names = [schema.features[p].name for p in perm]
    values = [row[p] for p in perm]
    return names, values


MISSING_CODE = -1  # reserved ordinal code for missing categorical cells


@dataclass(frozen=True)
class OrdinalEncoding:
    """Column-wise encoding fitted on one dataset (normally the train split).

    Categorical tokens map to codes by first appearance; ``MISSING_CODE``
    is reserved for missing cells and unseen tokens. Missing numerics impute
    the fitted median (0.0 when a column had no observed values).
    """

    kinds: tuple[str, ...]
    categories: tuple[tuple[str, ...], ...]  # per column; empty for numeric
    medians: tuple[float, ...]  # per column; 0.0 for categorical

    def encode_rows(self, rows: Sequence[Sequence]) -> np.ndarray:
        out = np.empty((len(rows), len(self.kinds)), dtype=np.float64)
        lookup = [
            {tok: code for code, tok in enumerate(cats)} for cats in self.categories
        ]
        for i, row in enumerate(rows):
            for j, cell in enumerate(row):
                if cell is None:
                    out[i, j] = self.medians[j] if self.kinds[j] == NUMERIC else MISSING_CODE
                elif self.kinds[j] == NUMERIC:
                    out[i, j] = float(cell)
                else:
                    out[i, j] = lookup[j].get(str(cell), MISSING_CODE)
        return out

    def decode_matrix(self, matrix: np.ndarray) -> list[list]:
        rows: list[list] = []
        for i in range(matrix.shape[0]):
            cells: list = []
            for j in range(matrix.shape[1]):
                v = matrix[i, j]
                if self.kinds[j] == NUMERIC:
                    cells.append(float(v))
                else:
                    code = int(v)
                    cells.append(None if code == MISSING_CODE else self.categories[j][code])
            rows.append(cells)
        return rows

    def to_json(self) -> dict:
        return {
            "kinds": list(self.kinds),
            "categories": [list(c) for c in self.categories],
            "medians": list(self.medians),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "OrdinalEncoding":
        return cls(
            kinds=tuple(obj["kinds"]),
            categories=tuple(tuple(c) for c in obj["categories"]),
            medians=tuple(float(m) for m in obj["medians"]),
        )


def encode_ordinal(dataset: LabeledDataset) -> tuple[np.ndarray, OrdinalEncoding]:
    """Fit an ordinal encoding on the dataset and return its encoded matrix."""
    kinds = tuple(f.kind for f in dataset.schema.features)
    categories: list[tuple[str, ...]] = []
    medians: list[float] = []
    for j, kind in enumerate(kinds):
        col = [row[j] for row in dataset.rows]
        if kind == NUMERIC:
            observed = [float(c) for c in col if c is not None]
            medians.append(float(np.median(observed)) if observed else 0.0)
            categories.append(())
        else:
            seen: list[str] = []
            for c in col:
                if c is not None and str(c) not in seen:
                    seen.append(str(c))
            categories.append(tuple(seen))
            medians.append(0.0)
    enc = OrdinalEncoding(kinds=kinds, categories=tuple(categories), medians=tuple(medians))
    return enc.encode_rows(dataset.rows), enc

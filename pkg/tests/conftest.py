"""Shared fixtures and synthetic data builders.

A session-scoped warmup fits a tiny model before any test runs so that
numba JIT compilation never lands inside a timed assertion.
"""

from __future__ import annotations

import numpy as np
import pytest

import tabdistill as td
from tabdistill.dataset import FeatureSpec, LabeledDataset, Schema, TaskSpec


def make_numeric_schema(n_features: int, class_labels=("0", "1"), verbalizer=None) -> Schema:
    if verbalizer is None:
        verbalizer = {"0": "No", "1": "Yes"} if class_labels == ("0", "1") else None
    return Schema(
        features=tuple(FeatureSpec(f"feature {j}", "numeric") for j in range(n_features)),
        label_column="Class",
        class_labels=tuple(class_labels),
        verbalizer=verbalizer or {c: c for c in class_labels},
    )


def make_numeric_dataset(
    n_rows: int, n_features: int, n_classes: int = 2, seed: int = 0
) -> LabeledDataset:
    """Random continuous features with random labels."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n_rows).tolist()
    if n_classes == 2:
        schema = make_numeric_schema(n_features)
    else:
        schema = make_numeric_schema(
            n_features, class_labels=tuple(str(c) for c in range(n_classes))
        )
    rows = [[float(v) for v in row] for row in rng.uniform(-10, 10, size=(n_rows, n_features))]
    return LabeledDataset(schema, rows, labels)


def make_separable_dataset(n_rows: int = 200, seed: int = 1) -> LabeledDataset:
    """Linearly separable: label 1 iff the feature sum clears the threshold."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 10.0, size=(n_rows, 4))
    labels = (x.sum(axis=1) > 20.0).astype(int).tolist()
    schema = make_numeric_schema(4)
    rows = [[float(v) for v in row] for row in x]
    return LabeledDataset(schema, rows, labels)


def make_rule_dataset(n_rows: int = 200, seed: int = 3) -> LabeledDataset:
    """Labels follow a single-feature predicate a scripted policy can mirror:
    label 1 iff 'feature 0' > 5."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 10.0, size=(n_rows, 3)).round(3)
    labels = (x[:, 0] > 5.0).astype(int).tolist()
    schema = make_numeric_schema(3)
    rows = [[float(v) for v in row] for row in x]
    return LabeledDataset(schema, rows, labels)


def make_task(choices=("Yes", "No"), goal="whether the outcome is positive") -> TaskSpec:
    return TaskSpec(
        title="Synthetic outcome prediction",
        description="This data is to predict whether the synthetic outcome is positive.",
        question="Is the outcome positive?",
        answer_instruction=(
            "Answer the question with either 'Yes' or 'No' (without quotes)."
        ),
        answer_choices=tuple(choices),
        prediction_goal=goal,
    )


def oracle_predictor_policy() -> td.ScriptedPolicy:
    """Answers the make_rule_dataset generating predicate exactly."""
    return td.ScriptedPolicy.from_dict(
        {
            "mode": "rule_on_features",
            "rules": [{"feature": "feature 0", "op": ">", "value": 5.0, "answer": "Yes"}],
            "default": "No",
        }
    )


def fixed_summarizer_policy(text="1. Large feature 0 pushes the outcome positive.\n2. Small feature 0 pushes it negative.") -> td.ScriptedPolicy:
    return td.ScriptedPolicy(mode="fixed_text", text=text)


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT compile happens here, not inside timed acceptance assertions
    ds = make_numeric_dataset(16, 2, seed=99)
    td.fit(ds, td.Hyperparams(rounds=2, max_depth=2))


@pytest.fixture
def gateway_pair():
    """(summarizer, predictor) scripted gateways with call counting."""
    summarizer_client = td.ScriptedClient(fixed_summarizer_policy())
    predictor_client = td.ScriptedClient(oracle_predictor_policy())
    return td.Gateway(summarizer_client), td.Gateway(predictor_client)

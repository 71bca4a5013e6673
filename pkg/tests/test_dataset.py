from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tabdistill as td
from tabdistill.dataset import (
    CATEGORICAL,
    MISSING_CODE,
    NUMERIC,
    FeatureSpec,
    Schema,
    SplitPlan,
    encode_ordinal,
    load_csv,
    load_task_spec,
    sample_few_shot,
    schema_hints_from_task,
    shuffle_columns,
    split_train_test,
)
from tabdistill.errors import (
    EmptyInputError,
    InsufficientDataError,
    ParseError,
    SchemaError,
)

from conftest import make_numeric_dataset


BLOOD_HEADER = "Recency,Frequency,Monetary,Time,Class"


def write_blood_csv(path, n_rows=748):
    rng = np.random.default_rng(7)
    lines = [BLOOD_HEADER]
    for i in range(n_rows):
        rec, freq = rng.integers(0, 40), rng.integers(1, 50)
        lines.append(f"{rec},{freq},{freq * 250},{rng.integers(2, 98)},{i % 4 == 0:d}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_load_csv_blood_shape(tmp_path):
    csv_path = tmp_path / "blood.csv"
    write_blood_csv(csv_path)
    ds = load_csv(csv_path)
    assert ds.n_features == 4
    assert len(ds) == 748
    assert len(ds.schema.class_labels) == 2
    assert all(f.kind == NUMERIC for f in ds.schema.features)


def test_load_csv_header_only_is_empty_input(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("a,b,Class\n", encoding="utf-8")
    with pytest.raises(EmptyInputError):
        load_csv(p)


def test_load_csv_missing_file_content(tmp_path):
    p = tmp_path / "zero.csv"
    p.write_text("", encoding="utf-8")
    with pytest.raises(EmptyInputError):
        load_csv(p)


def test_mixed_column_inferred_categorical(tmp_path):
    p = tmp_path / "mixed.csv"
    p.write_text("col,Class\n3,0\nabc,1\n5,0\n", encoding="utf-8")
    ds = load_csv(p)
    assert ds.schema.features[0].kind == CATEGORICAL
    assert {r[0] for r in ds.rows} == {"3", "abc", "5"}


def test_ragged_row_names_row_number(tmp_path):
    p = tmp_path / "ragged.csv"
    p.write_text("a,b,Class\n1,2,0\n1,0\n", encoding="utf-8")
    with pytest.raises(ParseError, match="row 2"):
        load_csv(p)


def test_missing_label_column_is_schema_error(tmp_path):
    p = tmp_path / "nolabel.csv"
    p.write_text("a,b\n1,2\n", encoding="utf-8")
    hints = Schema(features=(), label_column="Class", class_labels=("0", "1"))
    with pytest.raises(SchemaError, match="Class"):
        load_csv(p, hints)


def test_kind_hint_overrides_inference(tmp_path):
    p = tmp_path / "hinted.csv"
    p.write_text("a,Class\n1,0\n2,1\nx,0\n", encoding="utf-8")
    hints = Schema(
        features=(FeatureSpec("a", NUMERIC),),
        label_column="Class",
        class_labels=("0", "1"),
    )
    ds = load_csv(p, hints)
    # unparseable cell under a numeric hint becomes missing
    assert ds.rows[2][0] is None
    assert ds.rows[0][0] == 1.0


def test_empty_cells_parse_as_missing(tmp_path):
    p = tmp_path / "gaps.csv"
    p.write_text("a,b,Class\n1,,0\n,"
                 "tok,1\n", encoding="utf-8")
    ds = load_csv(p)
    assert ds.rows[0][1] is None
    assert ds.rows[1][0] is None


def test_load_task_spec_round_trip(tmp_path):
    meta = {
        "title": "Blood donation prediction",
        "description": "This data is to predict whether a given individual will consent or avoid donating blood.",
        "question": "Will the person donate blood?",
        "answer_instruction": "Answer the question with either 'Yes' or 'No' (without quotes).",
        "answer_choices": ["Yes", "No"],
        "label_column": "Class",
        "verbalizer": {"1": "Yes", "0": "No"},
    }
    p = tmp_path / "task.json"
    p.write_text(json.dumps(meta), encoding="utf-8")
    task = load_task_spec(p)
    assert task.title == "Blood donation prediction"
    assert task.question == "Will the person donate blood?"
    assert task.answer_choices == ("Yes", "No")
    assert task.prediction_goal == task.question  # metadata did not set it
    hints = schema_hints_from_task(task)
    assert hints.class_labels == ("1", "0")
    assert hints.answer_choices == ("Yes", "No")


def test_load_task_spec_missing_key(tmp_path):
    p = tmp_path / "task.json"
    p.write_text('{"title": "t", "description": "d", "answer_instruction": "a", "answer_choices": ["x", "y"]}',
                 encoding="utf-8")
    with pytest.raises(SchemaError, match="question"):
        load_task_spec(p)


def test_load_task_spec_multiclass_choices(tmp_path):
    meta = {
        "title": "Car safety prediction",
        "description": "Rate the car.",
        "question": "How would you rate the decision to buy this car?",
        "answer_instruction": "Answer the question with either 'Unacceptable', 'Acceptable', 'Good', or 'Very Good' (without quotes).",
        "answer_choices": ["Unacceptable", "Acceptable", "Good", "Very Good"],
    }
    p = tmp_path / "car.json"
    p.write_text(json.dumps(meta), encoding="utf-8")
    task = load_task_spec(p)
    assert task.answer_choices == ("Unacceptable", "Acceptable", "Good", "Very Good")


def test_load_task_spec_duplicate_choices(tmp_path):
    p = tmp_path / "task.json"
    p.write_text(
        '{"title": "t", "description": "d", "question": "q", '
        '"answer_instruction": "a", "answer_choices": ["x", "x"]}',
        encoding="utf-8",
    )
    with pytest.raises(SchemaError):
        load_task_spec(p)


def test_split_sizes_and_disjointness():
    ds = make_numeric_dataset(100, 3, seed=5)
    plan = SplitPlan(seed=11, fold_count=5, train_fraction=0.8, few_shot_n=16, test_cap=1000)
    train, test = split_train_test(ds, plan, 0)
    assert len(train) == 80 and len(test) == 20
    train_rows = set(train.rows)
    assert all(r not in train_rows for r in test.rows)


def test_split_cap_applies():
    ds = make_numeric_dataset(10000, 2, seed=6)
    plan = SplitPlan(seed=3, fold_count=5, few_shot_n=16, test_cap=1000)
    train, test = split_train_test(ds, plan, 1)
    assert len(test) == 1000
    assert len(train) == 8000


def test_split_deterministic():
    ds = make_numeric_dataset(97, 2, seed=8)
    plan = SplitPlan(seed=21, fold_count=5, few_shot_n=4)
    a = split_train_test(ds, plan, 2)
    b = split_train_test(ds, plan, 2)
    assert a[0].rows == b[0].rows and a[1].rows == b[1].rows


def test_fold_test_sets_disjoint_when_blocks_fit():
    # fold_count * ceil((1-tf) * n) <= n guarantees disjoint pre-cap blocks
    ds = make_numeric_dataset(100, 2, seed=9)
    plan = SplitPlan(seed=4, fold_count=5, train_fraction=0.8, few_shot_n=4)
    seen: set = set()
    for fold in range(plan.fold_count):
        _, test = split_train_test(ds, plan, fold)
        ids = {test.rows[i] for i in range(len(test))}
        assert not (seen & ids)
        seen |= ids


def test_split_too_small_errors():
    ds = make_numeric_dataset(3, 2, seed=1)
    plan = SplitPlan(seed=0, fold_count=5, few_shot_n=1)
    with pytest.raises(InsufficientDataError):
        split_train_test(ds, plan, 0)


def test_sample_few_shot_identity_and_determinism():
    ds = make_numeric_dataset(80, 3, seed=2)
    assert sample_few_shot(ds, 80, seed=5) is ds
    a = sample_few_shot(ds, 16, seed=5)
    b = sample_few_shot(ds, 16, seed=5)
    assert a.rows == b.rows
    with pytest.raises(InsufficientDataError):
        sample_few_shot(ds, 81, seed=5)


@given(n=st.integers(min_value=1, max_value=60), seed=st.integers(min_value=0, max_value=2**31))
@settings(max_examples=40, deadline=None)
def test_sample_few_shot_subset_property(n, seed):
    ds = make_numeric_dataset(60, 2, seed=4)
    sub = sample_few_shot(ds, n, seed=seed)
    assert len(sub) == n
    pool = set(ds.rows)
    assert all(r in pool for r in sub.rows)
    assert len(set(sub.rows)) == n  # without replacement (rows are unique floats)


def test_shuffle_columns_single_feature_is_identity():
    ds = make_numeric_dataset(5, 1, seed=0)
    names, values = shuffle_columns(ds.rows[0], ds.schema, seed=123)
    assert names == list(ds.schema.feature_names)
    assert values == list(ds.rows[0])


@given(seed=st.integers(min_value=0, max_value=2**31))
@settings(max_examples=60, deadline=None)
def test_shuffle_columns_preserves_pairs(seed):
    ds = make_numeric_dataset(1, 6, seed=17)
    names, values = shuffle_columns(ds.rows[0], ds.schema, seed=seed)
    original = set(zip(ds.schema.feature_names, ds.rows[0]))
    assert set(zip(names, values)) == original


def test_shuffle_columns_multiset_bulk():
    ds = make_numeric_dataset(1000, 5, seed=18)
    for i in range(1000):
        names, values = shuffle_columns(ds.rows[i], ds.schema, seed=i)
        assert sorted(zip(names, values)) == sorted(zip(ds.schema.feature_names, ds.rows[i]))


def test_sample_few_shot_stratified_proportions():
    rng = np.random.default_rng(31)
    schema = make_numeric_dataset(4, 2).schema
    rows = [[float(a), float(b)] for a, b in rng.uniform(0, 1, size=(100, 2))]
    labels = [0] * 75 + [1] * 25
    ds = td.LabeledDataset(schema, rows, labels)
    sub = sample_few_shot(ds, 20, seed=9, stratified=True)
    counts = sub.class_counts()
    assert counts == [15, 5]
    assert len(sub) == 20


def test_encode_ordinal_numeric_passthrough():
    ds = make_numeric_dataset(10, 3, seed=3)
    matrix, enc = encode_ordinal(ds)
    assert matrix.shape == (10, 3)
    for i in range(10):
        for j in range(3):
            assert matrix[i, j] == ds.rows[i][j]


def test_encode_ordinal_first_appearance_codes(tmp_path):
    p = tmp_path / "cats.csv"
    p.write_text("c,Class\nb,0\na,1\nb,0\n", encoding="utf-8")
    ds = load_csv(p)
    matrix, enc = encode_ordinal(ds)
    assert matrix[:, 0].tolist() == [0.0, 1.0, 0.0]
    assert enc.categories[0] == ("b", "a")


def test_encode_ordinal_round_trip():
    rng = np.random.default_rng(12)
    schema = Schema(
        features=(FeatureSpec("num", NUMERIC), FeatureSpec("cat", CATEGORICAL)),
        label_column="Class",
        class_labels=("0", "1"),
    )
    rows = [[float(rng.uniform(-5, 5)), rng.choice(["red", "green", "blue"])] for _ in range(20)]
    ds = td.LabeledDataset(schema, rows, rng.integers(0, 2, 20).tolist())
    matrix, enc = encode_ordinal(ds)
    decoded = enc.decode_matrix(matrix)
    for orig, back in zip(ds.rows, decoded):
        assert back[0] == orig[0]
        assert back[1] == orig[1]


def test_encode_ordinal_missing_sentinel():
    schema = Schema(
        features=(FeatureSpec("num", NUMERIC), FeatureSpec("cat", CATEGORICAL)),
        label_column="Class",
        class_labels=("0", "1"),
    )
    ds = td.LabeledDataset(schema, [[1.0, "x"], [None, None], [3.0, "y"]], [0, 1, 0])
    matrix, enc = encode_ordinal(ds)
    assert matrix[1, 1] == MISSING_CODE
    assert matrix[1, 0] == 2.0  # median of observed {1, 3}
    assert enc.decode_matrix(matrix)[1][1] is None


def test_encode_ordinal_injective_per_column(tmp_path):
    p = tmp_path / "inj.csv"
    rows = ["cat,Class"] + [f"tok{i % 7},{i % 2}" for i in range(30)]
    p.write_text("\n".join(rows) + "\n", encoding="utf-8")
    ds = load_csv(p)
    _, enc = encode_ordinal(ds)
    assert len(set(enc.categories[0])) == len(enc.categories[0]) == 7


def test_schema_validation():
    with pytest.raises(SchemaError):
        Schema(
            features=(FeatureSpec("a", NUMERIC), FeatureSpec("a", NUMERIC)),
            label_column="Class",
            class_labels=("0", "1"),
        )
    with pytest.raises(SchemaError):
        Schema(features=(FeatureSpec("a", NUMERIC),), label_column="a", class_labels=("0", "1"))
    with pytest.raises(SchemaError):  # non-injective verbalizer
        Schema(
            features=(),
            label_column="Class",
            class_labels=("0", "1"),
            verbalizer={"0": "Same", "1": "Same"},
        )


def test_split_plan_validation():
    with pytest.raises(ValueError):
        SplitPlan(seed=0, fold_count=1)
    with pytest.raises(ValueError):
        SplitPlan(seed=0, train_fraction=1.0)
    with pytest.raises(ValueError):
        SplitPlan(seed=0, few_shot_n=0)
    with pytest.raises(ValueError):
        SplitPlan(seed=0, test_cap=0)

"""Measurement protocol: per-row prediction over test sets, F1 scoring,
cross-validation sweeps, position-bias pairing, and report emission.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .dataset import LabeledDataset, SplitPlan, TaskSpec, sample_few_shot, shuffle_columns, split_train_test
from .distill import InsightPackage, distill
from .errors import GatewayError
from .gateway import NO_ANSWER, PREDICTOR, CompletionRequest, cache_key, parse_answer
from .gbdt import Hyperparams
from .serialize import serialize_cells, serialize_row

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionRecord:
    row_index: int
    truth: str
    predicted: object  # answer-choice string or NO_ANSWER
    prompt_key: str
    latency_ms: float
    error: str | None = None


@dataclass(frozen=True)
class ConfusionTable:
    """Per-class true-positive / false-positive / false-negative counts."""

    labels: tuple[str, ...]
    tp: tuple[int, ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]


@dataclass(frozen=True)
class FoldResult:
    fold: int
    macro_f1: float
    per_class_f1: dict[str, float]
    no_answer_rate: float
    config: dict


@dataclass(frozen=True)
class CvResult:
    folds: tuple[FoldResult, ...]
    mean_macro_f1: float
    failures: tuple[str, ...] = ()


@dataclass(frozen=True)
class BiasFoldPair:
    fold: int
    plain_macro_f1: float
    shuffled_macro_f1: float
    plain_per_class: dict[str, float]
    shuffled_per_class: dict[str, float]


@dataclass(frozen=True)
class BiasReport:
    pairs: tuple[BiasFoldPair, ...]
    mean_plain_macro: float
    mean_shuffled_macro: float

    @property
    def mean_gap(self) -> float:
        return self.mean_plain_macro - self.mean_shuffled_macro


def predict_dataset(
    package: InsightPackage,
    task: TaskSpec,
    test: LabeledDataset,
    predictor,
    predictor_model: str = "scripted-predictor",
    temperature: float = 0.0,
    shuffle: bool = False,
    seed: int = 0,
    no_demonstration: bool = False,
) -> list[PredictionRecord]:
    """One record per test row. With ``shuffle`` the query row's columns are
    permuted per (seed, row index) before serialization; exemplars are never
    shuffled. Gateway failures record NO_ANSWER with an error note and the
    run continues.
    """
    from .serialize import render_classification_prompt

    rules = package.rules_text()
    extra = package.extra_rules_text()
    package_no_demo = package.config.get("ablations", {}).get("no_demonstration", False)
    shots = [] if (no_demonstration or package_no_demo) else package.shot_blocks()
    records: list[PredictionRecord] = []
    for i in range(len(test)):
        row = test.rows[i]
        if shuffle:
            names, values = shuffle_columns(row, test.schema, [seed, i])
            query = serialize_cells(names, values)
        else:
            query = serialize_row(row, test.schema)
        prompt = render_classification_prompt(task, rules, extra, shots, query)
        req = CompletionRequest(
            prompt=prompt, model_name=predictor_model, role=PREDICTOR, temperature=temperature
        )
        key = cache_key(req)
        truth = test.schema.verbalize(test.labels[i])
        start = time.perf_counter()
        try:
            resp = predictor.complete(req)
            predicted = parse_answer(resp.text, task.answer_choices)
            error = None
        except GatewayError as e:
            predicted = NO_ANSWER
            error = str(e)
            log.warning("row %d: gateway error recorded as NoAnswer: %s", i, e)
        latency_ms = (time.perf_counter() - start) * 1000.0
        records.append(
            PredictionRecord(
                row_index=i,
                truth=truth,
                predicted=predicted,
                prompt_key=key,
                latency_ms=latency_ms,
                error=error,
            )
        )
    return records


def confusion(records: Sequence[PredictionRecord], class_answers: Sequence[str]) -> ConfusionTable:
    """NO_ANSWER inflates only the truth class's false negatives."""
    tp = {c: 0 for c in class_answers}
    fp = {c: 0 for c in class_answers}
    fn = {c: 0 for c in class_answers}
    for rec in records:
        if rec.predicted is NO_ANSWER or rec.predicted not in tp:
            fn[rec.truth] += 1
        elif rec.predicted == rec.truth:
            tp[rec.truth] += 1
        else:
            fp[rec.predicted] += 1
            fn[rec.truth] += 1
    return ConfusionTable(
        labels=tuple(class_answers),
        tp=tuple(tp[c] for c in class_answers),
        fp=tuple(fp[c] for c in class_answers),
        fn=tuple(fn[c] for c in class_answers),
    )


def f1_scores(
    records: Sequence[PredictionRecord],
    class_answers: Sequence[str],
    positive_class: str | None = None,
) -> tuple[float, dict[str, float]]:
    """Headline F1 plus the per-class vector.

    The headline is the unweighted macro average over schema classes, or the
    single class's F1 when ``positive_class`` is set. Conventions: precision,
    recall, and F1 are 0 when their denominator is 0; NO_ANSWER counts
    against recall of the truth class and against no class's precision.
    """
    if not records:
        raise ValueError("cannot score an empty record list")
    table = confusion(records, class_answers)
    per_class: dict[str, float] = {}
    for c, tp, fp, fn in zip(table.labels, table.tp, table.fp, table.fn):
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[c] = (
            2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
        )
    if positive_class is not None:
        if positive_class not in per_class:
            raise ValueError(f"positive class {positive_class!r} not in {list(class_answers)}")
        return per_class[positive_class], per_class
    macro = sum(per_class.values()) / len(class_answers)
    return macro, per_class


def no_answer_rate(records: Sequence[PredictionRecord]) -> float:
    if not records:
        return 0.0
    return sum(1 for r in records if r.predicted is NO_ANSWER) / len(records)


def _run_fold(
    dataset: LabeledDataset,
    task: TaskSpec,
    plan: SplitPlan,
    params: Hyperparams,
    summarizer,
    predictor,
    fold: int,
    shots: int,
    summarizer_model: str,
    predictor_model: str,
    ablations: dict,
    workdir: Path | None,
):
    train_full, test = split_train_test(dataset, plan, fold)
    train = sample_few_shot(train_full, min(plan.few_shot_n, len(train_full)), [plan.seed, fold, 2])
    n_e = min(shots, len(train))
    if n_e < shots:
        log.warning("fold %d: shots clamped from %d to training size %d", fold, shots, n_e)
    package = distill(
        train,
        task,
        params,
        summarizer,
        predictor,
        n_e=n_e,
        seed=plan.seed,
        summarizer_model=summarizer_model,
        predictor_model=predictor_model,
        no_grouping=ablations.get("no_grouping", False),
        no_reflection=ablations.get("no_reflection", False),
        no_demonstration=ablations.get("no_demonstration", False),
        workdir=(workdir / f"fold{fold}") if workdir is not None else None,
    )
    return train, test, package, n_e


def cross_validate(
    dataset: LabeledDataset,
    task: TaskSpec,
    plan: SplitPlan,
    params: Hyperparams,
    summarizer,
    predictor,
    shots: int = 16,
    summarizer_model: str = "scripted-summarizer",
    predictor_model: str = "scripted-predictor",
    ablations: dict | None = None,
    workdir: str | Path | None = None,
) -> CvResult:
    """Per fold: split 80/20, cap the test set, sample the few-shot training
    set, distill, predict, score. Fully deterministic with scripted gateways;
    failed folds are recorded and the aggregate covers completed folds."""
    ablations = ablations or {}
    workdir = Path(workdir) if workdir is not None else None
    folds: list[FoldResult] = []
    failures: list[str] = []
    for fold in range(plan.fold_count):
        try:
            train, test, package, n_e = _run_fold(
                dataset, task, plan, params, summarizer, predictor,
                fold, shots, summarizer_model, predictor_model, ablations, workdir,
            )
            records = predict_dataset(
                package,
                task,
                test,
                predictor,
                predictor_model=predictor_model,
                seed=[plan.seed, fold, 3],
                no_demonstration=ablations.get("no_demonstration", False),
            )
            macro, per_class = f1_scores(records, test.schema.answer_choices)
            folds.append(
                FoldResult(
                    fold=fold,
                    macro_f1=macro,
                    per_class_f1=per_class,
                    no_answer_rate=no_answer_rate(records),
                    config={"n": plan.few_shot_n, "shots": n_e, "seed": plan.seed},
                )
            )
        except Exception as e:  # fold failure: warn, aggregate over the rest
            log.warning("fold %d failed: %s", fold, e)
            failures.append(f"fold {fold}: {e}")
    mean = sum(f.macro_f1 for f in folds) / len(folds) if folds else 0.0
    return CvResult(folds=tuple(folds), mean_macro_f1=mean, failures=tuple(failures))


def bias_analysis(
    dataset: LabeledDataset,
    task: TaskSpec,
    plan: SplitPlan,
    params: Hyperparams,
    summarizer,
    predictor,
    shots: int = 16,
    summarizer_model: str = "scripted-summarizer",
    predictor_model: str = "scripted-predictor",
    ablations: dict | None = None,
) -> BiasReport:
    """Score each fold's identical test set twice, columns unshuffled then
    shuffled, with the same distilled package."""
    ablations = ablations or {}
    pairs: list[BiasFoldPair] = []
    for fold in range(plan.fold_count):
        train, test, package, _ = _run_fold(
            dataset, task, plan, params, summarizer, predictor,
            fold, shots, summarizer_model, predictor_model, ablations, None,
        )
        common = dict(
            predictor_model=predictor_model,
            seed=[plan.seed, fold, 4],
            no_demonstration=ablations.get("no_demonstration", False),
        )
        plain = predict_dataset(package, task, test, predictor, shuffle=False, **common)
        shuffled = predict_dataset(package, task, test, predictor, shuffle=True, **common)
        plain_macro, plain_pc = f1_scores(plain, test.schema.answer_choices)
        shuf_macro, shuf_pc = f1_scores(shuffled, test.schema.answer_choices)
        pairs.append(
            BiasFoldPair(
                fold=fold,
                plain_macro_f1=plain_macro,
                shuffled_macro_f1=shuf_macro,
                plain_per_class=plain_pc,
                shuffled_per_class=shuf_pc,
            )
        )
    mean_plain = sum(p.plain_macro_f1 for p in pairs) / len(pairs)
    mean_shuffled = sum(p.shuffled_macro_f1 for p in pairs) / len(pairs)
    return BiasReport(pairs=tuple(pairs), mean_plain_macro=mean_plain, mean_shuffled_macro=mean_shuffled)


# --- reporting ---------------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    n: int
    shots: int
    mode: str
    macro_f1: float
    per_class_f1: dict[str, float] = field(default_factory=dict)
    no_answer_rate: float = 0.0
    cost_usd: float = 0.0


def _columns(rows: Sequence[ResultRow]) -> list[str]:
    class_cols = [f"f1_{c}" for c in rows[0].per_class_f1]
    return ["dataset", "n", "shots", "mode", "macro_f1", *class_cols, "no_answer_rate", "cost_usd"]


def _row_values(row: ResultRow) -> list:
    return [
        row.dataset,
        row.n,
        row.shots,
        row.mode,
        row.macro_f1,
        *row.per_class_f1.values(),
        row.no_answer_rate,
        row.cost_usd,
    ]


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def emit_report(
    results: Sequence[ResultRow],
    format: str,
    path: str | Path,
    config_echo: dict | None = None,
) -> Path:
    """Write results in a stable column order.

    ``table`` renders percentages with one decimal; ``json`` and ``csv`` keep
    full precision so they parse back to equal values.
    """
    if not results:
        raise ValueError("cannot emit an empty report")
    if format not in ("table", "json", "csv"):
        raise ValueError(f"unknown report format {format!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = _columns(results)
    echo = config_echo or {}

    if format == "json":
        payload = {
            "config": echo,
            "columns": cols,
            "rows": [dict(zip(cols, _row_values(r))) for r in results],
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        return path

    if format == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for r in results:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in _row_values(r)])
        return path

    lines = []
    if echo:
        lines.append("# " + json.dumps(echo, sort_keys=True))
    display: list[list[str]] = [cols]
    for r in results:
        cells = [r.dataset, str(r.n), str(r.shots), r.mode, _pct(r.macro_f1)]
        cells += [_pct(v) for v in r.per_class_f1.values()]
        cells += [_pct(r.no_answer_rate), f"{r.cost_usd:.4f}"]
        display.append(cells)
    widths = [max(len(row[i]) for row in display) for i in range(len(cols))]
    for row in display:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path

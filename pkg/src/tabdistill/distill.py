"""Insight distillation: group-wise rule summarization, rule merging,
easy-exemplar selection, and reflective rule enhancement.

The output is a serializable InsightPackage holding the merged rules, the
optional reflection rules, the easy exemplar set with entropy scores, and a
config snapshot; rerunning with identical inputs and scripted gateways
reproduces the package byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .dataset import LabeledDataset, TaskSpec
from .errors import GatewayError, StageError
from .gateway import (
    NO_ANSWER,
    PREDICTOR,
    SUMMARIZER,
    CompletionRequest,
    parse_answer,
)
from .gbdt import (
    GbdtModel,
    Hyperparams,
    LeafGroup,
    default_hard_count,
    entropy_scores,
    fit,
    group_by_first_tree,
    rank_select,
)
from .serialize import (
    ExemplarBlock,
    exemplar_for_row,
    render_classification_prompt,
    render_group_rule_prompt,
    render_merge_prompt,
    serialize_row,
)

PACKAGE_FORMAT_VERSION = "1"


@dataclass(frozen=True)
class RuleSet:
    """Ordered rule lines plus where they came from."""

    rules: tuple[str, ...]
    provenance: str

    def __post_init__(self):
        if any(not r.strip() for r in self.rules):
            raise ValueError("rule lines must be non-empty")

    @classmethod
    def from_text(cls, text: str, provenance: str) -> "RuleSet":
        lines = tuple(line.strip() for line in text.splitlines() if line.strip())
        return cls(rules=lines, provenance=provenance)

    def text(self) -> str:
        return "\n".join(self.rules)

    def __bool__(self) -> bool:
        return bool(self.rules)


@dataclass(frozen=True)
class ScoredExemplar:
    row_index: int
    entropy: float
    block: ExemplarBlock


@dataclass(frozen=True)
class ReflectionReport:
    hard_count: int
    misclassified_indices: tuple[int, ...]
    outcomes: tuple[tuple[int, str, str], ...]  # (row index, predicted, truth)


@dataclass(frozen=True)
class InsightPackage:
    merged_rules: RuleSet
    reflection_rules: RuleSet | None
    exemplars: tuple[ScoredExemplar, ...]
    config: dict
    usage_excerpt: dict

    def rules_text(self) -> str:
        return self.merged_rules.text()

    def extra_rules_text(self) -> str | None:
        return self.reflection_rules.text() if self.reflection_rules else None

    def shot_blocks(self) -> list[ExemplarBlock]:
        return [e.block for e in self.exemplars]

    def to_json(self) -> dict:
        return {
            "format_version": PACKAGE_FORMAT_VERSION,
            "merged_rules": {
                "rules": list(self.merged_rules.rules),
                "provenance": self.merged_rules.provenance,
            },
            "reflection_rules": (
                {
                    "rules": list(self.reflection_rules.rules),
                    "provenance": self.reflection_rules.provenance,
                }
                if self.reflection_rules
                else None
            ),
            "exemplars": [
                {
                    "row_index": e.row_index,
                    "entropy": e.entropy,
                    "serialized_features": e.block.serialized_features,
                    "question": e.block.question,
                    "answer": e.block.answer,
                }
                for e in self.exemplars
            ],
            "config": self.config,
            "usage_excerpt": self.usage_excerpt,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2, ensure_ascii=False)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_json(cls, obj: dict) -> "InsightPackage":
        merged = RuleSet(tuple(obj["merged_rules"]["rules"]), obj["merged_rules"]["provenance"])
        reflection = None
        if obj.get("reflection_rules"):
            reflection = RuleSet(
                tuple(obj["reflection_rules"]["rules"]), obj["reflection_rules"]["provenance"]
            )
        exemplars = tuple(
            ScoredExemplar(
                row_index=e["row_index"],
                entropy=e["entropy"],
                block=ExemplarBlock(
                    serialized_features=e["serialized_features"],
                    question=e["question"],
                    answer=e["answer"],
                ),
            )
            for e in obj["exemplars"]
        )
        return cls(
            merged_rules=merged,
            reflection_rules=reflection,
            exemplars=exemplars,
            config=obj["config"],
            usage_excerpt=obj.get("usage_excerpt", {}),
        )

    @classmethod
    def load(cls, path: str | Path) -> "InsightPackage":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


class _RecordingGateway:
    """Counts requests and token totals independent of cache state."""

    def __init__(self, inner):
        self.inner = inner
        self.requests = 0
        self.input_tokens = 0
        self.output_tokens = 0

    def complete(self, req: CompletionRequest):
        resp = self.inner.complete(req)
        self.requests += 1
        self.input_tokens += resp.input_tokens
        self.output_tokens += resp.output_tokens
        return resp

    def excerpt(self) -> dict:
        return {
            "requests": self.requests,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
        }


def summarize_group_rules(
    train: LabeledDataset,
    task: TaskSpec,
    groups: Sequence[LeafGroup],
    summarizer,
    model_name: str,
    temperature: float = 0.0,
) -> list[RuleSet]:
    """One rule set per non-empty group, in group order."""
    rule_sets = []
    for group in groups:
        blocks = [exemplar_for_row(train, i, task) for i in group.indices]
        prompt = render_group_rule_prompt(blocks)
        req = CompletionRequest(
            prompt=prompt, model_name=model_name, role=SUMMARIZER, temperature=temperature
        )
        try:
            resp = summarizer.complete(req)
        except GatewayError as e:
            raise GatewayError(f"summarizing group {group.leaf_id}: {e}") from e
        rule_sets.append(RuleSet.from_text(resp.text, f"group {group.leaf_id}"))
    return rule_sets


def merge_rules(
    rule_sets: Sequence[RuleSet],
    task: TaskSpec,
    summarizer,
    model_name: str,
    temperature: float = 0.0,
) -> RuleSet:
    if not rule_sets:
        raise ValueError("need at least one rule set to merge")
    prompt = render_merge_prompt([rs.text() for rs in rule_sets], task.prediction_goal)
    req = CompletionRequest(
        prompt=prompt, model_name=model_name, role=SUMMARIZER, temperature=temperature
    )
    resp = summarizer.complete(req)
    return RuleSet.from_text(resp.text, "merged")


def select_exemplars(
    model: GbdtModel, train: LabeledDataset, task: TaskSpec, n_e: int
) -> list[ScoredExemplar]:
    """The n_e lowest-entropy rows, ordered easiest first for prompt assembly."""
    if not 1 <= n_e <= len(train):
        raise ValueError(f"n_e={n_e} outside [1, {len(train)}]")
    scores = entropy_scores(model, train)
    chosen = rank_select(scores, n_e, "lowest")
    ordered = sorted(chosen, key=lambda i: (scores[i], i))
    return [
        ScoredExemplar(row_index=i, entropy=scores[i], block=exemplar_for_row(train, i, task))
        for i in ordered
    ]


def reflect(
    model: GbdtModel,
    train: LabeledDataset,
    task: TaskSpec,
    exemplars: Sequence[ScoredExemplar],
    merged_rules: RuleSet,
    predictor,
    summarizer,
    n_h: int,
    predictor_model: str,
    summarizer_model: str,
    temperature: float = 0.0,
    no_demonstration: bool = False,
) -> tuple[RuleSet | None, ReflectionReport]:
    """Probe the n_h hardest rows with the current insights; summarize the
    misclassified ones into reflection rules.

    Rows already serving as exemplars are excluded before hard selection, so
    selection proceeds to the next-ranked rows. A NO_ANSWER prediction counts
    as misclassified.
    """
    if n_h > len(train):
        raise ValueError(f"n_h={n_h} exceeds training size {len(train)}")
    scores = entropy_scores(model, train)
    exemplar_rows = {e.row_index for e in exemplars}
    pool = [i for i in range(len(train)) if i not in exemplar_rows]
    k = min(n_h, len(pool))
    if k == 0:
        return None, ReflectionReport(hard_count=0, misclassified_indices=(), outcomes=())
    ranked = sorted(pool, key=lambda i: (-scores[i], i))[:k]
    hard = sorted(ranked)

    shots = [] if no_demonstration else [e.block for e in exemplars]
    outcomes = []
    missed = []
    for i in hard:
        prompt = render_classification_prompt(
            task,
            merged_rules.text(),
            None,
            shots,
            serialize_row(train.rows[i], train.schema),
        )
        req = CompletionRequest(
            prompt=prompt, model_name=predictor_model, role=PREDICTOR, temperature=temperature
        )
        try:
            resp = predictor.complete(req)
        except GatewayError as e:
            raise GatewayError(f"reflection prediction for row {i}: {e}") from e
        predicted = parse_answer(resp.text, task.answer_choices)
        truth = train.schema.verbalize(train.labels[i])
        wrong = predicted is NO_ANSWER or predicted != truth
        outcomes.append((i, repr(predicted) if predicted is NO_ANSWER else predicted, truth))
        if wrong:
            missed.append(i)

    report = ReflectionReport(
        hard_count=k,
        misclassified_indices=tuple(missed),
        outcomes=tuple(outcomes),
    )
    if not missed:
        return None, report
    blocks = [exemplar_for_row(train, i, task) for i in missed]
    prompt = render_group_rule_prompt(blocks)
    req = CompletionRequest(
        prompt=prompt, model_name=summarizer_model, role=SUMMARIZER, temperature=temperature
    )
    resp = summarizer.complete(req)
    return RuleSet.from_text(resp.text, "reflection"), report


def distill(
    train: LabeledDataset,
    task: TaskSpec,
    params: Hyperparams,
    summarizer,
    predictor,
    n_e: int,
    n_h: int | None = None,
    seed: int = 0,
    summarizer_model: str = "scripted-summarizer",
    predictor_model: str = "scripted-predictor",
    temperature: float = 0.0,
    no_grouping: bool = False,
    no_reflection: bool = False,
    no_demonstration: bool = False,
    workdir: str | Path | None = None,
) -> InsightPackage:
    """Run the full distillation pipeline and package the insights.

    Ablations: ``no_grouping`` skips group summarization and merging (empty
    merged rules), ``no_reflection`` skips the hard-sample pass,
    ``no_demonstration`` keeps exemplar selection (the package still carries
    them) but leaves the few-shot block out of every assembled prompt.
    Stage failures abort with the stage name; group rules are persisted to
    ``workdir`` before merging so interrupted runs keep partial artifacts.
    """
    if len(train) == 0:
        raise StageError("fit-model", "empty training set")
    if n_h is None:
        n_h = default_hard_count(len(train))
    workdir = Path(workdir) if workdir is not None else None
    if workdir is not None:
        workdir.mkdir(parents=True, exist_ok=True)

    summarizer_rec = _RecordingGateway(summarizer)
    predictor_rec = _RecordingGateway(predictor)

    def run(stage, fn):
        try:
            return fn()
        except StageError:
            raise
        except Exception as e:
            raise StageError(stage, str(e)) from e

    model = run("fit-model", lambda: fit(train, params, seed))

    if no_grouping:
        merged = RuleSet(rules=(), provenance="merged")
    else:
        groups = run("group", lambda: group_by_first_tree(model, train))
        rule_sets = run(
            "summarize-groups",
            lambda: summarize_group_rules(
                train, task, groups, summarizer_rec, summarizer_model, temperature
            ),
        )
        if workdir is not None:
            partial = [
                {"provenance": rs.provenance, "rules": list(rs.rules)} for rs in rule_sets
            ]
            (workdir / "group_rules.json").write_text(
                json.dumps(partial, indent=2, ensure_ascii=False), encoding="utf-8"
            )
        merged = run(
            "merge-rules",
            lambda: merge_rules(rule_sets, task, summarizer_rec, summarizer_model, temperature),
        )

    exemplars = run(
        "select-exemplars", lambda: select_exemplars(model, train, task, n_e)
    )

    reflection: RuleSet | None = None
    report: ReflectionReport | None = None
    if not no_reflection:
        reflection, report = run(
            "reflect",
            lambda: reflect(
                model,
                train,
                task,
                exemplars,
                merged,
                predictor_rec,
                summarizer_rec,
                n_h,
                predictor_model=predictor_model,
                summarizer_model=summarizer_model,
                temperature=temperature,
                no_demonstration=no_demonstration,
            ),
        )

    config = {
        "n_e": n_e,
        "n_h": n_h,
        "seed": seed,
        "hyperparams": asdict(params),
        "summarizer_model": summarizer_model,
        "predictor_model": predictor_model,
        "temperature": temperature,
        "ablations": {
            "no_grouping": no_grouping,
            "no_reflection": no_reflection,
            "no_demonstration": no_demonstration,
        },
        "reflection": (
            {
                "hard_count": report.hard_count,
                "misclassified": list(report.misclassified_indices),
            }
            if report is not None
            else None
        ),
    }
    package = InsightPackage(
        merged_rules=merged,
        reflection_rules=reflection,
        exemplars=tuple(exemplars),
        config=config,
        usage_excerpt={
            "summarizer": summarizer_rec.excerpt(),
            "predictor": predictor_rec.excerpt(),
        },
    )
    if workdir is not None:
        run("package", lambda: package.save(workdir / "package.json"))
    return package

"""Prompt rendering: row sentences, rule-summarization prompts, and the
multifaceted classification prompt.

All templates are byte-exact and use "\\n" line endings throughout; golden
files under tests/golden pin them. Renderers are pure and policy-free: shot
order, rule text, and ablation choices are the caller's business.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .dataset import MISSING_TOKEN, LabeledDataset, Schema, TaskSpec

GROUP_RULES = "group_rules"
MERGE_RULES = "merge_rules"
CLASSIFY = "classify"

# Separator line between few-shot samples and between rule blocks.
BLOCK_SEPARATOR = "\n\n- - -\n\n"

FEW_SHOT_START = "[FEW-SHOT EXAMPLES START]"
FEW_SHOT_END = "[FEW-SHOT EXAMPLES END]"
CURRENT_QUESTION_START = "[CURRENT QUESTION START]"
SECTION_RULE = "###"

RULES_HEADER = "Useful patterns for the task at hand:"
EXTRA_RULES_HEADER = (
    "Additional patterns for the task summarized from incorrectly classified "
    "examples with high entropy:"
)
GROUP_RULE_INSTRUCTION = (
    "Please distill the key trends that may assist an AI model in making future "
    "predictions. Output trends only without any further explanations."
)
MERGE_INSTRUCTION = (
    "Summarize the rules into a small set of non-conflicting and complementary "
    "patterns for predicting {goal}. Output patterns only without any further "
    "explanations."
)


def estimate_tokens(text: str) -> int:
    # crude but deterministic: ~4 bytes per token, floor 1
    return max(1, (len(text) + 3) // 4)


@dataclass(frozen=True)
class PromptText:
    text: str
    kind: str
    token_estimate: int

    @classmethod
    def of(cls, text: str, kind: str) -> "PromptText":
        return cls(text=text, kind=kind, token_estimate=estimate_tokens(text))


@dataclass(frozen=True)
class ExemplarBlock:
    """One labeled sample as it appears inside a prompt."""

    serialized_features: str
    question: str
    answer: str

    def render(self) -> str:
        return f"{self.serialized_features}\n\n{self.question}\nAnswer: {self.answer}"


def format_value(cell) -> str:
    """Render one cell: missing -> 'unknown', integers bare, reals as the
    shortest round-trip decimal, categorical tokens verbatim."""
    if cell is None:
        return MISSING_TOKEN
    if isinstance(cell, str):
        return cell
    v = float(cell)
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def serialize_cells(names: Sequence[str], values: Sequence) -> str:
    if len(names) != len(values):
        raise ValueError(f"{len(names)} names vs {len(values)} values")
    return " ".join(f"The {n} is {format_value(v)}." for n, v in zip(names, values))


def serialize_row(row: Sequence, schema: Schema) -> str:
    return serialize_cells(schema.feature_names, row)


def exemplar_for_row(dataset: LabeledDataset, index: int, task: TaskSpec) -> ExemplarBlock:
    return ExemplarBlock(
        serialized_features=serialize_row(dataset.rows[index], dataset.schema),
        question=task.question,
        answer=dataset.schema.verbalize(dataset.labels[index]),
    )


def render_group_rule_prompt(group: Sequence[ExemplarBlock]) -> PromptText:
    """Samples separated by '- - -', a trailing separator, then the distill
    instruction."""
    if not group:
        raise ValueError("cannot summarize an empty group")
    body = BLOCK_SEPARATOR.join(block.render() for block in group)
    return PromptText.of(body + BLOCK_SEPARATOR + GROUP_RULE_INSTRUCTION, GROUP_RULES)


def render_merge_prompt(rule_sets: Sequence[str], goal: str) -> PromptText:
    """Rule blocks separated by '- - -', then the summarize instruction with
    the task's label phrasing substituted."""
    if not rule_sets:
        raise ValueError("need at least one rule set to merge")
    body = BLOCK_SEPARATOR.join(rule_sets)
    instruction = MERGE_INSTRUCTION.format(goal=goal)
    return PromptText.of(body + BLOCK_SEPARATOR + instruction, MERGE_RULES)


def render_classification_prompt(
    task: TaskSpec,
    rules: str,
    extra_rules: str | None,
    shots: Sequence[ExemplarBlock],
    query_row: str,
) -> PromptText:
    """Assemble the full prediction prompt.

    Empty ``rules`` or ``extra_rules`` omit their section header entirely
    (ablation modes); an empty ``shots`` list keeps the few-shot markers with
    nothing between them. The prompt always ends with "Answer:".
    """
    sections = [f"Title: {task.title}\n{task.description}"]
    if rules:
        sections.append(f"{RULES_HEADER}\n{rules}")
    if extra_rules:
        sections.append(f"{EXTRA_RULES_HEADER}\n{extra_rules}")
    sections.append(SECTION_RULE)
    if shots:
        body = BLOCK_SEPARATOR.join(block.render() for block in shots)
        sections.append(f"{FEW_SHOT_START}\n\n{body}\n\n{FEW_SHOT_END}")
    else:
        sections.append(f"{FEW_SHOT_START}\n\n{FEW_SHOT_END}")
    sections.append(SECTION_RULE)
    sections.append(
        f"{CURRENT_QUESTION_START}\n\n{query_row}\n\n"
        f"{task.question} {task.answer_instruction}\nAnswer:"
    )
    return PromptText.of("\n\n".join(sections), CLASSIFY)

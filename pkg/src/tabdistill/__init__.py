"""Insight distillation for few-shot tabular classification.

A gradient-boosted-tree core supplies sample grouping (first-tree leaves) and
difficulty ranking (prediction entropy); an LLM gateway supplies rule
summarization and label prediction; prompts follow byte-exact templates; an
evaluation harness covers cross-validation, shot sweeps, and bias studies.
"""

from .dataset import (
    LabeledDataset,
    OrdinalEncoding,
    Schema,
    SplitPlan,
    TaskSpec,
    encode_ordinal,
    load_csv,
    load_task_spec,
    sample_few_shot,
    schema_hints_from_task,
    shuffle_columns,
    split_train_test,
)
from .distill import (
    InsightPackage,
    ReflectionReport,
    RuleSet,
    ScoredExemplar,
    distill,
    merge_rules,
    reflect,
    select_exemplars,
    summarize_group_rules,
)
from .errors import (
    ConfigError,
    EmptyInputError,
    GatewayError,
    InsufficientDataError,
    ParseError,
    SchemaError,
    ScriptError,
    StageError,
    TabDistillError,
)
from .evaluate import (
    BiasReport,
    CvResult,
    FoldResult,
    PredictionRecord,
    ResultRow,
    bias_analysis,
    cross_validate,
    emit_report,
    f1_scores,
    predict_dataset,
)
from .gateway import (
    NO_ANSWER,
    CompletionRequest,
    CompletionResponse,
    Gateway,
    LiveClient,
    ScriptedClient,
    ScriptedPolicy,
    UsageLedger,
    cache_key,
    parse_answer,
    tally,
)
from .gbdt import (
    DecisionTree,
    GbdtModel,
    Hyperparams,
    LeafGroup,
    backend_name,
    default_hard_count,
    entropy,
    entropy_scores,
    fit,
    group_by_first_tree,
    leaf_index,
    predict_proba,
    rank_select,
    set_backend,
)
from .serialize import (
    ExemplarBlock,
    PromptText,
    render_classification_prompt,
    render_group_rule_prompt,
    render_merge_prompt,
    serialize_cells,
    serialize_row,
)

__version__ = "0.1.0"

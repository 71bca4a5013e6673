"""Command-line surface: validate, distill, evaluate.

One experiment config file (JSON) drives everything; flags override the
config for sweeps. Exit codes: 0 success, 1 runtime failure, 2 validation
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dataset import (
    LabeledDataset,
    SplitPlan,
    TaskSpec,
    load_csv,
    load_task_spec,
    sample_few_shot,
    schema_hints_from_task,
    split_train_test,
)
from .distill import distill
from .errors import ConfigError, TabDistillError
from .evaluate import ResultRow, bias_analysis, cross_validate, emit_report
from .gateway import Gateway, LiveClient, ScriptedClient, ScriptedPolicy, UsageLedger
from .gbdt import Hyperparams

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2

DEFAULT_SCRIPTED_SUMMARY = "1. No scripted rules were configured for this run."


@dataclass
class ExperimentConfig:
    dataset_path: str
    task_path: str
    delimiter: str = ","
    plan: SplitPlan = field(default_factory=lambda: SplitPlan(seed=0))
    params: Hyperparams = field(default_factory=Hyperparams)
    gateway: dict = field(default_factory=dict)
    ablations: dict = field(default_factory=dict)
    n_values: tuple[int, ...] = ()
    shot_values: tuple[int, ...] = (16,)
    bias: bool = False
    output_dir: str = "runs"


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from e


def load_config(path: str | None, args: argparse.Namespace) -> ExperimentConfig:
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path}: {e}") from e

    dataset_path = getattr(args, "dataset", None) or raw.get("dataset")
    task_path = getattr(args, "task", None) or raw.get("task")
    if not dataset_path or not task_path:
        raise ConfigError("a dataset and a task file are required (config keys or flags)")

    plan_cfg = dict(raw.get("plan", {}))
    if getattr(args, "folds", None):
        plan_cfg["fold_count"] = args.folds
    if getattr(args, "seed", None) is not None:
        plan_cfg["seed"] = args.seed
    plan_cfg.setdefault("seed", 0)
    try:
        plan = SplitPlan(**plan_cfg)
    except TypeError as e:
        raise ConfigError(f"bad plan config: {e}") from e

    try:
        params = Hyperparams(**raw.get("gbdt", {}))
    except TypeError as e:
        raise ConfigError(f"bad gbdt config: {e}") from e

    ablations = dict(raw.get("ablations", {}))
    for flag in ("no_demonstration", "no_grouping", "no_reflection"):
        if getattr(args, flag, False):
            ablations[flag] = True

    gateway = dict(raw.get("gateway", {}))
    scripted_path = getattr(args, "scripted", None)
    if scripted_path:
        policy = json.loads(Path(scripted_path).read_text(encoding="utf-8"))
        if "summarizer" in policy or "predictor" in policy:
            summarizer_policy = policy.get("summarizer")
            predictor_policy = policy.get("predictor")
        else:
            summarizer_policy = predictor_policy = policy
        if summarizer_policy:
            gateway["summarizer"] = {"client": "scripted", "policy": summarizer_policy}
        if predictor_policy:
            gateway["predictor"] = {"client": "scripted", "policy": predictor_policy}

    n_values = raw.get("n_values") or [plan.few_shot_n]
    if getattr(args, "n", None):
        n_values = list(_parse_int_list(args.n))
    shot_values = raw.get("shot_values") or [raw.get("shots", 16)]
    if getattr(args, "shots", None):
        shot_values = list(_parse_int_list(args.shots))

    return ExperimentConfig(
        dataset_path=str(dataset_path),
        task_path=str(task_path),
        delimiter=getattr(args, "delimiter", None) or raw.get("delimiter", ","),
        plan=plan,
        params=params,
        gateway=gateway,
        ablations=ablations,
        n_values=tuple(n_values),
        shot_values=tuple(shot_values),
        bias=bool(getattr(args, "bias", False) or raw.get("bias", False)),
        output_dir=str(getattr(args, "out", None) or raw.get("output_dir", "runs")),
    )


def _build_client(role_cfg: dict):
    kind = role_cfg.get("client", "scripted")
    if kind == "scripted":
        policy_cfg = role_cfg.get("policy")
        if policy_cfg is None:
            policy = ScriptedPolicy(mode="fixed_text", text=DEFAULT_SCRIPTED_SUMMARY)
        elif isinstance(policy_cfg, str):
            policy = ScriptedPolicy.from_file(policy_cfg)
        else:
            policy = ScriptedPolicy.from_dict(policy_cfg)
        return ScriptedClient(policy)
    if kind == "live":
        if "endpoint" not in role_cfg:
            raise ConfigError("live gateway config needs an 'endpoint'")
        return LiveClient(
            endpoint=role_cfg["endpoint"],
            api_key_env=role_cfg.get("api_key_env", "LLM_API_KEY"),
            max_retries=int(role_cfg.get("max_retries", 3)),
            backoff_seconds=float(role_cfg.get("backoff_seconds", 1.0)),
        )
    raise ConfigError(f"unknown gateway client kind {kind!r}")


def build_gateways(config: ExperimentConfig, ledger: UsageLedger):
    gw_cfg = config.gateway
    price_table = dict(gw_cfg.get("price_table", {}))
    cache_dir = gw_cfg.get("cache_dir")
    roles = {}
    models = {}
    for role in ("summarizer", "predictor"):
        role_cfg = dict(gw_cfg.get(role, {}))
        models[role] = role_cfg.get("model", f"scripted-{role}")
        if role_cfg.get("client", "scripted") == "scripted":
            price_table.setdefault(models[role], {"input": 0.0, "output": 0.0})
        client = _build_client(role_cfg)
        roles[role] = Gateway(client, ledger=ledger, price_table=price_table, cache_dir=cache_dir)
    return roles["summarizer"], roles["predictor"], models


def _load_inputs(config: ExperimentConfig) -> tuple[LabeledDataset, TaskSpec]:
    task = load_task_spec(config.task_path)
    hints = schema_hints_from_task(task)
    dataset = load_csv(config.dataset_path, hints, delimiter=config.delimiter)
    return dataset, task


def cmd_validate(config: ExperimentConfig) -> int:
    issues: list[str] = []
    dataset = task = None
    try:
        task = load_task_spec(config.task_path)
    except (TabDistillError, OSError) as e:
        issues.append(f"task: {e}")
    if task is not None:
        try:
            dataset = load_csv(config.dataset_path, schema_hints_from_task(task), config.delimiter)
        except (TabDistillError, OSError) as e:
            issues.append(f"dataset: {e}")
    if dataset is not None and task is not None:
        schema = dataset.schema
        if tuple(task.answer_choices) != schema.answer_choices:
            issues.append(
                f"answer choices {list(task.answer_choices)} do not match "
                f"verbalized class labels {list(schema.answer_choices)}"
            )
        if len(dataset) < config.plan.fold_count:
            issues.append(f"{len(dataset)} rows cannot support {config.plan.fold_count} folds")
        counts = dataset.class_counts()
        dist = "/".join(f"{100.0 * c / len(dataset):.1f}" for c in counts)
        print(
            f"{len(dataset)} rows, {dataset.n_features} features, classes {dist}"
        )
    for issue in issues:
        print(f"invalid: {issue}", file=sys.stderr)
    return EXIT_VALIDATION if issues else EXIT_OK


def cmd_distill(config: ExperimentConfig) -> int:
    dataset, task = _load_inputs(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ledger = UsageLedger()
    summarizer, predictor, models = build_gateways(config, ledger)
    plan = config.plan
    train_full, _test = split_train_test(dataset, plan, fold=0)
    train = sample_few_shot(train_full, min(plan.few_shot_n, len(train_full)), [plan.seed, 0, 2])
    shots = config.shot_values[0]
    package = distill(
        train,
        task,
        config.params,
        summarizer,
        predictor,
        n_e=min(shots, len(train)),
        seed=plan.seed,
        summarizer_model=models["summarizer"],
        predictor_model=models["predictor"],
        no_grouping=config.ablations.get("no_grouping", False),
        no_reflection=config.ablations.get("no_reflection", False),
        no_demonstration=config.ablations.get("no_demonstration", False),
        workdir=out,
    )
    (out / "ledger.json").write_text(
        json.dumps(ledger.to_json(), indent=2, sort_keys=True), encoding="utf-8"
    )
    print(f"package written to {out / 'package.json'}")
    print(f"ledger written to {out / 'ledger.json'}")
    return EXIT_OK


def cmd_evaluate(config: ExperimentConfig) -> int:
    dataset, task = _load_inputs(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ledger = UsageLedger()
    summarizer, predictor, models = build_gateways(config, ledger)
    dataset_name = Path(config.dataset_path).stem
    mode_flags = [k for k, v in sorted(config.ablations.items()) if v]
    mode = "+".join(f"-{f.removeprefix('no_')}" for f in mode_flags) or "full"

    rows: list[ResultRow] = []
    all_failures: list[str] = []
    for n in config.n_values:
        for shots in config.shot_values:
            plan = replace(config.plan, few_shot_n=n)
            cost_before = ledger.total_cost_usd
            cv = cross_validate(
                dataset,
                task,
                plan,
                config.params,
                summarizer,
                predictor,
                shots=shots,
                summarizer_model=models["summarizer"],
                predictor_model=models["predictor"],
                ablations=config.ablations,
                workdir=out / f"n{n}_shots{shots}",
            )
            all_failures.extend(cv.failures)
            per_class: dict[str, float] = {}
            nar = 0.0
            if cv.folds:
                labels = list(cv.folds[0].per_class_f1)
                per_class = {
                    c: sum(f.per_class_f1[c] for f in cv.folds) / len(cv.folds) for c in labels
                }
                nar = sum(f.no_answer_rate for f in cv.folds) / len(cv.folds)
            rows.append(
                ResultRow(
                    dataset=dataset_name,
                    n=n,
                    shots=shots,
                    mode=mode,
                    macro_f1=cv.mean_macro_f1,
                    per_class_f1=per_class,
                    no_answer_rate=nar,
                    cost_usd=ledger.total_cost_usd - cost_before,
                )
            )

    echo = {
        "dataset": config.dataset_path,
        "task": config.task_path,
        "seed": config.plan.seed,
        "folds": config.plan.fold_count,
        "ablations": config.ablations,
        "models": models,
    }
    for fmt, name in (("table", "report.txt"), ("json", "report.json"), ("csv", "report.csv")):
        emit_report(rows, fmt, out / name, config_echo=echo)

    if config.bias:
        bias_rows: list[ResultRow] = []
        for n in config.n_values:
            plan = replace(config.plan, few_shot_n=n)
            report = bias_analysis(
                dataset,
                task,
                plan,
                config.params,
                summarizer,
                predictor,
                shots=config.shot_values[0],
                summarizer_model=models["summarizer"],
                predictor_model=models["predictor"],
                ablations=config.ablations,
            )
            first = report.pairs[0]
            bias_rows.append(
                ResultRow(
                    dataset=dataset_name, n=n, shots=config.shot_values[0],
                    mode="unshuffled", macro_f1=report.mean_plain_macro,
                    per_class_f1={
                        c: sum(p.plain_per_class[c] for p in report.pairs) / len(report.pairs)
                        for c in first.plain_per_class
                    },
                )
            )
            bias_rows.append(
                ResultRow(
                    dataset=dataset_name, n=n, shots=config.shot_values[0],
                    mode="shuffled", macro_f1=report.mean_shuffled_macro,
                    per_class_f1={
                        c: sum(p.shuffled_per_class[c] for p in report.pairs) / len(report.pairs)
                        for c in first.shuffled_per_class
                    },
                )
            )
        for fmt, name in (("table", "bias.txt"), ("json", "bias.json"), ("csv", "bias.csv")):
            emit_report(bias_rows, fmt, out / name, config_echo=echo)

    (out / "ledger.json").write_text(
        json.dumps(ledger.to_json(), indent=2, sort_keys=True), encoding="utf-8"
    )
    for failure in all_failures:
        print(f"warning: {failure}", file=sys.stderr)
    print(f"reports written to {out}")
    if rows and all(not row.per_class_f1 for row in rows):
        print("error: every fold failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="experiment config file (JSON)")
    p.add_argument("--dataset", help="CSV dataset path (overrides config)")
    p.add_argument("--task", help="task metadata path (overrides config)")
    p.add_argument("--delimiter", help="dataset field delimiter (default comma)")
    p.add_argument("--n", help="comma-separated training sizes, e.g. 16,32,64,128")
    p.add_argument("--shots", help="comma-separated demonstration counts")
    p.add_argument("--folds", type=int, help="fold count override")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--bias", action="store_true", help="also run the column-shuffle bias study")
    p.add_argument("--no-demonstration", dest="no_demonstration", action="store_true")
    p.add_argument("--no-grouping", dest="no_grouping", action="store_true")
    p.add_argument("--no-reflection", dest="no_reflection", action="store_true")
    p.add_argument("--scripted", help="scripted policy file for offline gateways")
    p.add_argument("--out", help="output directory override")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="tabdistill",
        description="Insight distillation pipeline for few-shot tabular classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("validate", cmd_validate), ("distill", cmd_distill), ("evaluate", cmd_evaluate)):
        p = sub.add_parser(name)
        _add_common_flags(p)
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args)
    except TabDistillError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        return args.fn(config)
    except TabDistillError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())

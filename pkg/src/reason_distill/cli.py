"""Command-line entry point.

Subcommands mirror the pipeline stages: ``gen-data`` initializes an
experiment directory, ``bootstrap`` runs round 0, ``exam``/``collect``/
``train``/``eval``/``round`` operate on a single round, ``run`` drives the
whole loop to its stopping point, ``sweep-lambda`` retrains across
contrastive weights, and ``report`` recomputes headline numbers from raw
artifacts.

Exit codes: 0 success, 2 configuration problems, 3 data problems, 4 teacher
transport failures, 5 broken internal contracts.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    ReasonDistillError,
    TeacherTransportError,
)

EXIT_CODES = {
    ConfigError: 2,
    DataError: 3,
    TeacherTransportError: 4,
    ContractError: 5,
}


def _exit_code(error: ReasonDistillError) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(error, cls):
            return code
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reason-distill",
        description="Multi-round reasoning distillation for a micro language model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, *, config=False, experiment=True, round_arg=False):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", type=Path, help="TOML experiment description")
            p.add_argument(
                "--profile",
                choices=("desk", "paper"),
                help="override the configuration profile",
            )
            p.add_argument("--seed", type=int, help="override the experiment seed")
        if experiment:
            p.add_argument(
                "--experiment-dir", type=Path, required=True, help="experiment directory"
            )
        if round_arg:
            p.add_argument("--round", type=int, required=True, help="round number")
        return p

    add("gen-data", "initialize an experiment directory and generate its dataset",
        config=True)
    add("bootstrap", "round 0: initialize, evaluate, and bootstrap the training pool")
    add("exam", "examine a round's starting checkpoint and record its mistakes",
        round_arg=True).add_argument(
        "--seed", type=int, help="override the derived exam seed for this invocation"
    )
    collect_p = add("collect", "send a round's mistakes to the teacher", round_arg=True)
    collect_p.add_argument(
        "--no-feedback",
        action="store_true",
        help="ablation: hide the student's wrong attempts from the teacher",
    )
    add("train", "complete a round whose exam artifact already exists", round_arg=True)
    add("eval", "greedy-evaluate a completed round's checkpoint", round_arg=True)
    add("round", "run one full round: exam, collection, training, evaluation",
        round_arg=True)
    add("run", "run or resume the experiment until the stop policy fires", config=True)
    sweep_p = add("sweep-lambda", "retrain across contrastive weights from round-1 state")
    sweep_p.add_argument(
        "--lambda",
        dest="lambdas",
        type=float,
        action="append",
        help="contrastive weight to include (repeatable; 0.0 is always added)",
    )
    add("report", "recompute accuracy and error rates from per-sample artifacts")
    return parser


def _load_cli_config(args) -> ExperimentConfig | None:
    if args.config is None:
        return None
    config = load_config(args.config, profile=args.profile)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _cmd_gen_data(args) -> int:
    from .rounds import init_experiment

    config = _load_cli_config(args)
    if config is None:
        raise ConfigError("gen-data requires --config")
    exp = init_experiment(args.experiment_dir, config)
    print(
        f"initialized {exp.root} with {len(exp.store.samples)} train / "
        f"{len(exp.test_samples)} test questions "
        f"(vocabulary {exp.tokenizer.vocab_size} tokens)"
    )
    return 0


def _cmd_bootstrap(args) -> int:
    from .rounds import ExperimentLock, load_experiment, run_round_zero

    exp = load_experiment(args.experiment_dir)
    if exp.round_complete(0):
        print("round 0 is already complete")
        return 0
    with ExperimentLock(exp.root):
        metrics = run_round_zero(exp)
    print(
        f"round 0: test accuracy {metrics['test_accuracy']:.2f}%, "
        f"training pool {metrics['train_pool']} rationales"
    )
    return 0


def _cmd_exam(args) -> int:
    from .exam import run_exam
    from .rounds import _dump_json, load_experiment
    from .seeding import stable_seed

    exp = load_experiment(args.experiment_dir)
    k = args.round
    model = exp.load_model(k - 1)
    seed = args.seed if args.seed is not None else stable_seed(exp.config.exam_seed, k)
    report = run_exam(
        model, exp.store.samples, exp.tokenizer, exp.demos, round_index=k, seed=seed
    )
    rd = exp.round_dir(k)
    rd.mkdir(parents=True, exist_ok=True)
    _dump_json(rd / "exam_report.json", report.to_json())
    print(
        f"round {k} exam: error rate {report.error_rate:.2f}% over "
        f"{len(report.per_question)} questions, "
        f"{len(report.wrong_records)} wrong rationales harvested"
    )
    return 0


def _cmd_collect(args) -> int:
    from .rounds import _dump_json, _feedback_targets, load_experiment
    from .exam import ExamReport, QuestionResult
    from .teacher import collect

    exp = load_experiment(args.experiment_dir)
    k = args.round
    if k < 2:
        raise ConfigError(
            "collection with feedback starts at round 2; round 0's bootstrap covers earlier data"
        )
    exam_path = exp.round_dir(k) / "exam_report.json"
    if not exam_path.exists():
        raise DataError(f"run the exam first: missing {exam_path}")
    blob = json.loads(exam_path.read_text(encoding="utf-8"))
    report = ExamReport(round_index=blob["round_index"], seed=blob["seed"])
    for q in blob["per_question"]:
        report.per_question.append(
            QuestionResult(
                sample_id=q["sample_id"],
                greedy_text=q["greedy_text"],
                greedy_extracted=q["greedy_extracted"],
                greedy_correct=q["greedy_correct"],
                wrong_texts=tuple(q["wrong_texts"]),
                n_sampled=q["n_sampled"],
            )
        )
    feedback = not args.no_feedback
    result = collect(
        exp.store,
        _feedback_targets(report),
        exp.teacher_backend(),
        exp.response_cache(),
        round_index=k,
        feedback=feedback,
    )
    _dump_json(exp.round_dir(k) / "collect_report.json", result.to_json())
    print(
        f"round {k} collection ({'with' if feedback else 'without'} feedback): "
        f"{result.appended.added_correct} new rationales, "
        f"{result.backend_calls} backend calls"
    )
    return 0


def _cmd_round(args, *, require_exam_artifact: bool = False) -> int:
    from .rounds import ExperimentLock, load_experiment, run_round

    exp = load_experiment(args.experiment_dir)
    k = args.round
    if require_exam_artifact and not (exp.round_dir(k) / "exam_report.json").exists():
        raise DataError(
            f"train expects the round {k} exam artifact; run the exam subcommand first"
        )
    with ExperimentLock(exp.root):
        metrics = run_round(exp, k)
    print(
        f"round {k}: exam error rate {metrics['error_rate_before']:.2f}%, "
        f"train accuracy {metrics['train_accuracy']:.2f}%, "
        f"test accuracy {metrics['test_accuracy']:.2f}%"
    )
    return 0


def _cmd_eval(args) -> int:
    from .metrics import evaluate
    from .rounds import load_experiment

    exp = load_experiment(args.experiment_dir)
    model = exp.load_model(args.round)
    train_report = evaluate(model, exp.store.samples, exp.tokenizer, exp.demos, split="train")
    test_report = evaluate(model, exp.test_samples, exp.tokenizer, exp.demos, split="test")
    print(
        f"round {args.round}: train accuracy {train_report.accuracy:.2f}%, "
        f"test accuracy {test_report.accuracy:.2f}%"
    )
    return 0


def _cmd_run(args) -> int:
    from .rounds import build_report, format_report, run_experiment

    config = _load_cli_config(args)
    summary = run_experiment(args.experiment_dir, config)
    print(format_report(build_report(args.experiment_dir)))
    print(f"stopped: {summary['stop_reason']}")
    return 0


def _cmd_sweep(args) -> int:
    from .metrics import DEFAULT_SWEEP, sweep_lambda
    from .rounds import ExperimentLock, load_experiment
    from .exam import merge_exam, run_exam
    from .seeding import stable_seed

    exp = load_experiment(args.experiment_dir)
    if not exp.round_complete(0):
        raise DataError("sweep needs the bootstrapped pool; run bootstrap first")
    lambdas = tuple(args.lambdas) if args.lambdas else DEFAULT_SWEEP
    with ExperimentLock(exp.root):
        model = exp.load_model(0)
        exam_report = run_exam(
            model,
            exp.store.samples,
            exp.tokenizer,
            exp.demos,
            round_index=1,
            seed=stable_seed(exp.config.exam_seed, 1),
        )
        merge_exam(exp.store, exam_report)
        report = sweep_lambda(
            exp.model_config(),
            exp.store,
            exp.tokenizer,
            exp.demos,
            exp.test_samples,
            exp.config.optimizer,
            lambdas=lambdas,
            seed=stable_seed(exp.config.seed, "train", 1),
            loss_config=exp.config.loss,
        )
        report.write_csv(exp.root / "lambda_sweep.csv")
    print(f"{'lambda':>7}  {'accuracy':>8}  {'final_lm':>9}  {'pref':>6}  {'dist':>8}")
    for r in report.rows:
        print(
            f"{r.lambda_weight:>7.2f}  {r.accuracy:>8.2f}  {r.final_lm:>9.4f}  "
            f"{r.preference:>6.1f}  {r.centroid_distance:>8.3f}"
        )
    return 0


def _cmd_report(args) -> int:
    from .rounds import build_report, format_report

    report = build_report(args.experiment_dir)
    print(format_report(report))
    print("all stored metrics match the per-sample artifacts")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-data": _cmd_gen_data,
        "bootstrap": _cmd_bootstrap,
        "exam": _cmd_exam,
        "collect": _cmd_collect,
        "train": lambda a: _cmd_round(a, require_exam_artifact=True),
        "eval": _cmd_eval,
        "round": _cmd_round,
        "run": _cmd_run,
        "sweep-lambda": _cmd_sweep,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ReasonDistillError as error:
        print(f"error: {error}", file=sys.stderr)
        return _exit_code(error)


if __name__ == "__main__":
    sys.exit(main())

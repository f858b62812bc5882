"""Round-based experiment orchestration.

An experiment directory is laid out as::

    <root>/
      config.resolved.json
      lock                      (present only while a process runs)
      data/                     samples, demos, tokenizer, reference texts,
                                and the persistent rationale store
      cache/                    teacher response cache
      rounds/round_<k>/         per-round artifacts

Round 0 initializes the student, evaluates it untouched, and bootstraps the
training pool by querying the teacher on every training question without any
student attempt.  Round 1 examines the (still untrained) student to harvest
wrong reasoning for the contrastive term, then trains.  Later rounds examine
the newest checkpoint, send its mistakes back to the teacher together with the
wrong attempts, fold the corrections in, and train again from the previous
checkpoint.  A round is complete exactly when its ``metrics.json`` exists; the
persistent store is rewritten only at that moment, so an interrupted round
replays from its start deterministically.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig, StopPolicy, RESOLVED_NAME
from .corpus import (
    DatasetStore,
    DemonstrationSet,
    load_rationales,
    load_samples,
    save_rationales,
    save_samples,
)
from .errors import ConfigError, ContractError, DataError
from .exam import ExamReport, merge_exam, run_exam
from .metrics import (
    evaluate,
    project_paths,
    reflection_diagnostics,
    write_projection_csv,
)
from .model import ModelConfig, ModelState, init_model, load_checkpoint, save_checkpoint
from .seeding import stable_seed
from .synthetic import generate_synthetic
from .tailor import train
from .teacher import (
    CollectTarget,
    HttpChatBackend,
    OracleTeacher,
    ResponseCache,
    collect,
)
from .tokenizer import Tokenizer

LOCK_NAME = "lock"
METRICS_NAME = "metrics.json"


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump_json(path: Path, payload: dict) -> None:
    _write_atomic(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# experiment state


@dataclass
class Experiment:
    root: Path
    config: ExperimentConfig
    tokenizer: Tokenizer
    demos: DemonstrationSet
    store: DatasetStore
    test_samples: list
    bank: dict[str, list[str]]

    @property
    def data_dir(self) -> Path:
        return self.root / "data"

    @property
    def cache_dir(self) -> Path:
        return self.root / "cache"

    def round_dir(self, k: int) -> Path:
        return self.root / "rounds" / f"round_{k}"

    def checkpoint_path(self, k: int) -> Path:
        return self.round_dir(k) / "checkpoint.bin"

    def round_complete(self, k: int) -> bool:
        return (self.round_dir(k) / METRICS_NAME).exists()

    def last_complete_round(self) -> int | None:
        k = None
        index = 0
        while self.round_complete(index):
            k = index
            index += 1
        return k

    def model_config(self) -> ModelConfig:
        m = self.config.model
        return ModelConfig(
            vocab_size=self.tokenizer.vocab_size,
            context_length=m.context_length,
            num_layers=m.num_layers,
            num_heads=m.num_heads,
            hidden_dim=m.hidden_dim,
            seed=m.seed,
        )

    def load_model(self, k: int) -> ModelState:
        path = self.checkpoint_path(k)
        if not path.exists():
            raise DataError(f"no checkpoint for round {k} at {path}")
        model = load_checkpoint(path.read_bytes())
        if model.config != self.model_config():
            raise ConfigError(
                f"checkpoint for round {k} was written under a different model configuration"
            )
        return model

    def save_model(self, model: ModelState, k: int) -> None:
        self.checkpoint_path(k).write_bytes(save_checkpoint(model))

    def teacher_backend(self):
        t = self.config.teacher
        if t.backend == "oracle":
            return OracleTeacher(
                samples=self.store.samples,
                bank=self.bank,
                success_probability=t.success_probability,
                feedback_bonus=t.feedback_bonus,
                seed=t.seed,
            )
        base_url = os.environ.get(t.base_url_env)
        if not base_url:
            raise ConfigError(
                f"teacher backend is http but {t.base_url_env} is not set"
            )
        return HttpChatBackend(base_url=base_url, model=t.model, api_key_env=t.api_key_env)

    def response_cache(self) -> ResponseCache:
        return ResponseCache(self.cache_dir)

    def persist_store(self) -> None:
        save_rationales(
            list(self.store.train_rationales) + list(self.store.neg_rationales),
            self.data_dir / "rationales.jsonl",
        )


# ---------------------------------------------------------------------------
# initialization and loading


def init_experiment(root: str | Path, config: ExperimentConfig) -> Experiment:
    """Create the directory layout and generate the dataset."""
    root = Path(root)
    if (root / RESOLVED_NAME).exists():
        raise ConfigError(f"experiment already initialized at {root}")
    root.mkdir(parents=True, exist_ok=True)
    (root / "data").mkdir(exist_ok=True)
    (root / "cache").mkdir(exist_ok=True)
    (root / "rounds").mkdir(exist_ok=True)
    config.save_resolved(root)

    from .synthetic import default_tokenizer

    data = generate_synthetic(config.data)
    tokenizer = default_tokenizer()
    save_samples(data.train, root / "data" / "samples.train.jsonl")
    save_samples(data.test, root / "data" / "samples.test.jsonl")
    data.demos.save(root / "data" / "demos.json")
    tokenizer.save(root / "data" / "tokenizer.json")
    _dump_json(root / "data" / "bank.json", data.bank)
    save_rationales([], root / "data" / "rationales.jsonl")
    return Experiment(
        root=root,
        config=config,
        tokenizer=tokenizer,
        demos=data.demos,
        store=DatasetStore(samples=data.train),
        test_samples=data.test,
        bank=data.bank,
    )


def load_experiment(root: str | Path) -> Experiment:
    root = Path(root)
    resolved = root / RESOLVED_NAME
    if not resolved.exists():
        raise ConfigError(f"no experiment at {root} (missing {RESOLVED_NAME})")
    config = ExperimentConfig.from_resolved(resolved)
    tokenizer = Tokenizer.load(root / "data" / "tokenizer.json")
    train_samples = load_samples(root / "data" / "samples.train.jsonl")
    test_samples = load_samples(root / "data" / "samples.test.jsonl")
    demos = DemonstrationSet.load(root / "data" / "demos.json")
    try:
        bank = json.loads((root / "data" / "bank.json").read_text(encoding="utf-8"))
    except ValueError as exc:
        raise DataError(f"unreadable reference bank: {exc}") from exc
    records = load_rationales(root / "data" / "rationales.jsonl")
    store = DatasetStore(samples=train_samples)
    store.append_rationales(records)
    return Experiment(
        root=root,
        config=config,
        tokenizer=tokenizer,
        demos=demos,
        store=store,
        test_samples=test_samples,
        bank=bank,
    )


# ---------------------------------------------------------------------------
# locking


class ExperimentLock:
    """Exclusive-create lock file guarding an experiment directory."""

    def __init__(self, root: Path):
        self.path = Path(root) / LOCK_NAME
        self._held = False

    def __enter__(self) -> "ExperimentLock":
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ContractError(
                f"experiment is locked by another run (remove {self.path} if stale)"
            ) from None
        with os.fdopen(fd, "w") as handle:
            handle.write(f"pid={os.getpid()}\n")
        self._held = True
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._held:
            try:
                os.unlink(self.path)
            except FileNotFoundError:
                pass
            self._held = False


# ---------------------------------------------------------------------------
# stages


def _eval_both(exp: Experiment, model: ModelState) -> tuple[dict, float, float]:
    train_report = evaluate(model, exp.store.samples, exp.tokenizer, exp.demos, split="train")
    test_report = evaluate(model, exp.test_samples, exp.tokenizer, exp.demos, split="test")
    blob = {"train": train_report.to_json(), "test": test_report.to_json()}
    return blob, train_report.accuracy, test_report.accuracy


def run_round_zero(exp: Experiment) -> dict:
    """Initialize the student, measure it untouched, and bootstrap the pool."""
    rd = exp.round_dir(0)
    rd.mkdir(parents=True, exist_ok=True)
    model = init_model(exp.model_config())
    exp.save_model(model, 0)

    eval_blob, train_acc, test_acc = _eval_both(exp, model)
    _dump_json(rd / "eval_report.json", eval_blob)

    targets = [CollectTarget(s.id) for s in exp.store.samples]
    report = collect(
        exp.store,
        targets,
        exp.teacher_backend(),
        exp.response_cache(),
        round_index=0,
        feedback=False,
    )
    _dump_json(rd / "bootstrap_report.json", report.to_json())
    exp.persist_store()

    metrics = {
        "round_index": 0,
        "config_hash": exp.config.hash(),
        "train_accuracy": train_acc,
        "test_accuracy": test_acc,
        "error_rate_after": 100.0 - train_acc,
        "train_pool": len(exp.store.train_rationales),
        "neg_pool": len(exp.store.neg_rationales),
        "new_train_records": report.appended.added_correct,
        "new_neg_records": 0,
        "checkpoint_digest": file_digest(exp.checkpoint_path(0)),
    }
    _dump_json(rd / METRICS_NAME, metrics)
    return metrics


def _feedback_targets(report: ExamReport) -> list[CollectTarget]:
    """One target per greedy-wrong question, carrying the student's attempt."""
    targets = []
    for q in report.per_question:
        if q.greedy_correct:
            continue
        wrong = q.greedy_text if q.greedy_text.strip() else None
        if wrong is None and q.wrong_texts:
            wrong = q.wrong_texts[0]
        if wrong is None:
            continue
        targets.append(CollectTarget(q.sample_id, wrong_text=wrong))
    return targets


def _round_learning_rate(exp: Experiment, k: int) -> float:
    base = exp.config.optimizer.learning_rate
    return base if k <= 1 else base * exp.config.later_round_lr_scale


def run_round(exp: Experiment, k: int) -> dict:
    """Exam, collection (rounds >= 2), training, and evaluation for round k."""
    from dataclasses import replace

    if k < 1:
        raise ContractError("rounds are numbered from 1; round 0 is the bootstrap")
    if not exp.round_complete(k - 1):
        raise DataError(f"round {k - 1} has not completed; cannot run round {k}")
    rd = exp.round_dir(k)
    rd.mkdir(parents=True, exist_ok=True)
    model = exp.load_model(k - 1)

    exam_report = run_exam(
        model,
        exp.store.samples,
        exp.tokenizer,
        exp.demos,
        round_index=k,
        seed=stable_seed(exp.config.exam_seed, k),
    )
    _dump_json(rd / "exam_report.json", exam_report.to_json())
    merge_exam(exp.store, exam_report)

    new_train_records = 0
    if k >= 2:
        report = collect(
            exp.store,
            _feedback_targets(exam_report),
            exp.teacher_backend(),
            exp.response_cache(),
            round_index=k,
            feedback=True,
        )
        _dump_json(rd / "collect_report.json", report.to_json())
        new_train_records = report.appended.added_correct

    save_rationales(list(exp.store.train_rationales), rd / "train.jsonl")
    save_rationales(list(exp.store.neg_rationales), rd / "neg.jsonl")

    opt = replace(exp.config.optimizer, learning_rate=_round_learning_rate(exp, k))
    train_report = train(
        model,
        exp.store,
        exp.tokenizer,
        exp.demos,
        exp.config.loss,
        opt,
        seed=stable_seed(exp.config.seed, "train", k),
    )
    train_report.write_csv(rd / "losses.csv")
    exp.save_model(model, k)

    eval_blob, train_acc, test_acc = _eval_both(exp, model)
    _dump_json(rd / "eval_report.json", eval_blob)

    reflection = None
    if exp.store.train_rationales and exp.store.neg_rationales:
        full = reflection_diagnostics(model, exp.store, exp.tokenizer)
        reflection = full.to_json()
        _dump_json(rd / "diagnostics.json", full.to_diagnostics_json())
        write_projection_csv(
            rd / "projection.csv", project_paths(model, exp.store, exp.tokenizer)
        )

    exp.persist_store()
    metrics = {
        "round_index": k,
        "config_hash": exp.config.hash(),
        "error_rate_before": exam_report.error_rate,
        "train_accuracy": train_acc,
        "test_accuracy": test_acc,
        "error_rate_after": 100.0 - train_acc,
        "train_pool": len(exp.store.train_rationales),
        "neg_pool": len(exp.store.neg_rationales),
        "new_train_records": new_train_records,
        "new_neg_records": sum(
            1 for r in exp.store.neg_rationales if r.round_index == k
        ),
        "final_lm_loss": train_report.final_lm,
        "final_cl_loss": train_report.final_cl,
        "reflection": reflection,
        "checkpoint_digest": file_digest(exp.checkpoint_path(k)),
    }
    _dump_json(rd / METRICS_NAME, metrics)
    return metrics


# ---------------------------------------------------------------------------
# stop policy


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: str | None = None


def should_stop(policy: StopPolicy, history: list[dict]) -> StopDecision:
    """Decide after the latest round whether another round is worthwhile.

    ``history`` holds the metrics of every completed round, round 0 first.
    """
    if not history or history[-1]["round_index"] < 1:
        return StopDecision(False)
    last = history[-1]
    k = last["round_index"]
    if k >= policy.max_rounds:
        return StopDecision(True, "max_rounds")
    if last["error_rate_after"] == 0.0 and last.get("error_rate_before") == 0.0:
        return StopDecision(True, "no_mistakes")
    gain = last["test_accuracy"] - history[-2]["test_accuracy"]
    if gain < policy.min_accuracy_gain:
        return StopDecision(True, "accuracy_plateau")
    if k >= 2 and last["new_train_records"] < policy.min_new_data:
        return StopDecision(True, "no_new_data")
    return StopDecision(False)


# ---------------------------------------------------------------------------
# the full loop


def run_experiment(root: str | Path, config: ExperimentConfig | None = None) -> dict:
    """Run (or resume) an experiment to its stopping point.

    Returns the summary written to ``summary.json``: per-round metrics plus
    the stop reason.  Resuming replays any incomplete round from its start;
    completed rounds are never touched.
    """
    root = Path(root)
    if config is not None and not (root / RESOLVED_NAME).exists():
        exp = init_experiment(root, config)
    else:
        exp = load_experiment(root)
        if config is not None and config.hash() != exp.config.hash():
            raise ConfigError(
                "experiment directory was initialized with a different configuration"
            )

    with ExperimentLock(exp.root):
        history: list[dict] = []
        last = exp.last_complete_round()
        for k in range((last + 1) if last is not None else 0):
            history.append(
                json.loads((exp.round_dir(k) / METRICS_NAME).read_text(encoding="utf-8"))
            )
        if not history:
            history.append(run_round_zero(exp))
        decision = should_stop(exp.config.stop, history)
        while not decision.stop:
            k = history[-1]["round_index"] + 1
            history.append(run_round(exp, k))
            decision = should_stop(exp.config.stop, history)
        summary = {
            "name": exp.config.name,
            "config_hash": exp.config.hash(),
            "stop_reason": decision.reason,
            "rounds": history,
        }
        _dump_json(exp.root / "summary.json", summary)
        return summary


# ---------------------------------------------------------------------------
# reporting


def _recompute_eval_accuracy(blob: dict) -> float:
    per_sample = blob["per_sample"]
    if not per_sample:
        raise DataError("evaluation artifact has no per-sample entries")
    return 100.0 * sum(bool(e["correct"]) for e in per_sample) / len(per_sample)


def _recompute_exam_error_rate(blob: dict) -> float:
    per_question = blob["per_question"]
    if not per_question:
        raise DataError("exam artifact has no per-question entries")
    wrong = sum(1 for q in per_question if not q["greedy_correct"])
    return 100.0 * wrong / len(per_question)


def build_report(root: str | Path) -> dict:
    """Recompute every round's headline numbers from raw per-sample artifacts.

    The recomputed values are cross-checked against each round's metrics file;
    any disagreement is an integrity failure.
    """
    exp = load_experiment(root)
    last = exp.last_complete_round()
    if last is None:
        raise DataError("no completed rounds to report on")
    rows = []
    previous_test = None
    for k in range(last + 1):
        rd = exp.round_dir(k)
        metrics = json.loads((rd / METRICS_NAME).read_text(encoding="utf-8"))
        eval_blob = json.loads((rd / "eval_report.json").read_text(encoding="utf-8"))
        train_acc = _recompute_eval_accuracy(eval_blob["train"])
        test_acc = _recompute_eval_accuracy(eval_blob["test"])
        row = {
            "round_index": k,
            "train_accuracy": train_acc,
            "test_accuracy": test_acc,
            "error_rate_after": 100.0 - train_acc,
            "test_gain": None if previous_test is None else test_acc - previous_test,
            "checkpoint_digest": file_digest(exp.checkpoint_path(k)),
        }
        if k >= 1:
            exam_blob = json.loads((rd / "exam_report.json").read_text(encoding="utf-8"))
            row["error_rate_before"] = _recompute_exam_error_rate(exam_blob)
        for key in ("train_accuracy", "test_accuracy", "error_rate_after", "error_rate_before"):
            if key in row and row[key] != metrics.get(key):
                raise ContractError(
                    f"round {k}: recomputed {key}={row[key]!r} disagrees with "
                    f"stored metrics value {metrics.get(key)!r}"
                )
        if row["checkpoint_digest"] != metrics.get("checkpoint_digest"):
            raise ContractError(f"round {k}: checkpoint digest mismatch")
        previous_test = test_acc
        rows.append(row)
    return {"rounds": rows, "config_hash": exp.config.hash()}


def format_report(report: dict) -> str:
    header = (
        f"{'round':>5}  {'exam ER':>8}  {'train acc':>9}  "
        f"{'test acc':>8}  {'ER after':>8}  {'test gain':>9}"
    )
    lines = [header, "-" * len(header)]
    for row in report["rounds"]:
        before = row.get("error_rate_before")
        gain = row.get("test_gain")
        lines.append(
            f"{row['round_index']:>5}  "
            f"{'-' if before is None else format(before, '.2f'):>8}  "
            f"{row['train_accuracy']:>9.2f}  "
            f"{row['test_accuracy']:>8.2f}  "
            f"{row['error_rate_after']:>8.2f}  "
            f"{'-' if gain is None else format(gain, '+.2f'):>9}"
        )
    return "\n".join(lines)

"""Evaluation and reflection diagnostics.

Beyond plain greedy accuracy, two quantities track whether the contrastive
term is doing its job of separating good from bad reasoning in representation
space: the distance between the centroids of correct and incorrect reasoning
paths, and how often the model prefers (assigns higher length-normalized
log-likelihood to) a correct rationale over a wrong one for the same question.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import (
    SEGMENT_ANSWER,
    SEGMENT_RATIONALE,
    DatasetStore,
    DemonstrationSet,
    Sample,
    encode_path,
    encode_prompt,
    judge,
)
from .errors import DataError
from .model import (
    GenerationConfig,
    ModelState,
    forward,
    path_representation,
    sequence_log_likelihood,
)
from .tokenizer import Tokenizer

SCORED_TAGS = {SEGMENT_RATIONALE, SEGMENT_ANSWER}


# ---------------------------------------------------------------------------
# greedy evaluation


@dataclass(frozen=True)
class EvalEntry:
    sample_id: str
    text: str
    extracted: str | None
    correct: bool

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "text": self.text,
            "extracted": self.extracted,
            "correct": self.correct,
        }


@dataclass
class EvalReport:
    split: str
    per_sample: list[EvalEntry] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        """Percentage of greedy decodes whose extracted answer is correct."""
        if not self.per_sample:
            raise DataError("evaluation covered no samples")
        return 100.0 * sum(e.correct for e in self.per_sample) / len(self.per_sample)

    def to_json(self) -> dict:
        return {
            "split": self.split,
            "accuracy": self.accuracy,
            "num_samples": len(self.per_sample),
            "per_sample": [e.to_json() for e in self.per_sample],
        }


def evaluate(
    model: ModelState,
    samples: Sequence[Sample],
    tokenizer: Tokenizer,
    demos: DemonstrationSet | None,
    *,
    split: str = "test",
    max_new_tokens: int = 128,
) -> EvalReport:
    """Greedy-decode every sample and score the extracted answers."""
    if not samples:
        raise DataError("evaluation needs at least one sample")
    report = EvalReport(split=split)
    cfg = GenerationConfig(
        mode="greedy", max_new_tokens=max_new_tokens, eos_id=tokenizer.eos_id
    )
    for sample in sorted(samples, key=lambda s: s.id):
        prompt = encode_prompt(tokenizer, demos, sample)
        sequence = model.generate(prompt, cfg)[0]
        text = tokenizer.decode(sequence.ids[prompt.ids.shape[0] :])
        if text.strip():
            record = judge(text, sample, source="student", round_index=0)
            entry = EvalEntry(sample.id, text, record.extracted_answer, record.correct)
        else:
            entry = EvalEntry(sample.id, text, None, False)
        report.per_sample.append(entry)
    return report


# ---------------------------------------------------------------------------
# reflection diagnostics


@dataclass(frozen=True)
class PairRatio:
    """Per-pair likelihood ratio of a correct rationale over a wrong one."""

    sample_id: str
    log_ratio: float

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "log_likelihood_ratio": self.log_ratio,
            "likelihood_ratio": float(np.exp(self.log_ratio)),
        }


@dataclass(frozen=True)
class ReflectionReport:
    centroid_distance: float
    preference: float
    num_correct_paths: int
    num_wrong_paths: int
    num_pairs: int
    mean_log_likelihood_ratio: float
    pair_ratios: tuple[PairRatio, ...] = ()

    def to_json(self) -> dict:
        return {
            "centroid_distance": self.centroid_distance,
            "preference": self.preference,
            "num_correct_paths": self.num_correct_paths,
            "num_wrong_paths": self.num_wrong_paths,
            "num_pairs": self.num_pairs,
            "mean_log_likelihood_ratio": self.mean_log_likelihood_ratio,
        }

    def to_diagnostics_json(self) -> dict:
        """Full dump including every pair, for the diagnostics.json artifact."""
        out = self.to_json()
        out["pairs"] = [pair.to_json() for pair in self.pair_ratios]
        return out


def _path_vectors(
    model: ModelState, store: DatasetStore, tokenizer: Tokenizer, records
) -> list[np.ndarray]:
    vectors = []
    for record in records:
        seq = encode_path(tokenizer, store.sample(record.sample_id), record)
        out = forward(model, seq)
        vectors.append(path_representation(out))
    return vectors


def reflection_diagnostics(
    model: ModelState, store: DatasetStore, tokenizer: Tokenizer
) -> ReflectionReport:
    """Separation between correct and wrong reasoning under the current model.

    Centroid distance is the Euclidean distance between the mean reasoning-path
    representations of the two pools.  Preference is the percentage of
    same-question (correct, wrong) rationale pairs where the correct one gets
    the higher length-normalized log-likelihood; exact ties count half.  The
    raw per-pair log-likelihood ratios are kept on the report for inspection.
    """
    correct = list(store.train_rationales)
    wrong = list(store.neg_rationales)
    if not correct or not wrong:
        raise DataError("reflection diagnostics need both correct and wrong rationales")

    correct_vecs = _path_vectors(model, store, tokenizer, correct)
    wrong_vecs = _path_vectors(model, store, tokenizer, wrong)
    centroid_distance = float(
        np.linalg.norm(np.mean(correct_vecs, axis=0) - np.mean(wrong_vecs, axis=0))
    )

    scores: dict[int, float] = {}

    def _mean_ll(record) -> float:
        key = id(record)
        if key not in scores:
            seq = encode_path(tokenizer, store.sample(record.sample_id), record)
            scores[key] = sequence_log_likelihood(model, seq, SCORED_TAGS)[1]
        return scores[key]

    wins = 0.0
    ratios: list[PairRatio] = []
    by_sample: dict[str, list] = {}
    for record in wrong:
        by_sample.setdefault(record.sample_id, []).append(record)
    for good in correct:
        for bad in by_sample.get(good.sample_id, ()):
            good_ll = _mean_ll(good)
            bad_ll = _mean_ll(bad)
            if good_ll > bad_ll:
                wins += 1.0
            elif good_ll == bad_ll:
                wins += 0.5
            ratios.append(PairRatio(good.sample_id, good_ll - bad_ll))
    if not ratios:
        raise DataError("no question has both correct and wrong rationales")
    return ReflectionReport(
        centroid_distance=centroid_distance,
        preference=100.0 * wins / len(ratios),
        num_correct_paths=len(correct),
        num_wrong_paths=len(wrong),
        num_pairs=len(ratios),
        mean_log_likelihood_ratio=float(np.mean([p.log_ratio for p in ratios])),
        pair_ratios=tuple(ratios),
    )


# ---------------------------------------------------------------------------
# 2-D projection of reasoning paths


def project_2d(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centered PCA projection onto the top two principal components.

    Returns (points of shape (n, 2), components of shape (2, d)).  Each
    component's sign is fixed so its largest-magnitude loading is positive.
    Degenerate inputs (fewer than two vectors, or zero variance) yield zero
    coordinates for the undetermined directions.
    """
    data = np.asarray(vectors, dtype=np.float64)
    if data.ndim != 2:
        raise DataError("projection expects a 2-D array of row vectors")
    n, d = data.shape
    points = np.zeros((n, 2))
    components = np.zeros((2, d))
    if n < 2 or d < 1:
        warnings.warn("not enough vectors for a 2-D projection; returning zeros")
        return points, components
    centered = data - data.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    keep = min(2, vt.shape[0])
    for k in range(keep):
        if singular[k] <= 1e-12:
            warnings.warn("projection direction has no variance; returning zeros for it")
            continue
        component = vt[k]
        if component[np.argmax(np.abs(component))] < 0:
            component = -component
        components[k] = component
        points[:, k] = centered @ component
    return points, components


@dataclass(frozen=True)
class ProjectionRow:
    sample_id: str
    label: str
    x: float
    y: float


def project_paths(
    model: ModelState, store: DatasetStore, tokenizer: Tokenizer
) -> list[ProjectionRow]:
    """2-D PCA coordinates for every stored reasoning path.

    Correct-pool paths are labelled "correct", negative-pool ones "wrong"; the
    rows come out in store order so the export is deterministic.
    """
    records = [(r, "correct") for r in store.train_rationales]
    records += [(r, "wrong") for r in store.neg_rationales]
    if not records:
        raise DataError("no reasoning paths to project")
    vectors = np.array(
        _path_vectors(model, store, tokenizer, [r for r, _ in records])
    )
    points, _ = project_2d(vectors)
    return [
        ProjectionRow(record.sample_id, label, float(point[0]), float(point[1]))
        for (record, label), point in zip(records, points)
    ]


def write_projection_csv(path, rows: Sequence[ProjectionRow]) -> None:
    lines = ["sample_id,label,x,y"]
    for row in rows:
        lines.append(f"{row.sample_id},{row.label},{row.x!r},{row.y!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# weight sweep for the contrastive term


@dataclass(frozen=True)
class SweepRow:
    lambda_weight: float
    accuracy: float
    final_lm: float
    preference: float
    centroid_distance: float


@dataclass
class SweepReport:
    rows: list[SweepRow] = field(default_factory=list)

    def row(self, lambda_weight: float) -> SweepRow:
        for row in self.rows:
            if row.lambda_weight == lambda_weight:
                return row
        raise DataError(f"sweep has no row for lambda={lambda_weight}")

    def write_csv(self, path) -> None:
        lines = ["lambda,accuracy,final_lm,preference,centroid_distance"]
        for r in self.rows:
            lines.append(
                f"{r.lambda_weight!r},{r.accuracy!r},{r.final_lm!r},"
                f"{r.preference!r},{r.centroid_distance!r}"
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


DEFAULT_SWEEP = (0.0, 0.1, 0.25, 0.5, 1.0, 2.0)


def sweep_lambda(
    model_config,
    store: DatasetStore,
    tokenizer: Tokenizer,
    demos: DemonstrationSet | None,
    eval_samples: Sequence[Sample],
    opt_config,
    *,
    lambdas: Sequence[float] = DEFAULT_SWEEP,
    seed: int = 0,
    loss_config=None,
) -> SweepReport:
    """Retrain from the same initialization at each contrastive weight.

    Every run shares the data pools, initialization, and batch order, so rows
    differ only through the contrastive term.  A weight of 0.0 is always
    included as the no-contrast reference.
    """
    from dataclasses import replace

    from .model import init_model
    from .tailor import LossConfig, train

    values = list(dict.fromkeys(lambdas))
    if 0.0 not in values:
        values.insert(0, 0.0)
    base_loss = loss_config if loss_config is not None else LossConfig()
    report = SweepReport()
    for value in values:
        model = init_model(model_config)
        result = train(
            model,
            store,
            tokenizer,
            demos,
            replace(base_loss, lambda_weight=value),
            opt_config,
            seed=seed,
        )
        accuracy = evaluate(model, eval_samples, tokenizer, demos, split="sweep").accuracy
        reflection = reflection_diagnostics(model, store, tokenizer)
        report.rows.append(
            SweepRow(
                lambda_weight=value,
                accuracy=accuracy,
                final_lm=result.final_lm,
                preference=reflection.preference,
                centroid_distance=reflection.centroid_distance,
            )
        )
    return report

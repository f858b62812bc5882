"""Samples, rationales, dataset stores, and the chain-of-thought template.

The store keeps two disjoint pools per experiment: correct rationales (the
training pool) and incorrect ones (the negative pool used as contrastive
negatives). Appends deduplicate on (sample_id, normalized text) and cap how
many records one source may add per sample per round.

Answer extraction scans for the final "Answer:" marker and reads the first
valid answer token after it; numeric comparison is canonical, so "12.0"
equals "12".
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import (
    SEGMENT_ANSWER,
    SEGMENT_DEMO,
    SEGMENT_QUESTION,
    SEGMENT_RATIONALE,
    TokenSequence,
)
from .tokenizer import ANSWER_MARKER, Tokenizer

TASK_NUMERIC = "numeric"
TASK_MULTIPLE_CHOICE = "multiple_choice"
TASK_YES_NO = "yes_no"
TASK_TYPES = (TASK_NUMERIC, TASK_MULTIPLE_CHOICE, TASK_YES_NO)

SOURCE_STUDENT = "student"
SOURCE_TEACHER = "teacher"
SOURCES = (SOURCE_STUDENT, SOURCE_TEACHER)

_NUMERIC_RE = re.compile(r"[-+]?\d+(?:\.\d+)?")
_CHOICE_RE = re.compile(r"\(([a-eA-E])\)|(?<![A-Za-z])([a-eA-E])(?![A-Za-z])")
_YES_NO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


@dataclass(frozen=True)
class Sample:
    id: str
    question: str
    gold_answer: str
    task_type: str

    def __post_init__(self) -> None:
        if not self.id or not self.question.strip():
            raise DataError("sample id and question must be non-empty")
        if self.task_type not in TASK_TYPES:
            raise DataError(f"unknown task_type {self.task_type!r}")
        if canonical_answer(self.gold_answer, self.task_type) is None:
            raise DataError(
                f"gold answer {self.gold_answer!r} is not valid for task_type {self.task_type}"
            )


@dataclass(frozen=True)
class RationaleRecord:
    sample_id: str
    text: str
    extracted_answer: str | None
    correct: bool
    source: str
    round_index: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DataError("rationale text must be non-empty")
        if self.source not in SOURCES:
            raise DataError(f"unknown rationale source {self.source!r}")
        if self.round_index < 0:
            raise DataError("round_index must be >= 0")
        if self.correct and self.extracted_answer is None:
            raise DataError("a correct record must carry an extracted answer")


@dataclass
class DemonstrationSet:
    """Ordered (question, rationale, answer) exemplars prepended to prompts."""

    demos: list[tuple[str, str, str]]

    def __post_init__(self) -> None:
        cleaned = []
        for entry in self.demos:
            q, r, a = entry
            if not q.strip() or not r.strip() or not str(a).strip():
                raise DataError("demonstrations must have question, rationale, and answer")
            cleaned.append((q, r, str(a)))
        self.demos = cleaned

    def __len__(self) -> int:
        return len(self.demos)

    def __iter__(self):
        return iter(self.demos)

    def save(self, path: str | Path) -> None:
        payload = {"demos": [{"question": q, "rationale": r, "answer": a} for q, r, a in self.demos]}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DemonstrationSet":
        try:
            payload = json.loads(Path(path).read_text())
            demos = [(d["question"], d["rationale"], d["answer"]) for d in payload["demos"]]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise DataError(f"cannot load demonstrations from {path}: {exc}") from exc
        return cls(demos)


# ---------------------------------------------------------------------------
# answers


def canonical_answer(value: str, task_type: str) -> str | None:
    """Canonical form of an answer string, or None when it is not parseable."""
    value = value.strip()
    if not value:
        return None
    if task_type == TASK_NUMERIC:
        try:
            d = Decimal(value)
        except InvalidOperation:
            return None
        if d == d.to_integral_value():
            return str(int(d))
        return format(d.normalize(), "f")
    if task_type == TASK_MULTIPLE_CHOICE:
        letter = value.strip("() ").lower()
        return letter if letter in ("a", "b", "c", "d", "e") else None
    if task_type == TASK_YES_NO:
        lowered = value.lower()
        return lowered if lowered in ("yes", "no") else None
    raise DataError(f"unknown task_type {task_type!r}")


def canonical_equal(a: str | None, b: str | None, task_type: str) -> bool:
    if a is None or b is None:
        return False
    ca, cb = canonical_answer(a, task_type), canonical_answer(b, task_type)
    if ca is None or cb is None:
        return False
    if task_type == TASK_NUMERIC:
        return Fraction(ca) == Fraction(cb)
    return ca == cb


def extract_answer(text: str, task_type: str) -> str | None:
    """First valid answer token after the final "Answer:" marker, canonical."""
    pos = text.rfind(ANSWER_MARKER)
    if pos < 0:
        return None
    tail = text[pos + len(ANSWER_MARKER) :]
    if task_type == TASK_NUMERIC:
        m = _NUMERIC_RE.search(tail)
        return canonical_answer(m.group(0), task_type) if m else None
    if task_type == TASK_MULTIPLE_CHOICE:
        m = _CHOICE_RE.search(tail)
        return (m.group(1) or m.group(2)).lower() if m else None
    if task_type == TASK_YES_NO:
        m = _YES_NO_RE.search(tail)
        return m.group(1).lower() if m else None
    raise DataError(f"unknown task_type {task_type!r}")


def judge(text: str, sample: Sample, *, source: str, round_index: int) -> RationaleRecord:
    """Build a record for a generation; correct iff the extracted answer
    matches gold under canonical comparison."""
    extracted = extract_answer(text, sample.task_type)
    correct = canonical_equal(extracted, sample.gold_answer, sample.task_type)
    return RationaleRecord(
        sample_id=sample.id,
        text=text,
        extracted_answer=extracted,
        correct=correct,
        source=source,
        round_index=round_index,
    )


def split_answer(text: str) -> tuple[str, str | None]:
    """Split rationale text into (body, raw answer tail) at the final marker."""
    pos = text.rfind(ANSWER_MARKER)
    if pos < 0:
        return text.strip(), None
    return text[:pos].strip(), text[pos + len(ANSWER_MARKER) :].strip()


# ---------------------------------------------------------------------------
# chain-of-thought template


def _demo_blocks(demos: DemonstrationSet | None) -> str:
    if demos is None:
        return ""
    return "".join(
        f"Question: {q}\nReasoning: {r}\nAnswer: {a}\n\n" for q, r, a in demos
    )


def render_cot(demos: DemonstrationSet | None, sample: Sample, rationale: str | None = None) -> str:
    """The exam/training prompt template.

    Inference mode (no rationale): demo blocks then "Question: {x}\\nReasoning:".
    Training mode: the same, with the rationale body and the gold answer line.
    """
    prefix = _demo_blocks(demos)
    if rationale is None:
        return prefix + f"Question: {sample.question}\nReasoning:"
    return (
        prefix
        + f"Question: {sample.question}\nReasoning: {rationale}\nAnswer: {sample.gold_answer}"
    )


def _encode_tagged(tokenizer: Tokenizer, pieces: list[tuple[str, str]], *, eos_tag: str | None) -> TokenSequence:
    ids: list[int] = []
    tags: list[str] = []
    for text, tag in pieces:
        piece_ids = tokenizer.encode(text)
        ids.extend(piece_ids)
        tags.extend([tag] * len(piece_ids))
    if eos_tag is not None:
        ids.append(tokenizer.eos_id)
        tags.append(eos_tag)
    return TokenSequence(ids=np.asarray(ids, dtype=np.int64), tags=np.asarray(tags))


def encode_prompt(tokenizer: Tokenizer, demos: DemonstrationSet | None, sample: Sample) -> TokenSequence:
    """Tokenized inference prompt with demo/question tags."""
    pieces = []
    blocks = _demo_blocks(demos)
    if blocks:
        pieces.append((blocks, SEGMENT_DEMO))
    pieces.append((f"Question: {sample.question}\nReasoning:", SEGMENT_QUESTION))
    return _encode_tagged(tokenizer, pieces, eos_tag=None)


def encode_training_sequence(
    tokenizer: Tokenizer,
    demos: DemonstrationSet | None,
    sample: Sample,
    record: RationaleRecord,
) -> TokenSequence:
    """Tokenized [demos, question, rationale, answer, eos] training sequence."""
    body, _ = split_answer(record.text)
    if not body:
        raise DataError(f"record for {record.sample_id} has an empty rationale body")
    pieces = []
    blocks = _demo_blocks(demos)
    if blocks:
        pieces.append((blocks, SEGMENT_DEMO))
    pieces.append((f"Question: {sample.question}\nReasoning:", SEGMENT_QUESTION))
    pieces.append((body, SEGMENT_RATIONALE))
    pieces.append((f"\nAnswer: {sample.gold_answer}", SEGMENT_ANSWER))
    return _encode_tagged(tokenizer, pieces, eos_tag=SEGMENT_ANSWER)


def encode_path(tokenizer: Tokenizer, sample: Sample, record: RationaleRecord) -> TokenSequence:
    """Demo-free [question, rationale, answer, eos] sequence whose last hidden
    state serves as the reasoning-path representation."""
    body, _ = split_answer(record.text)
    if not body:
        body = record.text.strip()
    pieces = [(f"Question: {sample.question}\nReasoning:", SEGMENT_QUESTION)]
    pieces.append((body, SEGMENT_RATIONALE))
    if record.extracted_answer is not None:
        pieces.append((f"\nAnswer: {record.extracted_answer}", SEGMENT_ANSWER))
    return _encode_tagged(tokenizer, pieces, eos_tag=SEGMENT_ANSWER)


# ---------------------------------------------------------------------------
# dataset store


def normalize_rationale_text(text: str) -> str:
    """Dedup key normalization: lowercase and collapse all whitespace."""
    return " ".join(text.lower().split())


@dataclass
class AppendReport:
    added_correct: int = 0
    added_incorrect: int = 0
    dropped_duplicate: int = 0
    dropped_capped: int = 0

    @property
    def added(self) -> int:
        return self.added_correct + self.added_incorrect


@dataclass
class DatasetStore:
    """Training questions plus the correct/incorrect rationale pools."""

    samples: list[Sample] = field(default_factory=list)
    train_rationales: list[RationaleRecord] = field(default_factory=list)
    neg_rationales: list[RationaleRecord] = field(default_factory=list)
    cap_per_round: int = 4

    def __post_init__(self) -> None:
        self._by_id: dict[str, Sample] = {}
        for sample in self.samples:
            if sample.id in self._by_id:
                raise DataError(f"duplicate sample id {sample.id!r}")
            self._by_id[sample.id] = sample
        self._seen: set[tuple[str, str]] = set()
        self._round_counts: dict[tuple[str, str, int], int] = {}
        existing = list(self.train_rationales) + list(self.neg_rationales)
        self.train_rationales = []
        self.neg_rationales = []
        if existing:
            self.append_rationales(existing)

    def sample(self, sample_id: str) -> Sample:
        try:
            return self._by_id[sample_id]
        except KeyError:
            raise DataError(f"unknown sample id {sample_id!r}") from None

    @property
    def sample_ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def append_rationales(self, records: list[RationaleRecord]) -> AppendReport:
        """Route records into the correct/incorrect pools.

        Drops exact duplicates (per sample, after normalization) and anything
        beyond cap_per_round for one (sample, source, round) triple.
        """
        report = AppendReport()
        for record in records:
            sample = self.sample(record.sample_id)
            expected = canonical_equal(record.extracted_answer, sample.gold_answer, sample.task_type)
            if record.correct != expected:
                raise DataError(
                    f"record for {record.sample_id} claims correct={record.correct} "
                    "but the extracted answer disagrees with gold"
                )
            key = (record.sample_id, normalize_rationale_text(record.text))
            if key in self._seen:
                report.dropped_duplicate += 1
                continue
            count_key = (record.sample_id, record.source, record.round_index)
            if self._round_counts.get(count_key, 0) >= self.cap_per_round:
                report.dropped_capped += 1
                continue
            self._seen.add(key)
            self._round_counts[count_key] = self._round_counts.get(count_key, 0) + 1
            if record.correct:
                self.train_rationales.append(record)
                report.added_correct += 1
            else:
                self.neg_rationales.append(record)
                report.added_incorrect += 1
        return report

    def correct_for(self, sample_id: str) -> list[RationaleRecord]:
        return [r for r in self.train_rationales if r.sample_id == sample_id]

    def wrong_for(self, sample_id: str, *, round_index: int | None = None) -> list[RationaleRecord]:
        records = [r for r in self.neg_rationales if r.sample_id == sample_id]
        if round_index is not None:
            records = [r for r in records if r.round_index == round_index]
        return records

    def check_invariants(self) -> None:
        """Re-scan every stored record against its sample's gold answer."""
        for record in self.train_rationales:
            if not record.correct:
                raise DataError("incorrect record found in the training pool")
        for record in self.neg_rationales:
            if record.correct:
                raise DataError("correct record found in the negative pool")
        for record in self.train_rationales + self.neg_rationales:
            sample = self.sample(record.sample_id)
            rescanned = extract_answer(record.text, sample.task_type)
            if canonical_equal(rescanned, sample.gold_answer, sample.task_type) != record.correct:
                raise DataError(f"stored correctness for {record.sample_id} fails a re-scan")


# ---------------------------------------------------------------------------
# jsonl persistence


def save_samples(samples: list[Sample], path: str | Path) -> None:
    _write_jsonl(
        path,
        (
            {"id": s.id, "question": s.question, "gold_answer": s.gold_answer, "task_type": s.task_type}
            for s in samples
        ),
    )


def load_samples(path: str | Path) -> list[Sample]:
    samples = []
    for line_no, obj in _read_jsonl(path):
        try:
            samples.append(Sample(**obj))
        except (TypeError, DataError) as exc:
            raise DataError(f"{path}:{line_no}: bad sample record: {exc}") from exc
    return samples


def save_rationales(records: list[RationaleRecord], path: str | Path) -> None:
    _write_jsonl(
        path,
        (
            {
                "sample_id": r.sample_id,
                "text": r.text,
                "extracted_answer": r.extracted_answer,
                "correct": r.correct,
                "source": r.source,
                "round_index": r.round_index,
            }
            for r in records
        ),
    )


def load_rationales(path: str | Path) -> list[RationaleRecord]:
    records = []
    for line_no, obj in _read_jsonl(path):
        try:
            records.append(RationaleRecord(**obj))
        except (TypeError, DataError) as exc:
            raise DataError(f"{path}:{line_no}: bad rationale record: {exc}") from exc
    return records


def _write_jsonl(path: str | Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path: str | Path):
    try:
        with open(path) as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield line_no, json.loads(line)
                except ValueError as exc:
                    raise DataError(f"{path}:{line_no}: invalid json: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

"""Student exams: sample rationales per question and harvest the wrong ones.

An exam asks the student each training question twice over: one greedy pass
that scores the question (the exam error rate is the share of greedy-wrong
questions), and a batch of sampled attempts whose incorrect answers become
negative reasoning examples for the contrastive term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .corpus import (
    AppendReport,
    DatasetStore,
    DemonstrationSet,
    RationaleRecord,
    Sample,
    encode_prompt,
    judge,
)
from .errors import DataError
from .model import GenerationConfig, TokenSequence
from .seeding import stable_seed
from .tokenizer import Tokenizer

SOURCE_STUDENT = "student"

EXAM_SAMPLES_PER_QUESTION = 4
EXAM_TEMPERATURE = 1.0
EXAM_TOP_K = 50
EXAM_MAX_NEW_TOKENS = 128


@dataclass(frozen=True)
class QuestionResult:
    sample_id: str
    greedy_text: str
    greedy_extracted: str | None
    greedy_correct: bool
    wrong_texts: tuple[str, ...]
    n_sampled: int

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "greedy_text": self.greedy_text,
            "greedy_extracted": self.greedy_extracted,
            "greedy_correct": self.greedy_correct,
            "wrong_texts": list(self.wrong_texts),
            "n_sampled": self.n_sampled,
        }


@dataclass
class ExamReport:
    round_index: int
    seed: int
    per_question: list[QuestionResult] = field(default_factory=list)
    wrong_records: list[RationaleRecord] = field(default_factory=list)

    @property
    def error_rate(self) -> float:
        """Percentage of questions the greedy decode answers incorrectly."""
        if not self.per_question:
            raise DataError("exam covered no questions")
        wrong = sum(1 for q in self.per_question if not q.greedy_correct)
        return 100.0 * wrong / len(self.per_question)

    def to_json(self) -> dict:
        return {
            "round_index": self.round_index,
            "seed": self.seed,
            "error_rate": self.error_rate,
            "num_questions": len(self.per_question),
            "per_question": [q.to_json() for q in self.per_question],
        }


def _continuation_text(tokenizer: Tokenizer, sequence: TokenSequence, prompt_len: int) -> str:
    return tokenizer.decode(sequence.ids[prompt_len:])


def run_exam(
    model,
    samples: Sequence[Sample],
    tokenizer: Tokenizer,
    demos: DemonstrationSet | None,
    *,
    round_index: int,
    seed: int,
) -> ExamReport:
    """Examine the student on every sample; deterministic for a fixed seed.

    Sampling seeds are derived per question from (seed, sample id), so adding
    or reordering questions never changes another question's draws.
    """
    if not samples:
        raise DataError("exam needs at least one sample")
    report = ExamReport(round_index=round_index, seed=seed)
    for sample in sorted(samples, key=lambda s: s.id):
        prompt = encode_prompt(tokenizer, demos, sample)
        prompt_len = prompt.ids.shape[0]

        greedy_cfg = GenerationConfig(
            mode="greedy",
            max_new_tokens=EXAM_MAX_NEW_TOKENS,
            eos_id=tokenizer.eos_id,
        )
        greedy_seq = model.generate(prompt, greedy_cfg)[0]
        greedy_text = _continuation_text(tokenizer, greedy_seq, prompt_len)
        greedy_record = (
            judge(greedy_text, sample, source=SOURCE_STUDENT, round_index=round_index)
            if greedy_text.strip()
            else None
        )

        sample_cfg = GenerationConfig(
            mode="sample",
            max_new_tokens=EXAM_MAX_NEW_TOKENS,
            temperature=EXAM_TEMPERATURE,
            top_k=EXAM_TOP_K,
            num_return_sequences=EXAM_SAMPLES_PER_QUESTION,
            seed=stable_seed(seed, sample.id),
            eos_id=tokenizer.eos_id,
        )
        wrong_texts: list[str] = []
        for drawn in model.generate(prompt, sample_cfg):
            text = _continuation_text(tokenizer, drawn, prompt_len)
            if not text.strip():
                continue
            record = judge(text, sample, source=SOURCE_STUDENT, round_index=round_index)
            if not record.correct:
                report.wrong_records.append(record)
                wrong_texts.append(text)

        report.per_question.append(
            QuestionResult(
                sample_id=sample.id,
                greedy_text=greedy_text,
                greedy_extracted=greedy_record.extracted_answer if greedy_record else None,
                greedy_correct=bool(greedy_record and greedy_record.correct),
                wrong_texts=tuple(wrong_texts),
                n_sampled=EXAM_SAMPLES_PER_QUESTION,
            )
        )
    return report


def merge_exam(store: DatasetStore, report: ExamReport) -> AppendReport:
    """Append the exam's wrong rationales to the negative pool."""
    return store.append_rationales(report.wrong_records)

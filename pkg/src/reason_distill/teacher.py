"""Teacher backends: prompt construction, completion collection, caching.

A teacher receives a question (optionally together with the student's wrong
attempt) and returns candidate reasoning texts.  Two interchangeable backends
are provided: a deterministic local oracle for self-contained runs and tests,
and an HTTP chat-completions client.  All traffic goes through an on-disk
response cache so that re-running a collection step never re-contacts the
backend.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .corpus import (
    AppendReport,
    DatasetStore,
    RationaleRecord,
    Sample,
    canonical_equal,
    judge,
)
from .errors import ContractError, DataError, TeacherTransportError
from .seeding import stable_seed

SOURCE_TEACHER = "teacher"

FEEDBACK_INSTRUCTION = "Please correct the wrong solution by using better reasoning steps."
PLAIN_INSTRUCTION = "Please solve the question by using clear reasoning steps."

_RETRY_SLEEPS = (1.0, 2.0, 4.0)
_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class SamplingParams:
    """Decoding request sent to a teacher backend."""

    n: int = 4
    temperature: float = 1.0
    top_p: float = 0.9
    max_tokens: int = 128

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ContractError("n must be at least 1")
        if self.temperature <= 0:
            raise ContractError("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise ContractError("top_p must lie in (0, 1]")
        if self.max_tokens < 1:
            raise ContractError("max_tokens must be at least 1")


TEACHER_SAMPLING = SamplingParams()


# ---------------------------------------------------------------------------
# prompt construction


@dataclass(frozen=True)
class TeacherExemplar:
    """A worked example shown to the teacher before the real request."""

    question: str
    wrong: str
    reasoning: str
    answer: str


def load_default_exemplars() -> tuple[TeacherExemplar, ...]:
    raw = (
        resources.files("reason_distill")
        .joinpath("fixtures/teacher_exemplars.json")
        .read_text(encoding="utf-8")
    )
    return tuple(TeacherExemplar(**entry) for entry in json.loads(raw))


def _flatten(text: str) -> str:
    return " ".join(text.split())


def _block(
    question: str,
    wrong: str | None,
    answer: str,
    reasoning: str | None,
    *,
    feedback: bool,
) -> str:
    lines = [f"Question: {question}"]
    if feedback:
        lines.append(f"Wrong Solution: {_flatten(wrong or '')}")
    lines.append(FEEDBACK_INSTRUCTION if feedback else PLAIN_INSTRUCTION)
    lines.append(f"Hint: The final answer should be {answer}.")
    if reasoning is None:
        lines.append("Better Reasoning:")
    else:
        lines.append(f"Better Reasoning: {_flatten(reasoning)} Answer: {answer}")
    return "\n".join(lines)


def render_teacher_prompt(
    question: str,
    gold_answer: str,
    wrong_attempt: str | None,
    exemplars: Sequence[TeacherExemplar],
    *,
    feedback: bool,
) -> str:
    """Few-shot teacher prompt ending in an open ``Better Reasoning:`` cue.

    With ``feedback`` the student's wrong attempt is shown and the exemplars
    demonstrate correcting one; without it no wrong attempt appears anywhere
    in the prompt.
    """
    if feedback and not wrong_attempt:
        raise ContractError("feedback prompts need the student's wrong attempt")
    blocks = [
        _block(e.question, e.wrong, e.answer, e.reasoning, feedback=feedback)
        for e in exemplars
    ]
    target_wrong = wrong_attempt if feedback else None
    blocks.append(_block(question, target_wrong, gold_answer, None, feedback=feedback))
    return "\n\n".join(blocks)


_PROMPT_QUESTION_RE = re.compile(r"^Question: (.+)$", re.MULTILINE)
_PROMPT_HINT_RE = re.compile(r"^Hint: The final answer should be (.+)\.$", re.MULTILINE)


def _parse_target(prompt: str) -> tuple[str, str, bool]:
    """Recover (question, hinted answer, feedback?) from a rendered prompt."""
    questions = _PROMPT_QUESTION_RE.findall(prompt)
    hints = _PROMPT_HINT_RE.findall(prompt)
    if not questions or not hints:
        raise ContractError("prompt does not follow the teacher template")
    return questions[-1], hints[-1], "Wrong Solution:" in prompt


# ---------------------------------------------------------------------------
# backends


class TeacherBackend(Protocol):
    """Anything that can turn a prompt into candidate reasoning texts."""

    @property
    def identity(self) -> str: ...

    def complete(self, prompt: str, params: SamplingParams) -> list[str]: ...


@dataclass
class OracleTeacher:
    """Deterministic local teacher used for self-contained experiments.

    Each completion flips a pseudo-random coin keyed by (seed, sample id,
    completion index).  The same underlying draw is compared against a higher
    threshold when the prompt carries the student's wrong attempt, so for any
    fixed seed the set of successful completions with feedback is a superset
    of the set without it.  Successes return a stored reference reasoning
    text; failures return that text with the final answer perturbed.
    """

    samples: Sequence[Sample]
    bank: dict[str, list[str]]
    success_probability: float = 0.75
    feedback_bonus: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.success_probability <= 1:
            raise ContractError("success_probability must lie in (0, 1]")
        if self.feedback_bonus < 0:
            raise ContractError("feedback_bonus must be non-negative")
        self._by_question = {s.question: s for s in self.samples}
        for sample in self.samples:
            if not self.bank.get(sample.id):
                raise DataError(f"oracle bank has no reasoning texts for {sample.id}")

    @property
    def identity(self) -> str:
        return (
            f"oracle:seed={self.seed}:p={self.success_probability!r}"
            f":bonus={self.feedback_bonus!r}"
        )

    def _corrupt(self, text: str, gold: str, index: int) -> str:
        delta = 1 + stable_seed(self.seed, "delta", index) % 3
        try:
            wrong_value = str(int(gold) + delta)
        except ValueError:
            wrong_value = gold + gold[-1]
        return re.sub(rf"\b{re.escape(gold)}\b", wrong_value, text)

    def complete(self, prompt: str, params: SamplingParams) -> list[str]:
        question, hinted, feedback = _parse_target(prompt)
        sample = self._by_question.get(question)
        if sample is None:
            raise ContractError(f"oracle was asked about an unknown question: {question!r}")
        if not canonical_equal(hinted, sample.gold_answer, sample.task_type):
            raise ContractError(
                f"prompt hint {hinted!r} disagrees with the recorded answer for {sample.id}"
            )
        variants = self.bank[sample.id]
        threshold = self.success_probability + (self.feedback_bonus if feedback else 0.0)
        completions = []
        for i in range(params.n):
            draw = stable_seed(self.seed, sample.id, i) / float(2**63)
            base = variants[i % len(variants)]
            if draw < threshold:
                completions.append(base)
            else:
                completions.append(self._corrupt(base, sample.gold_answer, i))
        return completions


@dataclass
class HttpChatBackend:
    """Chat-completions client with a fixed 1s/2s/4s retry backoff.

    The bearer token is read from the environment at request time and never
    stored on the instance or in any artifact.
    """

    base_url: str
    model: str = "teacher"
    api_key_env: str = "TEACHER_API_KEY"
    timeout: float = 60.0
    session: requests.Session | None = None
    sleep: Callable[[float], None] = time.sleep

    @property
    def identity(self) -> str:
        return f"http:{self.base_url.rstrip('/')}:{self.model}"

    def _post(self, payload: dict) -> requests.Response:
        import os

        session = self.session if self.session is not None else requests
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        url = f"{self.base_url.rstrip('/')}/v1/chat/completions"
        return session.post(url, json=payload, headers=headers, timeout=self.timeout)

    def complete(self, prompt: str, params: SamplingParams) -> list[str]:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "n": params.n,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }
        last_error = "no attempt made"
        for attempt in range(len(_RETRY_SLEEPS) + 1):
            if attempt > 0:
                self.sleep(_RETRY_SLEEPS[attempt - 1])
            try:
                response = self._post(payload)
            except requests.RequestException as exc:
                last_error = f"transport failure: {exc}"
                continue
            if response.status_code in _RETRYABLE_STATUS:
                last_error = f"status {response.status_code}"
                continue
            if response.status_code != 200:
                raise TeacherTransportError(
                    f"teacher endpoint returned status {response.status_code}"
                )
            return self._parse(response)
        raise TeacherTransportError(
            f"teacher endpoint unavailable after {len(_RETRY_SLEEPS) + 1} attempts "
            f"({last_error})"
        )

    def _parse(self, response: requests.Response) -> list[str]:
        try:
            data = response.json()
            choices = data["choices"]
            texts = [c["message"]["content"] for c in choices]
        except (ValueError, KeyError, TypeError) as exc:
            raise TeacherTransportError(f"malformed teacher response: {exc}") from exc
        if not texts or not all(isinstance(t, str) for t in texts):
            raise TeacherTransportError("teacher response carried no completion texts")
        return texts


# ---------------------------------------------------------------------------
# response cache


@dataclass
class ResponseCache:
    """Content-addressed store of teacher responses, one JSON file per request."""

    directory: Path

    def __post_init__(self) -> None:
        self.directory = Path(self.directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def _key(prompt: str, params: SamplingParams, backend_id: str) -> dict:
        return {
            "backend": backend_id,
            "prompt": prompt,
            "n": params.n,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }

    @classmethod
    def digest(cls, prompt: str, params: SamplingParams, backend_id: str) -> str:
        canonical = json.dumps(cls._key(prompt, params, backend_id), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, prompt: str, params: SamplingParams, backend_id: str) -> list[str] | None:
        digest = self.digest(prompt, params, backend_id)
        path = self._path(digest)
        if not path.exists():
            return None
        try:
            stored = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise DataError(f"unreadable cache entry {path}: {exc}") from exc
        expected = self._key(prompt, params, backend_id)
        if {k: stored.get(k) for k in expected} != expected:
            raise DataError(f"cache entry {path} does not match its request key")
        completions = stored.get("completions")
        if not isinstance(completions, list) or not all(
            isinstance(t, str) for t in completions
        ):
            raise DataError(f"cache entry {path} carries no completion list")
        return completions

    def put(
        self, prompt: str, params: SamplingParams, backend_id: str, completions: list[str]
    ) -> str:
        digest = self.digest(prompt, params, backend_id)
        record = dict(self._key(prompt, params, backend_id), completions=list(completions))
        self._path(digest).write_text(
            json.dumps(record, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        return digest


# ---------------------------------------------------------------------------
# collection


@dataclass(frozen=True)
class CollectTarget:
    """One question to send to the teacher, optionally with a wrong attempt."""

    sample_id: str
    wrong_text: str | None = None


@dataclass(frozen=True)
class TeacherExchange:
    sample_id: str
    prompt_digest: str
    cache_hit: bool
    n_completions: int
    n_correct: int
    n_added: int


@dataclass
class CollectReport:
    round_index: int
    feedback: bool
    exchanges: list[TeacherExchange] = field(default_factory=list)
    backend_calls: int = 0
    appended: AppendReport = field(default_factory=AppendReport)
    failed_sample_ids: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "round_index": self.round_index,
            "feedback": self.feedback,
            "backend_calls": self.backend_calls,
            "added_correct": self.appended.added_correct,
            "dropped_duplicate": self.appended.dropped_duplicate,
            "dropped_capped": self.appended.dropped_capped,
            "failed_sample_ids": list(self.failed_sample_ids),
            "exchanges": [
                {
                    "sample_id": e.sample_id,
                    "prompt_digest": e.prompt_digest,
                    "cache_hit": e.cache_hit,
                    "n_completions": e.n_completions,
                    "n_correct": e.n_correct,
                    "n_added": e.n_added,
                }
                for e in self.exchanges
            ],
        }


def collect(
    store: DatasetStore,
    targets: Sequence[CollectTarget],
    backend: TeacherBackend,
    cache: ResponseCache,
    *,
    round_index: int,
    feedback: bool,
    exemplars: Sequence[TeacherExemplar] | None = None,
    params: SamplingParams = TEACHER_SAMPLING,
) -> CollectReport:
    """Query the teacher for every target and keep only correct reasoning.

    Completions are judged against the recorded answer; only those whose
    extracted answer matches are appended to the training pool.  Requests are
    served from the cache when possible, so repeating a collection performs
    zero backend calls.  Targets whose completions are all wrong are reported,
    not fatal.
    """
    if exemplars is None:
        exemplars = load_default_exemplars()
    report = CollectReport(round_index=round_index, feedback=feedback)
    for target in sorted(targets, key=lambda t: t.sample_id):
        sample = store.sample(target.sample_id)
        prompt = render_teacher_prompt(
            sample.question,
            sample.gold_answer,
            target.wrong_text if feedback else None,
            exemplars,
            feedback=feedback and target.wrong_text is not None,
        )
        digest = ResponseCache.digest(prompt, params, backend.identity)
        completions = cache.get(prompt, params, backend.identity)
        cache_hit = completions is not None
        if completions is None:
            completions = backend.complete(prompt, params)
            report.backend_calls += 1
            cache.put(prompt, params, backend.identity, completions)
        kept: list[RationaleRecord] = []
        for text in completions:
            if not text.strip():
                continue
            record = judge(text, sample, source=SOURCE_TEACHER, round_index=round_index)
            if record.correct:
                kept.append(record)
        added = store.append_rationales(kept)
        report.appended.added_correct += added.added_correct
        report.appended.added_incorrect += added.added_incorrect
        report.appended.dropped_duplicate += added.dropped_duplicate
        report.appended.dropped_capped += added.dropped_capped
        if not kept:
            report.failed_sample_ids.append(sample.id)
        report.exchanges.append(
            TeacherExchange(
                sample_id=sample.id,
                prompt_digest=digest,
                cache_hit=cache_hit,
                n_completions=len(completions),
                n_correct=len(kept),
                n_added=added.added_correct,
            )
        )
    return report

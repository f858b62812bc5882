"""Synthetic arithmetic word problems with programmatic oracle rationales.

Each problem is a short object-counting story: a starting amount followed by
gain/loss steps, asking for the final count. The generator also emits, per
problem, several correct rationale texts (step equations plus an answer
line), which double as the oracle teacher's source material.

All surfaces draw from a fixed lexicon with canonically spaced punctuation,
so the closed-vocabulary tokenizer covers every producible string and
decoding is lossless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import DemonstrationSet, Sample, TASK_NUMERIC
from .errors import ConfigError, DataError
from .tokenizer import Tokenizer

NAMES = ("sam", "mia", "leo", "ava", "max", "zoe", "eli", "ivy")
ITEMS = (
    "apples",
    "marbles",
    "pencils",
    "coins",
    "books",
    "shells",
    "stickers",
    "cards",
    "buttons",
    "beads",
)
GAIN_VERBS = ("buys", "finds", "wins", "gets", "picks")
LOSS_VERBS = ("loses", "sells", "drops", "uses", "spends")
TEMPLATE_WORDS = (
    "has",
    "more",
    "now",
    "how",
    "many",
    "does",
    "have",
    "gives",
    "away",
    "first",
    "then",
    "so",
    "the",
    "answer",
    "is",
    "wrong",
    "better",
)
PUNCTUATION = (".", ",", "?", "+", "-", "=", ":")

LEXICON: tuple[str, ...] = tuple(
    sorted(
        set(NAMES)
        | set(ITEMS)
        | set(GAIN_VERBS)
        | set(LOSS_VERBS)
        | set(TEMPLATE_WORDS)
        | set(PUNCTUATION)
        | {str(d) for d in range(10)}
        | {"yes", "no"}
    )
)


def default_tokenizer() -> Tokenizer:
    """Closed vocabulary covering every surface this task family can emit."""
    return Tokenizer(LEXICON)


@dataclass(frozen=True)
class Problem:
    """An executable operation chain: start value plus signed steps."""

    start: int
    ops: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        for op, amount in self.ops:
            if op not in ("+", "-"):
                raise DataError(f"unknown operation {op!r}")
            if amount < 0:
                raise DataError("step amounts must be non-negative")

    @property
    def gold(self) -> int:
        value = self.start
        for op, amount in self.ops:
            value = value + amount if op == "+" else value - amount
        return value

    def equations(self) -> list[str]:
        eqs = []
        value = self.start
        for op, amount in self.ops:
            nxt = value + amount if op == "+" else value - amount
            eqs.append(f"{value} {op} {amount} = {nxt}")
            value = nxt
        return eqs


def rationale_bodies(problem: Problem, name: str, item: str) -> list[str]:
    """Distinct correct rationale surfaces for one problem."""
    eqs = problem.equations()
    eq_text = " ".join(e + " ." for e in eqs)
    gold = problem.gold
    sequenced = " ".join(
        ("first ," if i == 0 else "then ,") + " " + e + " ." for i, e in enumerate(eqs)
    )
    return [
        f"{eq_text} so the answer is {gold} .",
        eq_text,
        f"{sequenced} so the answer is {gold} .",
        f"{name} has {problem.start} {item} . {eq_text} {name} has {gold} {item} now .",
    ]


def attach_answer(body: str, answer: int | str) -> str:
    return f"{body}\nAnswer: {answer}"


@dataclass(frozen=True)
class SyntheticTaskSpec:
    size: int = 60
    num_steps: tuple[int, int] = (1, 2)
    num_entities: tuple[int, int] = (1, 2)
    value_range: tuple[int, int] = (2, 9)
    num_demos: int = 3
    seed: int = 42

    def __post_init__(self) -> None:
        if self.size < 4:
            raise ConfigError(f"size must be >= 4, got {self.size}")
        for field_name in ("num_steps", "num_entities", "value_range"):
            lo, hi = getattr(self, field_name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{field_name} must satisfy 1 <= lo <= hi, got ({lo}, {hi})")
        if self.num_entities[1] > len(NAMES):
            raise ConfigError(f"num_entities upper bound exceeds the {len(NAMES)} available names")
        if self.num_demos < 0:
            raise ConfigError("num_demos must be >= 0")


@dataclass
class SyntheticData:
    train: list[Sample]
    test: list[Sample]
    demos: DemonstrationSet
    bank: dict[str, list[str]]


def _build_problem(rng: np.random.Generator, spec: SyntheticTaskSpec):
    name = str(rng.choice(NAMES))
    item = str(rng.choice(ITEMS))
    n_entities = int(rng.integers(spec.num_entities[0], spec.num_entities[1] + 1))
    other_pool = [n for n in NAMES if n != name]
    others = [str(n) for n in rng.choice(other_pool, size=n_entities - 1, replace=False)]
    start = int(rng.integers(spec.value_range[0], spec.value_range[1] + 1))
    n_steps = int(rng.integers(spec.num_steps[0], spec.num_steps[1] + 1))

    sentences = [f"{name} has {start} {item} ."]
    ops: list[tuple[str, int]] = []
    current = start
    for _ in range(n_steps):
        gain = True if current <= 1 else bool(rng.random() < 0.5)
        use_other = bool(others) and bool(rng.random() < 0.5)
        if gain:
            amount = int(rng.integers(1, spec.value_range[1] + 1))
            if use_other:
                other = str(rng.choice(others))
                sentences.append(f"{other} gives {name} {amount} more {item} .")
            else:
                verb = str(rng.choice(GAIN_VERBS))
                sentences.append(f"{name} {verb} {amount} more {item} .")
            ops.append(("+", amount))
            current += amount
        else:
            amount = int(rng.integers(1, current + 1))
            if use_other:
                other = str(rng.choice(others))
                sentences.append(f"{name} gives {other} {amount} {item} .")
            else:
                verb = str(rng.choice(LOSS_VERBS))
                sentences.append(f"{name} {verb} {amount} {item} .")
            ops.append(("-", amount))
            current -= amount

    question = " ".join(sentences) + f" how many {item} does {name} have now ?"
    return question, Problem(start=start, ops=tuple(ops)), name, item


def generate_synthetic(spec: SyntheticTaskSpec) -> SyntheticData:
    """Deterministically generate the pre-split dataset plus oracle bank.

    The 70:30 train/test split convention is applied here; demonstration
    problems are generated separately and belong to neither split.
    """
    rng = np.random.default_rng(spec.seed)
    total = spec.size + spec.num_demos
    seen: set[str] = set()
    built = []
    attempts = 0
    while len(built) < total:
        attempts += 1
        if attempts > 200 * total:
            raise DataError(
                "cannot generate enough distinct questions; widen value_range or num_steps"
            )
        question, problem, name, item = _build_problem(rng, spec)
        if question in seen:
            continue
        seen.add(question)
        built.append((question, problem, name, item))

    demo_entries = built[: spec.num_demos]
    rest = built[spec.num_demos :]
    n_train = max(1, min(spec.size - 1, round(0.7 * spec.size)))

    demos = DemonstrationSet(
        [(q, rationale_bodies(p, n, i)[0], str(p.gold)) for q, p, n, i in demo_entries]
    )
    bank: dict[str, list[str]] = {}
    train: list[Sample] = []
    test: list[Sample] = []
    for idx, (question, problem, name, item) in enumerate(rest):
        if idx < n_train:
            sample_id = f"train-{idx:04d}"
            bucket = train
        else:
            sample_id = f"test-{idx - n_train:04d}"
            bucket = test
        bucket.append(
            Sample(id=sample_id, question=question, gold_answer=str(problem.gold), task_type=TASK_NUMERIC)
        )
        bank[sample_id] = [attach_answer(b, problem.gold) for b in rationale_bodies(problem, name, item)]
    return SyntheticData(train=train, test=test, demos=demos, bank=bank)

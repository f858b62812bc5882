"""Asking the teacher for better reasoning, with caching and verification.

Mistakes from the student's exam are sent back to a teacher: the prompt shows
worked exemplars, the student's wrong attempt, and a hint with the expected
answer.  Completions whose extracted answer does not match gold are thrown
away — only verified-correct rationales enter the training pool.

The shipped oracle backend stands in for a remote LLM so everything here is
deterministic and offline; swapping in an HTTP chat-completions endpoint is a
config change (teacher.backend = "http" plus TEACHER_BASE_URL/TEACHER_API_KEY
in the environment).
"""

import tempfile
from pathlib import Path

from reason_distill.corpus import DatasetStore
from reason_distill.synthetic import SyntheticTaskSpec, generate_synthetic
from reason_distill.teacher import (
    CollectTarget,
    OracleTeacher,
    ResponseCache,
    TEACHER_SAMPLING,
    collect,
    load_default_exemplars,
    render_teacher_prompt,
)


def banner(title: str) -> None:
    print(f"\n=== {title} " + "=" * max(0, 60 - len(title)))


class CountingBackend:
    """Wraps a backend to count how often the pipeline really calls it."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    @property
    def identity(self):
        return self.inner.identity

    def complete(self, prompt, params):
        self.calls += 1
        return self.inner.complete(prompt, params)


data = generate_synthetic(SyntheticTaskSpec(size=10, seed=5, num_demos=1))
sample = data.train[0]
exemplars = load_default_exemplars()

banner("prompt with student feedback (the wrong attempt is embedded)")
prompt = render_teacher_prompt(
    sample.question,
    sample.gold_answer,
    "6 - 4 = 3 . 3 - 2 = 1 . Answer: 1",
    exemplars,
    feedback=True,
)
print(prompt)

banner("prompt without feedback (ablation / bootstrap arm)")
plain = render_teacher_prompt(
    sample.question, sample.gold_answer, None, exemplars, feedback=False
)
print(f"mentions 'Wrong Solution': {'Wrong Solution' in plain}")
print("last two lines:")
for line in plain.splitlines()[-2:]:
    print(" ", line)

banner("an imperfect oracle teacher")
oracle = OracleTeacher(
    samples=data.train, bank=data.bank, success_probability=0.5, seed=12
)
completions = oracle.complete(prompt, TEACHER_SAMPLING)
for idx, text in enumerate(completions):
    first = text.splitlines()[0]
    print(f"completion {idx}: {first[:58]}")

banner("collection keeps only verified-correct rationales")
with tempfile.TemporaryDirectory(prefix="reason-distill-cache-") as tmp:
    cache = ResponseCache(Path(tmp) / "cache")
    backend = CountingBackend(oracle)
    store = DatasetStore(samples=data.train)
    targets = [CollectTarget(s.id) for s in data.train]

    report = collect(store, targets, backend, cache, round_index=0, feedback=False)
    print(f"backend calls:        {backend.calls}")
    print(f"rationales kept:      {report.appended.added_correct}")
    print(f"questions that failed: {report.failed_sample_ids or 'none'}")
    print(f"wrong pool size:      {len(store.neg_rationales)} "
          "(teacher mistakes are dropped, never trained on)")

    banner("a second pass is served entirely from the response cache")
    repeat = collect(store, targets, backend, cache, round_index=0, feedback=False)
    print(f"backend calls now:    {backend.calls} (unchanged)")
    print(f"cache hits:           {sum(1 for e in repeat.exchanges if e.cache_hit)}"
          f"/{len(repeat.exchanges)}")
print("\nDone.")

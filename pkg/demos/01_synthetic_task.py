"""A tour of the synthetic arithmetic task and its data structures.

The pipeline trains on procedurally generated word problems: each question
gives an entity a starting count, applies add/remove events, and asks for the
final count.  Every sample ships with hidden reference reasoning (the "bank")
that only the teacher sees, plus a handful of fixed demonstrations used as
few-shot context.
"""

from reason_distill.corpus import encode_path, encode_prompt, judge
from reason_distill.synthetic import SyntheticTaskSpec, default_tokenizer, generate_synthetic


def banner(title: str) -> None:
    print(f"\n=== {title} " + "=" * max(0, 60 - len(title)))


spec = SyntheticTaskSpec(size=12, seed=7, num_demos=2)
data = generate_synthetic(spec)
tok = default_tokenizer()

banner("dataset split")
print(f"{len(data.train)} train / {len(data.test)} test questions, "
      f"{len(data.demos.demos)} demonstrations")

banner("one sample")
sample = data.train[0]
print("id:        ", sample.id)
print("question:  ", sample.question)
print("gold:      ", sample.gold_answer)
print("task type: ", sample.task_type)

banner("the teacher-only reasoning bank")
for line in data.bank[sample.id]:
    print("bank entry:", line)

banner("demonstrations (few-shot context for the student)")
question, reasoning, answer = data.demos.demos[0]
print("Q:", question)
print("R:", reasoning)
print("A:", answer)

banner("prompt encoding (student input at exam time)")
prompt = encode_prompt(tok, data.demos, sample)
print(f"{prompt.ids.size} tokens; segment tags mark demo/question regions")
print("first tokens:", " ".join(tok.decode(prompt.ids[:14]).split()[:12]), "...")
print("tag spans:   ", {str(tag): int((prompt.tags == tag).sum()) for tag in set(prompt.tags)})

banner("judging a rationale against gold")
record = judge(data.bank[sample.id][0], sample, source="teacher", round_index=0)
print(f"correct rationale -> correct={record.correct}, extracted={record.extracted_answer!r}")
wrong = judge("1 + 1 = 3 .\nAnswer: 3", sample, source="student", round_index=1)
print(f"wrong rationale   -> correct={wrong.correct}, extracted={wrong.extracted_answer!r}")

banner("reasoning-path encoding (demo-free, for representations)")
path = encode_path(tok, sample, record)
print(f"{path.ids.size} tokens;", "tags:", {str(t): int((path.tags == t).sum()) for t in set(path.tags)})
print("\nDone.")

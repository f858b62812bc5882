"""Multi-round reasoning distillation for a micro numpy student LM.

A small decoder-only language model learns chain-of-thought reasoning from a
teacher reachable only through a text-completion interface.  Each round the
student sits an exam over the training questions, its wrong reasoning goes
back to the teacher for corrected rationales, and the student retrains with a
joint objective: next-token cross-entropy on the correct rationales plus a
cosine-triplet term that pushes the representations of its own wrong
reasoning paths away from the correct ones.

The package is organized by pipeline stage:

- :mod:`reason_distill.synthetic` / :mod:`reason_distill.corpus` — the
  arithmetic word-problem task, tokenization, rationale records, and pools.
- :mod:`reason_distill.model` — the float64 numpy transformer with manual
  backpropagation and cached sampling.
- :mod:`reason_distill.tailor` — LM, triplet, and joint losses; AdamW; the
  training loop.
- :mod:`reason_distill.teacher` — prompt rendering, the HTTP and oracle
  backends, the response cache, and rationale collection.
- :mod:`reason_distill.exam` / :mod:`reason_distill.metrics` — exams,
  evaluation, reflection diagnostics, 2-D projection, and the λ-sweep.
- :mod:`reason_distill.rounds` — experiment directories, round orchestration,
  stopping, and reporting.
- :mod:`reason_distill.cli` — the command-line surface.
"""

__version__ = "0.1.0"

"""Joint training objective and optimizer for the student.

The loss has two parts. The language-modeling part is weighted next-token
cross-entropy over the full [demos, question, rationale, answer] sequence,
with demonstration positions down-weighted. The self-reflection part is a
cosine triplet over reasoning-path representations: the anchor (a correct
path) should sit closer to another correct path for the same question than
to one of the student's own wrong paths. The joint loss is

    L = L_lm + lambda * L_cl

averaged per minibatch; anchors without any available negative are skipped
by the triplet term. Optimization is AdamW with bias-corrected moments,
decoupled weight decay, and linear warmup.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import DatasetStore, DemonstrationSet, RationaleRecord, encode_path, encode_training_sequence
from .errors import ConfigError, ContractError, DataError
from .model import (
    LossGraph,
    ModelState,
    SequenceGrad,
    SEGMENT_DEMO,
    TokenSequence,
    forward,
    gradients,
    log_softmax,
)
from .seeding import stable_seed
from .tokenizer import Tokenizer


@dataclass(frozen=True)
class LossConfig:
    lambda_weight: float = 0.5
    margin: float = 1.0
    demo_weight: float = 0.1
    restrict_negatives_to_latest: bool = False

    def __post_init__(self) -> None:
        if self.lambda_weight < 0:
            raise ConfigError(f"lambda_weight must be >= 0, got {self.lambda_weight}")
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if not 0 <= self.demo_weight <= 1:
            raise ConfigError(f"demo_weight must be in [0, 1], got {self.demo_weight}")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_steps: int = 100
    epochs: int = 10
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError(f"betas must be in [0, 1), got {self.betas}")
        if self.eps <= 0 or self.weight_decay < 0 or self.warmup_steps < 0:
            raise ConfigError("eps must be > 0, weight_decay and warmup_steps >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


# ---------------------------------------------------------------------------
# losses


def _position_weights(seq: TokenSequence, demo_weight: float) -> np.ndarray:
    """Per-target weights for positions 1..L-1."""
    length = len(seq)
    weights = np.ones(length - 1)
    if seq.tags is not None:
        demo_mask = np.asarray(seq.tags[1:]) == SEGMENT_DEMO
        weights[demo_mask] = demo_weight
    return weights


def _lm_loss_single(model: ModelState, seq: TokenSequence, demo_weight: float, *, want_grad: bool):
    if len(seq) < 2:
        raise DataError("language-modeling loss needs a sequence of length >= 2")
    out = forward(model, seq, want_cache=want_grad)
    logp = log_softmax(out.logits)
    targets = seq.ids[1:]
    weights = _position_weights(seq, demo_weight)
    total_weight = weights.sum()
    nll = -logp[np.arange(len(seq) - 1), targets]
    value = float((weights * nll).sum() / total_weight)
    if not want_grad:
        return value, None
    # d value / d logits[t] = (w_t+1 / W) * (softmax(logits[t]) - onehot(target))
    probs = np.exp(logp)
    d_logits = np.zeros_like(out.logits)
    d_logits[:-1] = probs[:-1]
    d_logits[np.arange(len(seq) - 1), targets] -= 1.0
    d_logits[:-1] *= (weights / total_weight)[:, None]
    return value, SequenceGrad(cache=out.cache, d_logits=d_logits)


def lm_loss(model: ModelState, seq: TokenSequence, demo_weight: float = 0.1) -> float:
    """Weighted mean next-token cross-entropy for one sequence."""
    value, _ = _lm_loss_single(model, seq, demo_weight, want_grad=False)
    return value


def _cosine(u: np.ndarray, v: np.ndarray) -> tuple[float, float, float]:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DataError("cosine similarity undefined for a zero-norm representation")
    return float(u @ v) / (nu * nv), nu, nv


def _d_cosine(u: np.ndarray, v: np.ndarray, cos: float, nu: float, nv: float) -> np.ndarray:
    """Derivative of cos(u, v) with respect to u."""
    return v / (nu * nv) - cos * u / (nu * nu)


def triplet_loss(
    anchor: np.ndarray, positive: np.ndarray, negative: np.ndarray, margin: float = 1.0
) -> float:
    """max(0, margin - cos(anchor, positive) + cos(anchor, negative))."""
    cos_pos, _, _ = _cosine(anchor, positive)
    cos_neg, _, _ = _cosine(anchor, negative)
    return max(0.0, margin - cos_pos + cos_neg)


@dataclass
class TripletBatch:
    """Aligned path sequences for the contrastive term; one row per anchor."""

    anchors: list[TokenSequence | None]
    positives: list[TokenSequence | None]
    negatives: list[TokenSequence | None]
    skip_mask: np.ndarray
    positive_records: list[RationaleRecord | None] = field(default_factory=list)
    negative_records: list[RationaleRecord | None] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.anchors)
        self.skip_mask = np.asarray(self.skip_mask, dtype=bool)
        if not (len(self.positives) == len(self.negatives) == self.skip_mask.shape[0] == n):
            raise ContractError("triplet batch members must align one-to-one")

    @property
    def active_count(self) -> int:
        return int((~self.skip_mask).sum())


def build_triplets(
    store: DatasetStore,
    anchors: list[RationaleRecord],
    rng: np.random.Generator,
    tokenizer: Tokenizer,
    *,
    restrict_negatives_to_latest: bool = False,
) -> TripletBatch:
    """Sample one positive and one negative per anchor.

    The positive is uniform over the question's other correct rationales
    (the anchor itself when it is the only one). Anchors whose question has
    no recorded mistakes are skip-masked.
    """
    anchor_seqs: list[TokenSequence | None] = []
    positives: list[TokenSequence | None] = []
    negatives: list[TokenSequence | None] = []
    pos_records: list[RationaleRecord | None] = []
    neg_records: list[RationaleRecord | None] = []
    skip = []
    for anchor in anchors:
        sample = store.sample(anchor.sample_id)
        neg_pool = store.wrong_for(anchor.sample_id)
        if restrict_negatives_to_latest and neg_pool:
            latest = max(r.round_index for r in neg_pool)
            neg_pool = [r for r in neg_pool if r.round_index == latest]
        if not neg_pool:
            anchor_seqs.append(None)
            positives.append(None)
            negatives.append(None)
            pos_records.append(None)
            neg_records.append(None)
            skip.append(True)
            continue
        pos_pool = [r for r in store.correct_for(anchor.sample_id) if r is not anchor]
        pos = pos_pool[int(rng.integers(len(pos_pool)))] if pos_pool else anchor
        neg = neg_pool[int(rng.integers(len(neg_pool)))]
        anchor_seqs.append(encode_path(tokenizer, sample, anchor))
        positives.append(encode_path(tokenizer, sample, pos))
        negatives.append(encode_path(tokenizer, sample, neg))
        pos_records.append(pos)
        neg_records.append(neg)
        skip.append(False)
    return TripletBatch(
        anchors=anchor_seqs,
        positives=positives,
        negatives=negatives,
        skip_mask=np.asarray(skip, dtype=bool),
        positive_records=pos_records,
        negative_records=neg_records,
    )


@dataclass
class JointLossResult:
    total: float
    lm: float
    cl: float
    graph: LossGraph


def joint_loss_graph(
    model: ModelState,
    lm_batch: list[TokenSequence],
    triplets: TripletBatch | None,
    config: LossConfig,
    *,
    want_grad: bool = True,
) -> JointLossResult:
    """Batch joint loss with everything needed to backprop it.

    L = mean_i L_lm(i) + lambda * mean_{active i} L_cl(i); with lambda = 0
    the contrastive term is neither computed nor touched by gradients.
    """
    if not lm_batch:
        raise DataError("empty batch")
    contributions: list[SequenceGrad] = []
    lm_total = 0.0
    for seq in lm_batch:
        value, contrib = _lm_loss_single(model, seq, config.demo_weight, want_grad=want_grad)
        lm_total += value
        if want_grad:
            contrib.d_logits /= len(lm_batch)
            contributions.append(contrib)
    lm_value = lm_total / len(lm_batch)

    cl_value = 0.0
    if config.lambda_weight > 0 and triplets is not None and triplets.active_count > 0:
        active = triplets.active_count
        cl_total = 0.0
        for a_seq, p_seq, n_seq, skipped in zip(
            triplets.anchors, triplets.positives, triplets.negatives, triplets.skip_mask
        ):
            if skipped:
                continue
            outs = [forward(model, s, want_cache=want_grad) for s in (a_seq, p_seq, n_seq)]
            a, p, n = (o.hidden_states[-1] for o in outs)
            cos_pos, na, np_ = _cosine(a, p)
            cos_neg, _, nn = _cosine(a, n)
            hinge = config.margin - cos_pos + cos_neg
            cl_total += max(0.0, hinge)
            if not want_grad or hinge <= 0.0:
                continue
            scale = config.lambda_weight / active
            d_a = scale * (-_d_cosine(a, p, cos_pos, na, np_) + _d_cosine(a, n, cos_neg, na, nn))
            d_p = scale * (-_d_cosine(p, a, cos_pos, np_, na))
            d_n = scale * (_d_cosine(n, a, cos_neg, nn, na))
            for out, d_vec in zip(outs, (d_a, d_p, d_n)):
                d_hidden = np.zeros_like(out.hidden_states)
                d_hidden[-1] = d_vec
                contributions.append(SequenceGrad(cache=out.cache, d_hidden=d_hidden))
        cl_value = cl_total / active

    total = lm_value + config.lambda_weight * cl_value
    return JointLossResult(total=total, lm=lm_value, cl=cl_value, graph=LossGraph(value=total, contributions=contributions))


def joint_loss(
    model: ModelState,
    lm_batch: list[TokenSequence],
    triplets: TripletBatch | None,
    config: LossConfig,
) -> float:
    return joint_loss_graph(model, lm_batch, triplets, config, want_grad=False).total


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_optimizer(model: ModelState) -> AdamWState:
    return AdamWState(
        m={k: np.zeros_like(p) for k, p in model.params.items()},
        v={k: np.zeros_like(p) for k, p in model.params.items()},
    )


def adamw_step(
    model: ModelState,
    grads: dict[str, np.ndarray],
    opt_state: AdamWState,
    config: OptimizerConfig,
) -> float:
    """One update; returns the effective (warmed-up) learning rate."""
    opt_state.step += 1
    t = opt_state.step
    warm = min(1.0, t / config.warmup_steps) if config.warmup_steps > 0 else 1.0
    lr_t = config.learning_rate * warm
    b1, b2 = config.betas
    for name, param in model.params.items():
        g = grads[name]
        m = opt_state.m[name]
        v = opt_state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        param -= lr_t * (m_hat / (np.sqrt(v_hat) + config.eps) + config.weight_decay * param)
    model.step_count += 1
    return lr_t


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainReport:
    steps: int
    final_lm: float
    final_cl: float
    rows: list[tuple[int, float, float, float]]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "lm_loss", "cl_loss", "effective_lr"])
            for row in self.rows:
                writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def train(
    model: ModelState,
    store: DatasetStore,
    tokenizer: Tokenizer,
    demos: DemonstrationSet | None,
    loss_config: LossConfig,
    opt_config: OptimizerConfig,
    seed: int,
) -> TrainReport:
    """Optimize the joint objective over the correct-rationale pool.

    Deterministic for a given seed: epoch shuffling and triplet sampling use
    independent derived streams, so a lambda = 0 run walks the same parameter
    trajectory as a pure language-modeling run. The store is never mutated.
    """
    anchors = list(store.train_rationales)
    if not anchors:
        raise DataError("training pool is empty; collect rationales first")
    lm_seqs = [
        encode_training_sequence(tokenizer, demos, store.sample(a.sample_id), a) for a in anchors
    ]
    too_long = [
        anchors[i].sample_id for i, s in enumerate(lm_seqs) if len(s) > model.config.context_length
    ]
    if too_long:
        raise DataError(
            f"training sequences exceed context_length {model.config.context_length}: "
            + ", ".join(sorted(set(too_long))[:5])
        )

    shuffle_rng = np.random.default_rng(stable_seed(seed, "shuffle"))
    triplet_rng = np.random.default_rng(stable_seed(seed, "triplets"))
    opt_state = init_optimizer(model)
    rows: list[tuple[int, float, float, float]] = []
    steps_per_epoch = 0
    for _epoch in range(opt_config.epochs):
        order = shuffle_rng.permutation(len(anchors))
        epoch_steps = 0
        for lo in range(0, len(order), opt_config.batch_size):
            batch_idx = order[lo : lo + opt_config.batch_size]
            batch_anchors = [anchors[i] for i in batch_idx]
            batch_seqs = [lm_seqs[i] for i in batch_idx]
            triplets = None
            if loss_config.lambda_weight > 0:
                triplets = build_triplets(
                    store,
                    batch_anchors,
                    triplet_rng,
                    tokenizer,
                    restrict_negatives_to_latest=loss_config.restrict_negatives_to_latest,
                )
            result = joint_loss_graph(model, batch_seqs, triplets, loss_config)
            grads = gradients(model, result.graph)
            lr_t = adamw_step(model, grads, opt_state, opt_config)
            rows.append((opt_state.step, result.lm, result.cl, lr_t))
            epoch_steps += 1
        steps_per_epoch = epoch_steps

    last_epoch = rows[-steps_per_epoch:] if steps_per_epoch else rows
    final_lm = float(np.mean([r[1] for r in last_epoch]))
    final_cl = float(np.mean([r[2] for r in last_epoch]))
    return TrainReport(steps=opt_state.step, final_lm=final_lm, final_cl=final_cl, rows=rows)

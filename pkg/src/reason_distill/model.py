"""Micro decoder-only transformer in numpy with exact manual backprop.

The student is a small pre-norm GPT: learned token + position embeddings,
`num_layers` blocks of causal self-attention and a GELU MLP, a final layer
norm, and an untied linear output head. Everything runs on plain numpy
arrays in float64 by default so analytic gradients can be verified against
central finite differences.

Losses are assembled elsewhere into a LossGraph: per involved sequence, the
gradient of the scalar loss with respect to that sequence's logits and final
hidden states. `gradients` replays each sequence backward and accumulates
per-parameter gradients exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    SequenceLengthError,
)

CHECKPOINT_MAGIC = b"RDST"
CHECKPOINT_VERSION = 1

SEGMENT_DEMO = "demo"
SEGMENT_QUESTION = "question"
SEGMENT_RATIONALE = "rationale"
SEGMENT_ANSWER = "answer"
SEGMENT_TAGS = (SEGMENT_DEMO, SEGMENT_QUESTION, SEGMENT_RATIONALE, SEGMENT_ANSWER)

_LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    context_length: int
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64
    seed: int = 42
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.context_length < 2:
            raise ConfigError(f"context_length must be >= 2, got {self.context_length}")
        if self.num_layers < 1 or self.num_heads < 1 or self.hidden_dim < 1:
            raise ConfigError("num_layers, num_heads, and hidden_dim must be >= 1")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    def to_json(self) -> str:
        keys = ("vocab_size", "context_length", "num_layers", "num_heads", "hidden_dim", "seed", "dtype")
        return json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True, separators=(",", ":"))

    def hash(self) -> bytes:
        return hashlib.sha256(self.to_json().encode()).digest()


@dataclass
class TokenSequence:
    """Token ids with optional per-token segment tags."""

    ids: np.ndarray
    tags: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 1:
            raise DataError(f"token ids must be 1-D, got shape {self.ids.shape}")
        if self.tags is not None:
            self.tags = np.asarray(self.tags)
            if self.tags.shape != self.ids.shape:
                raise DataError("segment tags must align one-to-one with token ids")
            bad = set(self.tags.tolist()) - set(SEGMENT_TAGS)
            if bad:
                raise DataError(f"unknown segment tags: {sorted(bad)}")

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass
class ForwardOutput:
    """Per-token logits and final-layer hidden states for one sequence."""

    logits: np.ndarray
    hidden_states: np.ndarray
    cache: dict | None = None


@dataclass
class SequenceGrad:
    """Upstream gradients for one sequence that fed the scalar loss."""

    cache: dict
    d_logits: np.ndarray | None = None
    d_hidden: np.ndarray | None = None


@dataclass
class LossGraph:
    """A scalar loss value plus everything needed to backprop it."""

    value: float
    contributions: list[SequenceGrad] = field(default_factory=list)


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, np.ndarray]
    step_count: int = 0

    # convenience delegates so stub students can duck-type the same surface
    def forward(self, seq: TokenSequence | np.ndarray, want_cache: bool = False) -> ForwardOutput:
        return forward(self, seq, want_cache=want_cache)

    def generate(self, prompt: TokenSequence, gen: "GenerationConfig") -> list[TokenSequence]:
        return generate(self, prompt, gen)


@dataclass(frozen=True)
class GenerationConfig:
    mode: str = "sample"
    max_new_tokens: int = 128
    temperature: float = 1.0
    top_k: int | None = 50
    top_p: float | None = None
    num_return_sequences: int = 4
    seed: int = 0
    eos_id: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("greedy", "sample"):
            raise ConfigError(f"generation mode must be greedy or sample, got {self.mode!r}")
        if self.max_new_tokens <= 0:
            raise ContractError(f"max_new_tokens must be positive, got {self.max_new_tokens}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.top_k is not None and self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.top_p is not None and not 0 < self.top_p <= 1:
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.num_return_sequences < 1:
            raise ConfigError("num_return_sequences must be >= 1")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter order and shapes for a given configuration."""
    v, c, h = config.vocab_size, config.context_length, config.hidden_dim
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (v, h),
        "pos_emb": (c, h),
    }
    for i in range(config.num_layers):
        p = f"layers.{i}."
        shapes[p + "ln1.gamma"] = (h,)
        shapes[p + "ln1.beta"] = (h,)
        for name in ("q", "k", "v", "o"):
            shapes[p + f"attn.w_{name}"] = (h, h)
            shapes[p + f"attn.b_{name}"] = (h,)
        shapes[p + "ln2.gamma"] = (h,)
        shapes[p + "ln2.beta"] = (h,)
        shapes[p + "mlp.w_fc"] = (h, 4 * h)
        shapes[p + "mlp.b_fc"] = (4 * h,)
        shapes[p + "mlp.w_proj"] = (4 * h, h)
        shapes[p + "mlp.b_proj"] = (h,)
    shapes["ln_f.gamma"] = (h,)
    shapes["ln_f.beta"] = (h,)
    shapes["head.w"] = (h, v)
    shapes["head.b"] = (v,)
    return shapes


def init_model(config: ModelConfig) -> ModelState:
    """Randomly initialize all parameters; deterministic for a given seed."""
    rng = np.random.default_rng(config.seed)
    dt = config.np_dtype
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(("gamma",)):
            params[name] = np.ones(shape, dtype=dt)
        elif name.endswith(("beta",)) or name.startswith("head.b") or ".b_" in name:
            params[name] = np.zeros(shape, dtype=dt)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape).astype(dt)
    return ModelState(config=config, params=params, step_count=0)


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _ln_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = centered * inv_std
    return gamma * xhat + beta, (centered, inv_std, xhat)


def _ln_backward(dy: np.ndarray, cache, gamma: np.ndarray):
    centered, inv_std, xhat = cache
    h = xhat.shape[-1]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dvar = (dxhat * centered).sum(axis=-1, keepdims=True) * (-0.5) * inv_std**3
    dmu = -dxhat.sum(axis=-1, keepdims=True) * inv_std + dvar * (-2.0 / h) * centered.sum(
        axis=-1, keepdims=True
    )
    dx = dxhat * inv_std + dvar * 2.0 * centered / h + dmu / h
    return dx, dgamma, dbeta


_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu_forward(x: np.ndarray):
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), (x, t)


def _gelu_backward(dy: np.ndarray, cache):
    x, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner)


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    length, hidden = x.shape
    return x.reshape(length, num_heads, hidden // num_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    num_heads, length, head_dim = x.shape
    return x.transpose(1, 0, 2).reshape(length, num_heads * head_dim)


def _attn_forward(params: dict, pfx: str, a: np.ndarray, num_heads: int):
    length = a.shape[0]
    q = a @ params[pfx + "w_q"] + params[pfx + "b_q"]
    k = a @ params[pfx + "w_k"] + params[pfx + "b_k"]
    v = a @ params[pfx + "w_v"] + params[pfx + "b_v"]
    qh, kh, vh = (_split_heads(t, num_heads) for t in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = (qh @ kh.transpose(0, 2, 1)) * scale
    mask = np.tril(np.ones((length, length), dtype=bool))
    scores = np.where(mask, scores, -np.inf)
    weights = _softmax(scores)
    ctx = _merge_heads(weights @ vh)
    out = ctx @ params[pfx + "w_o"] + params[pfx + "b_o"]
    return out, (a, qh, kh, vh, weights, ctx, scale)


def _attn_backward(params: dict, grads: dict, pfx: str, d_out: np.ndarray, cache, num_heads: int):
    a, qh, kh, vh, weights, ctx, scale = cache
    grads[pfx + "w_o"] += ctx.T @ d_out
    grads[pfx + "b_o"] += d_out.sum(axis=0)
    d_ctx = _split_heads(d_out @ params[pfx + "w_o"].T, num_heads)
    d_weights = d_ctx @ vh.transpose(0, 2, 1)
    d_vh = weights.transpose(0, 2, 1) @ d_ctx
    # softmax jacobian per row; masked positions have weight 0 so drop out
    d_scores = weights * (d_weights - (d_weights * weights).sum(axis=-1, keepdims=True))
    d_qh = (d_scores @ kh) * scale
    d_kh = (d_scores.transpose(0, 2, 1) @ qh) * scale
    d_a = np.zeros_like(a)
    for name, dh in (("q", d_qh), ("k", d_kh), ("v", d_vh)):
        dm = _merge_heads(dh)
        grads[pfx + f"w_{name}"] += a.T @ dm
        grads[pfx + f"b_{name}"] += dm.sum(axis=0)
        d_a += dm @ params[pfx + f"w_{name}"].T
    return d_a


def _as_ids(seq: TokenSequence | np.ndarray) -> np.ndarray:
    if isinstance(seq, TokenSequence):
        return seq.ids
    return np.asarray(seq, dtype=np.int64)


def forward(model: ModelState, seq: TokenSequence | np.ndarray, want_cache: bool = False) -> ForwardOutput:
    """Run the full sequence through the network.

    Returns per-token logits (L, V) and final-layer hidden states (L, H);
    with want_cache=True the output also carries every intermediate needed
    for an exact backward pass.
    """
    ids = _as_ids(seq)
    cfg = model.config
    if ids.shape[0] == 0:
        raise DataError("cannot run forward on an empty sequence")
    if ids.shape[0] > cfg.context_length:
        raise SequenceLengthError(
            f"sequence length {ids.shape[0]} exceeds context_length {cfg.context_length}"
        )
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise DataError(f"token id outside vocabulary of {cfg.vocab_size}")

    p = model.params
    length = ids.shape[0]
    x = p["tok_emb"][ids] + p["pos_emb"][:length]
    layer_caches = []
    for i in range(cfg.num_layers):
        px = f"layers.{i}."
        a, ln1_cache = _ln_forward(x, p[px + "ln1.gamma"], p[px + "ln1.beta"])
        attn_out, attn_cache = _attn_forward(p, px + "attn.", a, cfg.num_heads)
        x = x + attn_out
        m, ln2_cache = _ln_forward(x, p[px + "ln2.gamma"], p[px + "ln2.beta"])
        fc = m @ p[px + "mlp.w_fc"] + p[px + "mlp.b_fc"]
        act, gelu_cache = _gelu_forward(fc)
        mlp_out = act @ p[px + "mlp.w_proj"] + p[px + "mlp.b_proj"]
        x = x + mlp_out
        layer_caches.append((ln1_cache, attn_cache, ln2_cache, gelu_cache, m, act))
    h, lnf_cache = _ln_forward(x, p["ln_f.gamma"], p["ln_f.beta"])
    logits = h @ p["head.w"] + p["head.b"]

    cache = None
    if want_cache:
        cache = {"ids": ids, "layers": layer_caches, "lnf": lnf_cache, "h": h}
    return ForwardOutput(logits=logits, hidden_states=h, cache=cache)


def zero_gradients(config: ModelConfig) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape, dtype=config.np_dtype) for name, shape in param_shapes(config).items()}


def _backward_sequence(model: ModelState, grads: dict, contrib: SequenceGrad) -> None:
    cfg = model.config
    p = model.params
    cache = contrib.cache
    ids = cache["ids"]
    length = ids.shape[0]
    h = cache["h"]

    d_h = np.zeros_like(h)
    if contrib.d_logits is not None:
        d_logits = np.asarray(contrib.d_logits, dtype=h.dtype)
        grads["head.w"] += h.T @ d_logits
        grads["head.b"] += d_logits.sum(axis=0)
        d_h += d_logits @ p["head.w"].T
    if contrib.d_hidden is not None:
        d_h += np.asarray(contrib.d_hidden, dtype=h.dtype)

    d_x, dgamma, dbeta = _ln_backward(d_h, cache["lnf"], p["ln_f.gamma"])
    grads["ln_f.gamma"] += dgamma
    grads["ln_f.beta"] += dbeta

    for i in reversed(range(cfg.num_layers)):
        px = f"layers.{i}."
        ln1_cache, attn_cache, ln2_cache, gelu_cache, m, act = cache["layers"][i]
        # mlp branch
        grads[px + "mlp.w_proj"] += act.T @ d_x
        grads[px + "mlp.b_proj"] += d_x.sum(axis=0)
        d_act = d_x @ p[px + "mlp.w_proj"].T
        d_fc = _gelu_backward(d_act, gelu_cache)
        grads[px + "mlp.w_fc"] += m.T @ d_fc
        grads[px + "mlp.b_fc"] += d_fc.sum(axis=0)
        d_m = d_fc @ p[px + "mlp.w_fc"].T
        d_res, dgamma, dbeta = _ln_backward(d_m, ln2_cache, p[px + "ln2.gamma"])
        grads[px + "ln2.gamma"] += dgamma
        grads[px + "ln2.beta"] += dbeta
        d_x = d_x + d_res
        # attention branch
        d_a = _attn_backward(p, grads, px + "attn.", d_x, attn_cache, cfg.num_heads)
        d_res, dgamma, dbeta = _ln_backward(d_a, ln1_cache, p[px + "ln1.gamma"])
        grads[px + "ln1.gamma"] += dgamma
        grads[px + "ln1.beta"] += dbeta
        d_x = d_x + d_res

    np.add.at(grads["tok_emb"], ids, d_x)
    grads["pos_emb"][:length] += d_x


def gradients(model: ModelState, loss_graph: LossGraph) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of a scalar loss over the parameters.

    A constant loss (no contributions) yields all-zero gradients.
    """
    value = np.asarray(loss_graph.value)
    if value.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {value.shape}")
    if not np.isfinite(float(value)):
        raise ContractError(f"loss value must be finite, got {float(value)!r}")
    grads = zero_gradients(model.config)
    for contrib in loss_graph.contributions:
        if contrib.cache is None:
            raise ContractError("loss contribution lacks a forward cache")
        _backward_sequence(model, grads, contrib)
    return grads


# ---------------------------------------------------------------------------
# generation with incremental (KV-cached) decoding


class _Decoder:
    """Incremental decoder; numerically identical to the full forward pass."""

    def __init__(self, model: ModelState):
        self.model = model
        head_dim = model.config.hidden_dim // model.config.num_heads
        empty = (model.config.num_heads, 0, head_dim)
        dt = model.config.np_dtype
        self.kv: list[tuple[np.ndarray, np.ndarray]] = [
            (np.zeros(empty, dtype=dt), np.zeros(empty, dtype=dt))
            for _ in range(model.config.num_layers)
        ]
        self.length = 0

    def feed(self, ids: np.ndarray) -> np.ndarray:
        """Append tokens and return logits of the final position."""
        cfg = self.model.config
        p = self.model.params
        if self.length + ids.shape[0] > cfg.context_length:
            raise SequenceLengthError(
                f"decoded length {self.length + ids.shape[0]} exceeds context_length {cfg.context_length}"
            )
        positions = np.arange(self.length, self.length + ids.shape[0])
        x = p["tok_emb"][ids] + p["pos_emb"][positions]
        new = ids.shape[0]
        for i in range(cfg.num_layers):
            px = f"layers.{i}."
            a, _ = _ln_forward(x, p[px + "ln1.gamma"], p[px + "ln1.beta"])
            q = a @ p[px + "attn.w_q"] + p[px + "attn.b_q"]
            k = a @ p[px + "attn.w_k"] + p[px + "attn.b_k"]
            v = a @ p[px + "attn.w_v"] + p[px + "attn.b_v"]
            qh, kh, vh = (_split_heads(t, cfg.num_heads) for t in (q, k, v))
            k_all = np.concatenate([self.kv[i][0], kh], axis=1)
            v_all = np.concatenate([self.kv[i][1], vh], axis=1)
            self.kv[i] = (k_all, v_all)
            scale = 1.0 / np.sqrt(qh.shape[-1])
            scores = (qh @ k_all.transpose(0, 2, 1)) * scale
            total = k_all.shape[1]
            # each new row t may attend to absolute positions <= self.length + t
            col = np.arange(total)[None, :]
            row_limit = (self.length + np.arange(new))[:, None]
            scores = np.where(col[None, :, :] <= row_limit[None, :, :], scores, -np.inf)
            weights = _softmax(scores)
            attn_out = _merge_heads(weights @ v_all) @ p[px + "attn.w_o"] + p[px + "attn.b_o"]
            x = x + attn_out
            m, _ = _ln_forward(x, p[px + "ln2.gamma"], p[px + "ln2.beta"])
            act, _ = _gelu_forward(m @ p[px + "mlp.w_fc"] + p[px + "mlp.b_fc"])
            x = x + act @ p[px + "mlp.w_proj"] + p[px + "mlp.b_proj"]
        self.length += new
        h, _ = _ln_forward(x[-1:], p["ln_f.gamma"], p["ln_f.beta"])
        return (h @ p["head.w"] + p["head.b"])[0]


def _sample_next(logits: np.ndarray, gen: GenerationConfig, rng: np.random.Generator) -> int:
    z = logits / gen.temperature
    if gen.top_k is not None and gen.top_k < z.shape[0]:
        # stable sort keeps ties deterministic
        order = np.argsort(-z, kind="stable")
        z = np.where(np.isin(np.arange(z.shape[0]), order[: gen.top_k]), z, -np.inf)
    probs = _softmax(z)
    if gen.top_p is not None:
        order = np.argsort(-probs, kind="stable")
        cum = np.cumsum(probs[order])
        keep_n = int(np.searchsorted(cum, gen.top_p) + 1)
        mask = np.zeros_like(probs, dtype=bool)
        mask[order[:keep_n]] = True
        probs = np.where(mask, probs, 0.0)
        probs = probs / probs.sum()
    return int(rng.choice(probs.shape[0], p=probs))


def generate(model: ModelState, prompt: TokenSequence, gen: GenerationConfig) -> list[TokenSequence]:
    """Greedy or sampled continuation of a prompt.

    Greedy ignores the sampling fields and returns one sequence; sample mode
    returns num_return_sequences independent draws, deterministic per seed.
    Generated tokens are tagged as rationale text.
    """
    ids = _as_ids(prompt)
    if ids.shape[0] == 0:
        raise DataError("prompt must contain at least one token")
    if ids.min() < 0 or ids.max() >= model.config.vocab_size:
        raise DataError(f"token id outside vocabulary of {model.config.vocab_size}")
    n_out = 1 if gen.mode == "greedy" else gen.num_return_sequences
    seeds = np.random.SeedSequence(gen.seed).spawn(n_out)
    outputs = []
    budget = min(gen.max_new_tokens, model.config.context_length - ids.shape[0])
    if budget <= 0:
        raise SequenceLengthError(
            f"prompt length {ids.shape[0]} leaves no room to generate within "
            f"context_length {model.config.context_length}"
        )
    for i in range(n_out):
        rng = np.random.default_rng(seeds[i])
        decoder = _Decoder(model)
        logits = decoder.feed(ids)
        new_ids: list[int] = []
        for _ in range(budget):
            if gen.mode == "greedy":
                nxt = int(np.argmax(logits))
            else:
                nxt = _sample_next(logits, gen, rng)
            new_ids.append(nxt)
            if gen.eos_id is not None and nxt == gen.eos_id:
                break
            if len(new_ids) == budget:
                break
            logits = decoder.feed(np.asarray([nxt], dtype=np.int64))
        full = np.concatenate([ids, np.asarray(new_ids, dtype=np.int64)])
        tags = None
        if isinstance(prompt, TokenSequence) and prompt.tags is not None:
            # let concatenate widen the string dtype; forcing the prompt's dtype
            # would truncate tags longer than any prompt tag
            tags = np.concatenate([prompt.tags, np.full(len(new_ids), SEGMENT_RATIONALE)])
        outputs.append(TokenSequence(ids=full, tags=tags))
    return outputs


def path_representation(output: ForwardOutput) -> np.ndarray:
    """Final-layer hidden state of the last token: the reasoning-path vector."""
    return output.hidden_states[-1]


def sequence_log_likelihood(
    model: ModelState, seq: TokenSequence, scored_tags: set[str] | None = None
) -> tuple[float, float]:
    """Sum of log P(token_t | tokens_<t) over scored positions, plus the mean.

    Positions are scored when their segment tag is in scored_tags (all
    positions after the first when scored_tags is None).
    """
    out = forward(model, seq)
    log_probs = log_softmax(out.logits)
    total = 0.0
    count = 0
    for t in range(1, len(seq)):
        if scored_tags is not None:
            if seq.tags is None:
                raise DataError("scored_tags given but the sequence carries no tags")
            if str(seq.tags[t]) not in scored_tags:
                continue
        total += float(log_probs[t - 1, seq.ids[t]])
        count += 1
    if count == 0:
        raise DataError("no scored positions in sequence")
    return total, total / count


# ---------------------------------------------------------------------------
# checkpoint wire format


def save_checkpoint(model: ModelState) -> bytes:
    """Serialize to the binary wire format; round-trips bitwise."""
    cfg_json = model.config.to_json().encode()
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += model.config.hash()
    blob += struct.pack("<I", len(cfg_json))
    blob += cfg_json
    blob += struct.pack("<Q", model.step_count)
    names = list(param_shapes(model.config))
    blob += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        raw = arr.tobytes()
        encoded = name.encode()
        blob += struct.pack("<I", len(encoded)) + encoded
        blob += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += struct.pack("<Q", len(raw)) + raw
    return bytes(blob)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint truncated")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(raw: bytes) -> ModelState:
    """Parse checkpoint bytes back into a model; never returns partial state."""
    r = _Reader(raw)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes; not a model checkpoint")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    stored_hash = r.take(32)
    cfg_json = r.take(r.u32())
    if hashlib.sha256(cfg_json).digest() != stored_hash:
        raise CheckpointError("config hash mismatch inside checkpoint")
    try:
        config = ModelConfig(**json.loads(cfg_json))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"unparseable checkpoint config: {exc}") from exc
    step_count = r.u64()
    n_records = r.u32()
    expected = param_shapes(config)
    if n_records != len(expected):
        raise CheckpointError(f"expected {len(expected)} parameter records, found {n_records}")
    params: dict[str, np.ndarray] = {}
    for expected_name, expected_shape in expected.items():
        name = r.take(r.u32()).decode()
        if name != expected_name:
            raise CheckpointError(f"parameter record {name!r} out of canonical order")
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        if shape != expected_shape:
            raise CheckpointError(f"parameter {name!r} has shape {shape}, expected {expected_shape}")
        raw_vals = r.take(r.u64())
        count = int(np.prod(shape)) if shape else 1
        if len(raw_vals) != count * 8:
            raise CheckpointError(f"parameter {name!r} has wrong byte length")
        arr = np.frombuffer(raw_vals, dtype="<f8").reshape(shape)
        params[name] = arr.astype(config.np_dtype)
    if r.pos != len(raw):
        raise CheckpointError("trailing bytes after final parameter record")
    return ModelState(config=config, params=params, step_count=step_count)


def checkpoint_config_hash(raw: bytes) -> bytes:
    """Read just the config hash from checkpoint bytes."""
    r = _Reader(raw)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes; not a model checkpoint")
    r.u32()
    return r.take(32)

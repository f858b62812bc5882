"""Shared helpers for the test suite."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np


def make_tiny_config(**overrides):
    """A minutes-shy experiment configuration for orchestration tests."""
    from reason_distill.config import (
        ExperimentConfig,
        ModelSettings,
        StopPolicy,
        TeacherSettings,
    )
    from reason_distill.synthetic import SyntheticTaskSpec
    from reason_distill.tailor import LossConfig, OptimizerConfig

    base = dict(
        name="tiny",
        seed=1,
        data=SyntheticTaskSpec(size=10, seed=3, num_demos=1, num_steps=(1, 1)),
        model=ModelSettings(
            num_layers=1, num_heads=2, hidden_dim=16, context_length=256, seed=5
        ),
        loss=LossConfig(lambda_weight=0.5),
        optimizer=OptimizerConfig(
            learning_rate=1e-3, epochs=1, batch_size=4, warmup_steps=5
        ),
        teacher=TeacherSettings(
            backend="oracle", success_probability=0.9, feedback_bonus=0.1, seed=2
        ),
        stop=StopPolicy(min_accuracy_gain=1.0, max_rounds=2, min_new_data=1),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


TINY_TOML = """
[experiment]
name = "tiny"
seed = 1
profile = "desk"
exam_seed = 11

[data]
size = 10
seed = 3
num_demos = 1
num_steps = [1, 1]

[model]
num_layers = 1
num_heads = 2
hidden_dim = 16
context_length = 256
seed = 5

[loss]
lambda_weight = 0.5

[optimizer]
learning_rate = 1e-3
epochs = 1
batch_size = 4
warmup_steps = 5

[teacher]
backend = "oracle"
success_probability = 0.9
feedback_bonus = 0.1
seed = 2

[stop]
min_accuracy_gain = 1.0
max_rounds = 2
min_new_data = 1
"""


def finite_difference_worst_error(
    loss_fn: Callable[[], float],
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    *,
    eps: float = 1e-5,
    samples_per_tensor: int = 24,
    seed: int = 0,
    noise_floor: float = 1e-6,
) -> float:
    """Worst per-tensor relative error between analytic and central-difference
    gradients, sampling a deterministic subset of entries per tensor.

    The relative error per tensor is norm-based over the sampled entries.
    When both norms sit below noise_floor the tensor's true gradient is zero
    (for example the key-projection bias, which cancels inside the attention
    softmax) and the comparison is noise vs noise, so it counts as exact.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in params:
        flat = params[name].ravel()
        gflat = grads[name].ravel()
        count = min(samples_per_tensor, flat.size)
        idx = rng.choice(flat.size, size=count, replace=False)
        numeric = np.empty(count)
        analytic = np.empty(count)
        for j, k in enumerate(idx):
            original = flat[k]
            flat[k] = original + eps
            loss_plus = loss_fn()
            flat[k] = original - eps
            loss_minus = loss_fn()
            flat[k] = original
            numeric[j] = (loss_plus - loss_minus) / (2 * eps)
            analytic[j] = gflat[k]
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        if denom < noise_floor:
            continue
        rel = np.linalg.norm(analytic - numeric) / denom
        worst = max(worst, rel)
    return worst

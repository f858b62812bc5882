"""Configuration loading and round-orchestration tests."""

from __future__ import annotations

import json
import shutil
from dataclasses import replace
from pathlib import Path

import pytest
from support import TINY_TOML, make_tiny_config

from reason_distill.config import (
    ExperimentConfig,
    StopPolicy,
    load_config,
)
from reason_distill.errors import ConfigError, ContractError, DataError
from reason_distill.rounds import (
    ExperimentLock,
    build_report,
    format_report,
    init_experiment,
    load_experiment,
    run_experiment,
    run_round,
    run_round_zero,
    should_stop,
)


# ---------------------------------------------------------------------------
# configuration


def test_toml_round_trip_and_profiles(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(TINY_TOML)
    config = load_config(path)
    assert config.name == "tiny"
    assert config.optimizer.learning_rate == 1e-3
    assert config.later_round_lr_scale == 0.7

    forced = load_config(path, profile="paper")
    assert forced.profile == "paper"
    # explicit optimizer settings survive a profile change
    assert forced.optimizer.learning_rate == 1e-3


def test_profile_defaults_fill_missing_optimizer(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text('[experiment]\nname = "p"\nprofile = "paper"\n')
    config = load_config(path)
    assert config.optimizer.learning_rate == 1e-6
    desk = load_config(path, profile="desk")
    assert desk.optimizer.learning_rate == 3e-4


def test_config_rejects_unknown_keys_and_bad_toml(tmp_path):
    bad_key = tmp_path / "bad.toml"
    bad_key.write_text('[experiment]\nname = "x"\nturbo = true\n')
    with pytest.raises(ConfigError):
        load_config(bad_key)
    bad_section = tmp_path / "bad2.toml"
    bad_section.write_text("[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad_section)
    bad_syntax = tmp_path / "bad3.toml"
    bad_syntax.write_text("not toml ][")
    with pytest.raises(ConfigError):
        load_config(bad_syntax)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    with pytest.raises(ConfigError):
        ExperimentConfig(profile="underwater")


def test_resolved_config_round_trip_and_hash(tmp_path, monkeypatch):
    monkeypatch.setenv("TEACHER_API_KEY", "sk-secret-do-not-store")
    config = make_tiny_config()
    path = config.save_resolved(tmp_path)
    text = path.read_text()
    assert "sk-secret-do-not-store" not in text
    assert "TEACHER_API_KEY" in text  # the env var *name* is recorded

    reloaded = ExperimentConfig.from_resolved(path)
    assert reloaded == config
    assert reloaded.hash() == config.hash()
    other = replace(config, seed=config.seed + 1)
    assert other.hash() != config.hash()


def test_stop_policy_validation():
    with pytest.raises(ConfigError):
        StopPolicy(max_rounds=0)
    with pytest.raises(ConfigError):
        StopPolicy(min_new_data=-1)


# ---------------------------------------------------------------------------
# stop policy decisions


def _metrics(k, *, test_acc, er_before=50.0, er_after=50.0, new_train=3):
    return {
        "round_index": k,
        "test_accuracy": test_acc,
        "error_rate_before": er_before,
        "error_rate_after": er_after,
        "new_train_records": new_train,
    }


def test_should_stop_cases():
    policy = StopPolicy(min_accuracy_gain=1.0, max_rounds=3, min_new_data=2)
    assert not should_stop(policy, []).stop
    assert not should_stop(policy, [_metrics(0, test_acc=0.0)]).stop

    history = [_metrics(0, test_acc=0.0), _metrics(1, test_acc=30.0)]
    assert not should_stop(policy, history).stop

    plateau = history + [_metrics(2, test_acc=30.5)]
    assert should_stop(policy, plateau).reason == "accuracy_plateau"

    capped = history + [
        _metrics(2, test_acc=40.0),
        _metrics(3, test_acc=50.0),
    ]
    assert should_stop(policy, capped).reason == "max_rounds"

    starved = history + [_metrics(2, test_acc=40.0, new_train=1)]
    assert should_stop(policy, starved).reason == "no_new_data"

    solved = [
        _metrics(0, test_acc=0.0),
        _metrics(1, test_acc=100.0, er_before=0.0, er_after=0.0),
    ]
    assert should_stop(policy, solved).reason == "no_mistakes"


# ---------------------------------------------------------------------------
# experiment lifecycle


def test_run_experiment_produces_complete_artifacts(tmp_path):
    root = tmp_path / "exp"
    summary = run_experiment(root, make_tiny_config())
    assert summary["stop_reason"] in (
        "accuracy_plateau",
        "max_rounds",
        "no_new_data",
        "no_mistakes",
    )
    rounds = summary["rounds"]
    assert rounds[0]["round_index"] == 0
    assert len(rounds) >= 2

    for blob in rounds:
        k = blob["round_index"]
        rd = root / "rounds" / f"round_{k}"
        assert (rd / "checkpoint.bin").exists()
        assert (rd / "metrics.json").exists()
        assert (rd / "eval_report.json").exists()
        assert blob["error_rate_after"] == pytest.approx(100.0 - blob["train_accuracy"])
        assert blob["config_hash"] == summary["config_hash"]
        if k >= 1:
            assert (rd / "exam_report.json").exists()
            assert (rd / "losses.csv").exists()
            assert (rd / "train.jsonl").exists()
        if blob.get("reflection") is not None:
            assert (rd / "diagnostics.json").exists()
            assert (rd / "projection.csv").exists()
            diag = json.loads((rd / "diagnostics.json").read_text())
            assert len(diag["pairs"]) == diag["num_pairs"]
            assert diag["preference"] == blob["reflection"]["preference"]
            header, *data_rows = (rd / "projection.csv").read_text().strip().split("\n")
            assert header == "sample_id,label,x,y"
            assert len(data_rows) == blob["train_pool"] + blob["neg_pool"]
    assert (root / "rounds" / "round_0" / "bootstrap_report.json").exists()
    assert (root / "summary.json").exists()
    assert not (root / "lock").exists()

    # training pool only ever grows
    pools = [b["train_pool"] for b in rounds]
    assert pools == sorted(pools)

    # persisted store round-trips through load_experiment
    exp = load_experiment(root)
    assert len(exp.store.train_rationales) == rounds[-1]["train_pool"]
    assert len(exp.store.neg_rationales) == rounds[-1]["neg_pool"]
    exp.store.check_invariants()


def test_two_runs_are_bitwise_identical(tmp_path):
    config = make_tiny_config()
    summary_a = run_experiment(tmp_path / "a", config)
    summary_b = run_experiment(tmp_path / "b", config)
    assert summary_a == summary_b
    for blob in summary_a["rounds"]:
        k = blob["round_index"]
        rel = Path("rounds") / f"round_{k}"
        metrics_a = (tmp_path / "a" / rel / "metrics.json").read_bytes()
        metrics_b = (tmp_path / "b" / rel / "metrics.json").read_bytes()
        assert metrics_a == metrics_b
        ckpt_a = (tmp_path / "a" / rel / "checkpoint.bin").read_bytes()
        ckpt_b = (tmp_path / "b" / rel / "checkpoint.bin").read_bytes()
        assert ckpt_a == ckpt_b
    assert (tmp_path / "a" / "data" / "rationales.jsonl").read_bytes() == (
        tmp_path / "b" / "data" / "rationales.jsonl"
    ).read_bytes()


def test_interrupted_round_resumes_identically(tmp_path):
    config = make_tiny_config()
    reference = tmp_path / "ref"
    run_experiment(reference, config)

    # simulate a crash: round 0 completed, round 1 only half-written
    broken = tmp_path / "broken"
    exp = init_experiment(broken, config)
    run_round_zero(exp)
    exp = load_experiment(broken)
    rd = exp.round_dir(1)
    rd.mkdir(parents=True)
    (rd / "exam_report.json").write_text('{"partial": true}')
    (rd / "losses.csv").write_text("step,lm_loss\n")

    resumed = run_experiment(broken, config)
    for blob in resumed["rounds"]:
        k = blob["round_index"]
        rel = Path("rounds") / f"round_{k}" / "metrics.json"
        assert (broken / rel).read_bytes() == (reference / rel).read_bytes()
        rel_ckpt = Path("rounds") / f"round_{k}" / "checkpoint.bin"
        assert (broken / rel_ckpt).read_bytes() == (reference / rel_ckpt).read_bytes()


def test_run_experiment_rejects_conflicting_config(tmp_path):
    root = tmp_path / "exp"
    config = make_tiny_config()
    run_experiment(root, config)
    with pytest.raises(ConfigError):
        run_experiment(root, replace(config, seed=999))
    # resuming with the same or no config is fine
    again = run_experiment(root, config)
    assert again["rounds"][-1]["round_index"] >= 1


def test_lock_blocks_concurrent_runs(tmp_path):
    root = tmp_path / "exp"
    config = make_tiny_config()
    exp = init_experiment(root, config)
    with ExperimentLock(exp.root):
        with pytest.raises(ContractError):
            run_experiment(root, config)
    summary = run_experiment(root, config)  # lock released, run proceeds
    assert summary["rounds"]
    assert not (root / "lock").exists()


def test_round_requires_previous_round(tmp_path):
    exp = init_experiment(tmp_path / "exp", make_tiny_config())
    with pytest.raises(DataError):
        run_round(exp, 1)  # round 0 not yet complete
    with pytest.raises(ContractError):
        run_round(exp, 0)


def test_load_model_rejects_other_architectures(tmp_path):
    from reason_distill.model import ModelConfig, init_model, save_checkpoint

    root = tmp_path / "exp"
    exp = init_experiment(root, make_tiny_config())
    run_round_zero(exp)
    other = init_model(
        ModelConfig(
            vocab_size=exp.tokenizer.vocab_size,
            context_length=256,
            num_layers=2,
            num_heads=2,
            hidden_dim=16,
            seed=5,
        )
    )
    exp.checkpoint_path(0).write_bytes(save_checkpoint(other))
    with pytest.raises(ConfigError):
        exp.load_model(0)


# ---------------------------------------------------------------------------
# reporting


def test_report_recomputes_and_verifies(tmp_path):
    root = tmp_path / "exp"
    summary = run_experiment(root, make_tiny_config())
    report = build_report(root)
    by_round = {b["round_index"]: b for b in summary["rounds"]}
    for row in report["rounds"]:
        stored = by_round[row["round_index"]]
        assert row["train_accuracy"] == stored["train_accuracy"]
        assert row["test_accuracy"] == stored["test_accuracy"]
        assert row["error_rate_after"] == stored["error_rate_after"]
        if "error_rate_before" in row:
            assert row["error_rate_before"] == stored["error_rate_before"]
    text = format_report(report)
    assert "round" in text and str(len(report["rounds"]) - 1) in text


def test_report_detects_tampered_metrics(tmp_path):
    root = tmp_path / "exp"
    run_experiment(root, make_tiny_config())
    metrics_path = root / "rounds" / "round_1" / "metrics.json"
    blob = json.loads(metrics_path.read_text())
    blob["train_accuracy"] = blob["train_accuracy"] + 5.0
    metrics_path.write_text(json.dumps(blob, sort_keys=True, indent=2))
    with pytest.raises(ContractError):
        build_report(root)


def test_report_detects_tampered_checkpoint(tmp_path):
    root = tmp_path / "exp"
    run_experiment(root, make_tiny_config())
    ckpt = root / "rounds" / "round_1" / "checkpoint.bin"
    raw = bytearray(ckpt.read_bytes())
    raw[-1] ^= 0xFF
    ckpt.write_bytes(bytes(raw))
    with pytest.raises(ContractError):
        build_report(root)


def test_report_requires_completed_rounds(tmp_path):
    init_experiment(tmp_path / "exp", make_tiny_config())
    with pytest.raises(DataError):
        build_report(tmp_path / "exp")


def test_init_refuses_existing_experiment(tmp_path):
    root = tmp_path / "exp"
    init_experiment(root, make_tiny_config())
    with pytest.raises(ConfigError):
        init_experiment(root, make_tiny_config())
    shutil.rmtree(root)
    init_experiment(root, make_tiny_config())

"""Exam harvesting and evaluation/diagnostic metric tests."""

from __future__ import annotations

import numpy as np
import pytest

from reason_distill.corpus import DatasetStore, Sample, encode_path, judge
from reason_distill.errors import DataError
from reason_distill.exam import ExamReport, merge_exam, run_exam
from reason_distill.metrics import (
    SCORED_TAGS,
    evaluate,
    project_2d,
    project_paths,
    reflection_diagnostics,
    sweep_lambda,
    write_projection_csv,
)
from reason_distill.model import (
    ModelConfig,
    TokenSequence,
    forward,
    init_model,
    path_representation,
    sequence_log_likelihood,
)
from reason_distill.synthetic import SyntheticTaskSpec, default_tokenizer, generate_synthetic
from reason_distill.tailor import OptimizerConfig


class ScriptedStudent:
    """Duck-typed student that replays scripted continuations per prompt."""

    def __init__(self, tokenizer, script_by_prompt):
        self.tokenizer = tokenizer
        self.script = script_by_prompt

    def generate(self, prompt, cfg):
        entry = self.script[prompt.ids.tobytes()]
        texts = [entry["greedy"]] if cfg.mode == "greedy" else list(entry["sample"])
        out = []
        for text in texts:
            ids = np.asarray(self.tokenizer.encode(text), dtype=np.int64)
            out.append(TokenSequence(ids=np.concatenate([prompt.ids, ids])))
        return out


def _scripted_setup():
    from reason_distill.corpus import encode_prompt

    tok = default_tokenizer()
    samples = [
        Sample(id="q1", question="ben has 1 pen . how many pens ?", gold_answer="1", task_type="numeric"),
        Sample(id="q2", question="mia has 2 coins . how many coins ?", gold_answer="2", task_type="numeric"),
        Sample(id="q3", question="sam has 3 hats . how many hats ?", gold_answer="3", task_type="numeric"),
        Sample(id="q4", question="leo has 4 cups . how many cups ?", gold_answer="4", task_type="numeric"),
    ]
    by_question = {
        samples[0].id: {
            "greedy": "1 = 1 .\nAnswer: 1",
            "sample": ["1 = 1 .\nAnswer: 1", "1 + 1 = 2 .\nAnswer: 2", "so 3 .\nAnswer: 3", ""],
        },
        samples[1].id: {
            "greedy": "2 + 2 = 4 .\nAnswer: 4",
            "sample": ["2 .\nAnswer: 2", "2 .\nAnswer: 2", "5 .\nAnswer: 5", "5 .\nAnswer: 5"],
        },
        samples[2].id: {
            "greedy": "3 .\nAnswer: 3",
            "sample": ["3 .\nAnswer: 3"] * 4,
        },
        samples[3].id: {
            "greedy": "mumbling with no final line",
            "sample": ["4 .\nAnswer: 4", "9 .\nAnswer: 9", "8 .\nAnswer: 8", "7 .\nAnswer: 7"],
        },
    }
    script = {
        encode_prompt(tok, None, s).ids.tobytes(): by_question[s.id] for s in samples
    }
    return tok, samples, ScriptedStudent(tok, script)


def test_exam_error_rate_counts_greedy_misses():
    tok, samples, student = _scripted_setup()
    report = run_exam(student, samples, tok, None, round_index=1, seed=0)
    # q1 and q3 greedy-correct; q2 wrong answer; q4 no extractable answer
    by_id = {q.sample_id: q for q in report.per_question}
    assert by_id["q1"].greedy_correct and by_id["q3"].greedy_correct
    assert not by_id["q2"].greedy_correct and not by_id["q4"].greedy_correct
    assert report.error_rate == pytest.approx(50.0)
    assert by_id["q4"].greedy_extracted is None
    recount = 100.0 * sum(not q.greedy_correct for q in report.per_question) / 4
    assert report.to_json()["error_rate"] == pytest.approx(recount)


def test_exam_collects_only_wrong_samples():
    tok, samples, student = _scripted_setup()
    report = run_exam(student, samples, tok, None, round_index=1, seed=0)
    by_id = {q.sample_id: q for q in report.per_question}
    assert by_id["q1"].wrong_texts == ("1 + 1 = 2 .\nAnswer: 2", "so 3 .\nAnswer: 3")
    assert by_id["q2"].wrong_texts == ("5 .\nAnswer: 5", "5 .\nAnswer: 5")
    assert by_id["q3"].wrong_texts == ()
    assert len(by_id["q4"].wrong_texts) == 3
    for record in report.wrong_records:
        assert record.source == "student"
        assert record.round_index == 1
        assert not record.correct

    store = DatasetStore(samples=samples)
    added = merge_exam(store, report)
    # q2's duplicate wrong text collapses in the store
    assert added.added_incorrect == len(report.wrong_records) - 1
    assert added.dropped_duplicate == 1
    assert len(store.train_rationales) == 0
    store.check_invariants()


def test_exam_is_deterministic_and_per_question_seeded():
    data = generate_synthetic(SyntheticTaskSpec(size=8, seed=4, num_demos=1))
    tok = default_tokenizer()
    model = init_model(
        ModelConfig(vocab_size=tok.vocab_size, context_length=256, num_layers=1,
                    num_heads=2, hidden_dim=16, seed=0)
    )
    first = run_exam(model, data.train[:3], tok, data.demos, round_index=1, seed=11)
    second = run_exam(model, data.train[:3], tok, data.demos, round_index=1, seed=11)
    assert first.to_json() == second.to_json()

    other_seed = run_exam(model, data.train[:3], tok, data.demos, round_index=1, seed=12)
    assert first.to_json() != other_seed.to_json()

    # a question's draws do not depend on which other questions sat the exam
    solo = run_exam(model, [data.train[1]], tok, data.demos, round_index=1, seed=11)
    full_entry = {q.sample_id: q for q in first.per_question}[data.train[1].id]
    assert solo.per_question[0].wrong_texts == full_entry.wrong_texts


def test_untrained_student_fails_the_exam():
    data = generate_synthetic(SyntheticTaskSpec(size=8, seed=4, num_demos=1))
    tok = default_tokenizer()
    model = init_model(
        ModelConfig(vocab_size=tok.vocab_size, context_length=256, num_layers=1,
                    num_heads=2, hidden_dim=16, seed=0)
    )
    report = run_exam(model, data.train[:4], tok, data.demos, round_index=1, seed=3)
    assert report.error_rate == pytest.approx(100.0)
    assert len(report.wrong_records) > 0


def test_exam_rejects_empty_sample_list():
    tok, _, student = _scripted_setup()
    with pytest.raises(DataError):
        run_exam(student, [], tok, None, round_index=1, seed=0)
    with pytest.raises(DataError):
        ExamReport(round_index=1, seed=0).error_rate


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_accuracy_and_order():
    tok, samples, student = _scripted_setup()
    report = evaluate(student, samples, tok, None, split="test")
    assert report.accuracy == pytest.approx(50.0)
    assert [e.sample_id for e in report.per_sample] == ["q1", "q2", "q3", "q4"]
    blob = report.to_json()
    assert blob["split"] == "test"
    assert blob["accuracy"] == pytest.approx(
        100.0 * sum(e["correct"] for e in blob["per_sample"]) / len(blob["per_sample"])
    )
    with pytest.raises(DataError):
        evaluate(student, [], tok, None)


# ---------------------------------------------------------------------------
# reflection diagnostics


def _reflection_setup():
    tok = default_tokenizer()
    sample = Sample(
        id="s1",
        question="ben has 3 pens . ben buys 4 more pens . how many pens does ben have now ?",
        gold_answer="7",
        task_type="numeric",
    )
    store = DatasetStore(samples=[sample])
    good = judge("3 + 4 = 7 .\nAnswer: 7", sample, source="teacher", round_index=1)
    bad = judge("3 + 4 = 8 .\nAnswer: 8", sample, source="student", round_index=1)
    store.append_rationales([good, bad])
    model = init_model(
        ModelConfig(vocab_size=tok.vocab_size, context_length=128, num_layers=1,
                    num_heads=2, hidden_dim=16, seed=1)
    )
    return tok, sample, store, model, good, bad


def test_reflection_centroid_matches_direct_computation():
    tok, sample, store, model, good, bad = _reflection_setup()
    report = reflection_diagnostics(model, store, tok)
    va = path_representation(forward(model, encode_path(tok, sample, good)))
    vb = path_representation(forward(model, encode_path(tok, sample, bad)))
    assert report.centroid_distance == pytest.approx(float(np.linalg.norm(va - vb)), rel=1e-12)
    assert report.num_pairs == 1


def test_reflection_preference_matches_likelihood_order():
    tok, sample, store, model, good, bad = _reflection_setup()
    report = reflection_diagnostics(model, store, tok)
    good_ll = sequence_log_likelihood(model, encode_path(tok, sample, good), SCORED_TAGS)[1]
    bad_ll = sequence_log_likelihood(model, encode_path(tok, sample, bad), SCORED_TAGS)[1]
    if good_ll > bad_ll:
        assert report.preference == 100.0
    elif good_ll == bad_ll:
        assert report.preference == 50.0
    else:
        assert report.preference == 0.0
    assert len(report.pair_ratios) == 1
    pair = report.pair_ratios[0]
    assert pair.sample_id == "s1"
    assert pair.log_ratio == pytest.approx(good_ll - bad_ll, rel=1e-12)
    assert report.mean_log_likelihood_ratio == pytest.approx(pair.log_ratio, rel=1e-12)
    blob = report.to_diagnostics_json()
    assert blob["mean_log_likelihood_ratio"] == report.mean_log_likelihood_ratio
    assert blob["pairs"][0]["likelihood_ratio"] == pytest.approx(
        np.exp(pair.log_ratio), rel=1e-12
    )
    assert "pairs" not in report.to_json()


def test_reflection_requires_both_pools():
    tok, sample, store, model, good, bad = _reflection_setup()
    only_good = DatasetStore(samples=[sample])
    only_good.append_rationales([good])
    with pytest.raises(DataError):
        reflection_diagnostics(model, only_good, tok)


def test_project_paths_rows_and_csv(tmp_path):
    tok, sample, store, model, good, bad = _reflection_setup()
    with pytest.warns(UserWarning):  # two points span only one direction
        rows = project_paths(model, store, tok)
    assert [(r.sample_id, r.label) for r in rows] == [("s1", "correct"), ("s1", "wrong")]
    va = path_representation(forward(model, encode_path(tok, sample, good)))
    vb = path_representation(forward(model, encode_path(tok, sample, bad)))
    with pytest.warns(UserWarning):  # two points span only one direction
        points, _ = project_2d(np.vstack([va, vb]))
    assert rows[0].x == points[0, 0] and rows[1].x == points[1, 0]

    out = tmp_path / "projection.csv"
    write_projection_csv(out, rows)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "sample_id,label,x,y"
    first = lines[1].split(",")
    assert first[0] == "s1" and first[1] == "correct"
    assert float(first[2]) == rows[0].x and float(first[3]) == rows[0].y

    empty = DatasetStore(samples=[sample])
    with pytest.raises(DataError):
        project_paths(model, empty, tok)


# ---------------------------------------------------------------------------
# 2-D projection


def test_projection_recovers_a_line():
    direction = np.array([3.0, 4.0, 0.0, 0.0, 0.0]) / 5.0
    data = np.outer(np.array([-2.0, -1.0, 0.0, 1.0, 2.0]), direction)
    with pytest.warns(UserWarning):  # the second direction has no variance
        points, components = project_2d(data)
    assert components[0] == pytest.approx(direction, abs=1e-12)
    assert points[:, 0] == pytest.approx([-2, -1, 0, 1, 2], abs=1e-12)
    assert np.allclose(points[:, 1], 0.0)
    assert np.allclose(components[1], 0.0)


def test_projection_matches_covariance_eigendecomposition():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(40, 6)) @ np.diag([5, 3, 1, 0.5, 0.2, 0.1])
    points, components = project_2d(data)
    centered = data - data.mean(axis=0)
    eigvals, eigvecs = np.linalg.eigh(np.cov(centered, rowvar=False))
    order = np.argsort(eigvals)[::-1]
    for k in range(2):
        expected = eigvecs[:, order[k]]
        if expected[np.argmax(np.abs(expected))] < 0:
            expected = -expected
        assert components[k] == pytest.approx(expected, abs=1e-8)
        assert points[:, k] == pytest.approx(centered @ expected, abs=1e-8)
    assert abs(components[0] @ components[1]) < 1e-10
    assert points[:, 0].var() >= points[:, 1].var()


def test_projection_degenerate_inputs_warn_and_zero():
    with pytest.warns(UserWarning):
        points, components = project_2d(np.array([[1.0, 2.0]]))
    assert np.allclose(points, 0) and np.allclose(components, 0)
    with pytest.warns(UserWarning):
        points, _ = project_2d(np.ones((4, 3)))
    assert np.allclose(points, 0)
    with pytest.raises(DataError):
        project_2d(np.ones(3))


# ---------------------------------------------------------------------------
# contrastive-weight sweep


def _sweep_setup():
    data = generate_synthetic(SyntheticTaskSpec(size=8, seed=6, num_demos=1))
    tok = default_tokenizer()
    store = DatasetStore(samples=data.train)
    records = []
    for sample in data.train:
        records.append(judge(data.bank[sample.id][0], sample, source="teacher", round_index=0))
        wrong = f"1 + 1 = 3 .\nAnswer: {int(sample.gold_answer) + 2}"
        records.append(judge(wrong, sample, source="student", round_index=1))
    store.append_rationales(records)
    config = ModelConfig(vocab_size=tok.vocab_size, context_length=256, num_layers=1,
                         num_heads=2, hidden_dim=16, seed=5)
    opt = OptimizerConfig(learning_rate=1e-3, epochs=1, batch_size=4, warmup_steps=5)
    return data, tok, store, config, opt


def test_sweep_always_includes_zero_and_is_deterministic(tmp_path):
    data, tok, store, config, opt = _sweep_setup()
    report = sweep_lambda(
        config, store, tok, data.demos, data.test[:3], opt, lambdas=(0.5,), seed=1
    )
    assert [r.lambda_weight for r in report.rows] == [0.0, 0.5]
    again = sweep_lambda(
        config, store, tok, data.demos, data.test[:3], opt, lambdas=(0.5,), seed=1
    )
    assert report.rows == again.rows

    path = tmp_path / "sweep.csv"
    report.write_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "lambda,accuracy,final_lm,preference,centroid_distance"
    assert len(lines) == 3
    assert float(lines[1].split(",")[0]) == 0.0
    assert report.row(0.5).lambda_weight == 0.5
    with pytest.raises(DataError):
        report.row(9.9)

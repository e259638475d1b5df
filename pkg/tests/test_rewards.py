import re
import string

import numpy as np
import pytest

from thinktrain import (
    EmptyBatch,
    EmptyTruth,
    ReasoningOutput,
    RewardSpec,
    Sample,
    Trajectory,
    audio_reward,
    batch_objective,
    score_generation,
    text_reward,
    verify_answer,
)
from thinktrain.rewards import iter_reward_audit, write_reward_audit


def reference_normalize(s):
    # independent oracle for the normalized matcher
    s = s.strip().casefold()
    s = re.sub(r"\s+", " ", s)
    return s.rstrip(string.punctuation).rstrip()


def test_verify_exact():
    assert verify_answer("42", "42", "exact") == 1
    assert verify_answer(" 42 ", "42", "exact") == 1
    assert verify_answer("41", "42", "exact") == 0
    assert verify_answer("42.", "42", "exact") == 0


def test_verify_normalized_against_oracle():
    cases = [
        ("42.", "42"), ("  Minor Key ", "minor key"), ("B)", "B"),
        ("a  b", "a b"), ("Yes!", "yes"), ("nope", "yes"), ("4 2", "42"),
    ]
    for a, truth in cases:
        expected = int(reference_normalize(a) == reference_normalize(truth))
        assert verify_answer(a, truth, "normalized") == expected


def test_verify_empty_truth():
    with pytest.raises(EmptyTruth):
        verify_answer("x", "   ")


def test_text_reward_binary():
    spec = RewardSpec()
    assert text_reward(ReasoningOutput("r", "42"), "42", spec).value == 1.0
    assert text_reward(ReasoningOutput("r", "41"), "42", spec).value == 0.0
    # format irrelevant for text
    assert text_reward(ReasoningOutput("", "42"), "42", spec).value == 1.0


def test_audio_reward_default_weights():
    spec = RewardSpec()
    think = "minor key progression"
    assert audio_reward(ReasoningOutput(think, "42"), "42", spec).value == 1.0
    assert audio_reward(ReasoningOutput(think, "41"), "42", spec).value == pytest.approx(0.2)
    assert audio_reward(ReasoningOutput("\n\n", "42"), "42", spec).value == pytest.approx(0.8)
    assert audio_reward(ReasoningOutput("\n\n", "41"), "42", spec).value == 0.0


def test_audio_reward_range_for_any_weights():
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = float(rng.uniform(0, 1))
        spec = RewardSpec(w_acc=w, w_fmt=1.0 - w)
        values = {
            audio_reward(ReasoningOutput(t, a), "42", spec).value
            for t in ("\n\n", "deep think")
            for a in ("42", "no")
        }
        assert values == {0.0, spec.w_fmt, spec.w_acc, spec.w_acc + spec.w_fmt} or w in (0.0, 1.0)


def test_audio_reward_monotonicity_and_identity():
    spec = RewardSpec()
    rng = np.random.default_rng(1)
    thinks = ["", "\n\n", "some think", "x", " \t"]
    answers = ["42", "41", " 42 ", "nope"]
    for _ in range(1000):
        out = ReasoningOutput(str(rng.choice(thinks)), str(rng.choice(answers)))
        r = audio_reward(out, "42", spec)
        # identity: composite = w_acc * text + w_fmt * presence
        t = text_reward(out, "42", spec)
        assert r.value == pytest.approx(spec.w_acc * t.value + spec.w_fmt * r.fmt_part)
        # monotonicity: flipping a part up never lowers the value
        assert r.value >= spec.w_acc * r.acc_part
        assert r.value >= spec.w_fmt * r.fmt_part


def _traj():
    return Trajectory((0,), (1,), (-1.0,), (0.0,))


def test_batch_objective_examples():
    spec = RewardSpec()
    audio = [audio_reward(ReasoningOutput("deep think", "42"), "42", spec),
             audio_reward(ReasoningOutput("deep think", "41"), "42", spec)]
    text = [text_reward(ReasoningOutput("", "42"), "42", spec)]
    scored = [(_traj(), r) for r in audio + text]
    value = batch_objective(scored, ["audio", "audio", "text"])
    assert value == pytest.approx(0.6 + 1.0)


def test_batch_objective_all_text():
    spec = RewardSpec()
    scored = [(_traj(), text_reward(ReasoningOutput("", a), "42", spec)) for a in ("41", "42")]
    assert batch_objective(scored, ["text", "text"]) == pytest.approx(0.5)


def test_batch_objective_empty():
    with pytest.raises(EmptyBatch):
        batch_objective([], [])


def test_batch_objective_matches_brute_force():
    rng = np.random.default_rng(5)
    spec = RewardSpec()
    scored, labels = [], []
    for _ in range(200):
        label = str(rng.choice(["audio", "text"]))
        out = ReasoningOutput(str(rng.choice(["", "think hard"])), str(rng.choice(["42", "no"])))
        r = audio_reward(out, "42", spec) if label == "audio" else text_reward(out, "42", spec)
        scored.append((_traj(), r))
        labels.append(label)
    audio_vals = [r.value for (_, r), l in zip(scored, labels) if l == "audio"]
    text_vals = [r.value for (_, r), l in zip(scored, labels) if l == "text"]
    brute = (sum(audio_vals) / len(audio_vals) if audio_vals else 0.0) + \
            (sum(text_vals) / len(text_vals) if text_vals else 0.0)
    assert abs(batch_objective(scored, labels) - brute) < 1e-12


def test_score_generation_malformed_is_conservative():
    sample = Sample(id="s", modality="audio", question="q", answer_truth="42", audio_ref="audio://s")
    result, out, ok = score_generation("42", sample, RewardSpec())
    assert not ok
    assert result.fmt_part == 0
    assert result.acc_part == 1
    assert result.value == pytest.approx(0.8)


def test_reward_audit_round_trip(tmp_path):
    rows = [
        {"sample_id": "s1/c0", "acc_part": 1, "fmt_part": 0, "value": 0.8},
        {"sample_id": "s1/c1", "acc_part": 0, "fmt_part": 1, "value": 0.2},
    ]
    path = tmp_path / "audit.jsonl"
    write_reward_audit(path, rows)
    loaded = list(iter_reward_audit(path))
    assert loaded == rows
    assert set(loaded[0]) == {"sample_id", "acc_part", "fmt_part", "value"}

import pytest

from thinktrain import (
    GeneratorSpec,
    ReasoningOutput,
    RewardSpec,
    UnsupportedKind,
    Vocabulary,
    build_ablation_env,
    default_vocab,
    generate,
    load_lexicons,
    rule_judge,
    save_dataset,
    validate_dataset,
    verify_answer,
)

LEX = load_lexicons()


def test_generator_spec_invariants():
    with pytest.raises(ValueError):
        GeneratorSpec(kind="copy_task", size=0)
    with pytest.raises(ValueError):
        GeneratorSpec(kind="copy_task", size=1, error_injection_rate=1.5)


def test_unknown_kind():
    with pytest.raises(UnsupportedKind):
        generate(GeneratorSpec(kind="mystery_task", size=3), default_vocab("copy_task"))
    with pytest.raises(UnsupportedKind):
        default_vocab("mystery_task")


def test_vocab_mismatch():
    with pytest.raises(UnsupportedKind):
        generate(GeneratorSpec(kind="perception_task", size=3), default_vocab("copy_task"))


@pytest.mark.parametrize("kind", ["copy_task", "arithmetic_task", "perception_task", "cognition_task"])
def test_all_kinds_validate_clean(kind):
    dataset = generate(GeneratorSpec(kind=kind, size=40, error_injection_rate=0.1, seed=2),
                       default_vocab(kind))
    assert validate_dataset(dataset) == []
    assert len(dataset) == 40
    assert dataset.provenance["generator"] == kind


def test_copy_answers_verify_by_construction():
    dataset = generate(GeneratorSpec(kind="copy_task", size=50, seed=3), default_vocab("copy_task"))
    for item in dataset.samples:
        assert item.answer_truth in item.question.split()
        assert verify_answer(item.answer_truth, item.answer_truth, "exact") == 1


def test_arithmetic_answers_are_sums():
    dataset = generate(GeneratorSpec(kind="arithmetic_task", size=50, seed=4),
                       default_vocab("arithmetic_task"))
    for item in dataset.samples:
        words = item.question.split()
        a, b = int(words[2]), int(words[4])
        assert item.answer_truth == str(a + b)


def test_cognition_injection_is_count_exact():
    vocab = default_vocab("cognition_task")
    dataset = generate(GeneratorSpec(kind="cognition_task", size=5000,
                                     error_injection_rate=0.0676, seed=5), vocab)
    injected = [s for s in dataset.samples if "denial-injected" in s.tags]
    assert len(injected) == 338  # round(0.0676 * 5000)
    for item in injected:
        assert "cannot hear" in item.response_truth
    for item in dataset.samples:
        assert "self-cognition" in item.tags


def test_cognition_rate_rounding():
    vocab = default_vocab("cognition_task")
    dataset = generate(GeneratorSpec(kind="cognition_task", size=150,
                                     error_injection_rate=0.0676, seed=6), vocab)
    assert sum("denial-injected" in s.tags for s in dataset.samples) == 10  # round(10.14)


def test_same_seed_identical_bytes(tmp_path):
    vocab = default_vocab("perception_task")
    spec = GeneratorSpec(kind="perception_task", size=30, error_injection_rate=0.2, seed=7)
    save_dataset(generate(spec, vocab), tmp_path / "a.jsonl")
    save_dataset(generate(spec, vocab), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    other = GeneratorSpec(kind="perception_task", size=30, error_injection_rate=0.2, seed=8)
    save_dataset(generate(other, vocab), tmp_path / "c.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() != (tmp_path / "c.jsonl").read_bytes()


def test_perception_reference_chains_pass_rule_judge_exhaustively():
    dataset = generate(GeneratorSpec(kind="perception_task", size=60,
                                     error_injection_rate=0.25, seed=9),
                       default_vocab("perception_task"))
    poisoned = grounded = 0
    for item in dataset.samples:
        verdict = rule_judge(item, ReasoningOutput(item.native_think, item.response_truth), LEX)
        if "poisoned" in item.tags:
            poisoned += 1
            assert not verdict.grounding, item.native_think
        else:
            grounded += 1
            assert verdict.grounding and verdict.coherence, item.native_think
    assert poisoned == 15  # count-exact injection
    assert grounded == 45


def test_generated_questions_tokenize_over_default_vocab():
    for kind in ("copy_task", "arithmetic_task", "perception_task", "cognition_task"):
        vocab = default_vocab(kind)
        dataset = generate(GeneratorSpec(kind=kind, size=20, error_injection_rate=0.1, seed=10), vocab)
        for item in dataset.samples:
            vocab.tokenize(item.question)
            if item.native_think:
                vocab.tokenize(item.native_think)
            vocab.tokenize(item.response_truth)


def test_combined_vocab_covers_multiple_kinds():
    vocab = default_vocab(("perception_task", "arithmetic_task"))
    for kind in ("perception_task", "arithmetic_task"):
        generate(GeneratorSpec(kind=kind, size=5, seed=11), vocab)


def test_ablation_env_shape():
    env = build_ablation_env()
    assert env.vocab.size <= 8
    assert env.max_len <= 6
    assert len(env.prompts) == 2
    assert validate_dataset(env.prompts) == []
    assert validate_dataset(env.coldstart) == []
    # empty-think targets dominate the cold start
    empty = sum(1 for s in env.coldstart.samples if not s.native_think)
    content = sum(1 for s in env.coldstart.samples if s.native_think)
    assert empty > content

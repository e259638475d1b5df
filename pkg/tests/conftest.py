"""Shared fixtures: small corpora, cold-started policies, judge closures."""

import pytest

import thinktrain as tt
from thinktrain.loop import LoopPools, sft_on_datasets


@pytest.fixture(scope="session")
def lexicons():
    return tt.load_lexicons()


@pytest.fixture(scope="session")
def rule_judge_fn(lexicons):
    def judge(sample, out):
        return tt.rule_judge(sample, out, lexicons)

    return judge


@pytest.fixture(scope="session")
def loop_vocab():
    return tt.default_vocab(("perception_task", "arithmetic_task"))


@pytest.fixture(scope="session")
def loop_pools(loop_vocab):
    perception = tt.generate(
        tt.GeneratorSpec(kind="perception_task", size=12, error_injection_rate=0.25, seed=2),
        loop_vocab,
    )
    task = tt.generate(tt.GeneratorSpec(kind="arithmetic_task", size=10, seed=3), loop_vocab)
    rl_text = tt.generate(tt.GeneratorSpec(kind="arithmetic_task", size=20, seed=4), loop_vocab)
    rl = tt.compose_rl_mix(rl_text, perception, n_text=6, n_audio=6, seed=5)
    return LoopPools(perception=perception, task=task, rl=rl)


@pytest.fixture(scope="session")
def coldstarted_loop_policy(loop_vocab, loop_pools):
    policy = tt.ToyPolicy.initial(loop_vocab, m=4)
    return sft_on_datasets(
        policy, [loop_pools.perception, loop_pools.task], tt.DEFAULT_FORMAT,
        steps=400, step_size=1.0,
    )


@pytest.fixture()
def smoke_loop_config():
    return tt.LoopConfig(
        T=2,
        curation=tt.CurationConfig(distill_samples=6, temperature=0.7),
        ppo=tt.PpoConfig(samples_per_prompt=8, max_seq_tokens=24, epochs_per_batch=4,
                         step_size=10.0, value_step_size=0.3),
        seed=11,
        sft_steps=150,
        sft_step_size=0.5,
        rl_iterations=5,
        distill_max_tokens=24,
    )

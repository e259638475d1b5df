"""Desk-scale training recipe for think-format reasoning policies.

The package wires together the pieces of a verified-reward post-training
pipeline: a strict think-block response grammar, binary and composite
verified rewards, pass@k difficulty curation, judge-filtered iterative
self-distillation, PPO with terminal-token rewards and no KL penalty, and
DPO-based self-cognition correction. A built-in linear toy policy makes
every objective exactly checkable against brute-force oracles.
"""

from .errors import (
    EmptyBatch,
    EmptyDistilledSet,
    EmptyTrajectory,
    EmptyTruth,
    GenerationFailure,
    InsufficientCoT,
    JudgeProtocolError,
    JudgeTimeout,
    JudgeUnavailable,
    LengthMismatch,
    MalformedFormat,
    MissingResponse,
    NonFiniteLoss,
    OutOfVocabulary,
    PoolTooSmall,
    RecipeError,
    SeriesTooShort,
    UnsupportedKind,
    VerdictMismatch,
)
from .formats import (
    DEFAULT_FORMAT,
    FormatConfig,
    emit,
    parse,
    parse_lenient,
    reasoning_present,
    standardize,
    think_token_count,
)
from .types import (
    MODALITY_AUDIO,
    MODALITY_TEXT,
    CurationConfig,
    Dataset,
    IterationState,
    PreferencePair,
    ReasoningOutput,
    RewardSpec,
    Sample,
    TrainingMetrics,
    Trajectory,
    filter_by_tags,
    load_dataset,
    save_dataset,
    validate_dataset,
)
from .rewards import (
    RewardResult,
    audio_reward,
    batch_objective,
    score_generation,
    text_reward,
    verify_answer,
)
from .judges import Lexicons, RemoteJudge, Verdict, load_lexicons, rule_judge
from .policy import (
    ToyPolicy,
    Vocabulary,
    derive_rng,
    load_checkpoint,
    logprobs,
    make_generation_fn,
    mix_seed,
    replay_generation_fn,
    sample,
    save_checkpoint,
    sequence_logprob,
    sft_loss_and_grad,
    sft_train,
    value_estimate,
    value_loss_and_grad,
)
from .curation import (
    PassStats,
    build_preference_pairs,
    compose_coldstart,
    compose_rl_mix,
    estimate_pass_at_k,
    filter_distilled,
    select_rl_subset,
)
from .training import (
    DpoConfig,
    PpoConfig,
    assign_terminal_reward,
    compute_advantages,
    dpo_loss_and_grad,
    dpo_margins,
    dpo_train,
    gae,
    ppo_loss_and_grad,
    ppo_update,
    rlvr_train,
    terminal_reward_vector,
    trajectory_think_tokens,
)
from .loop import (
    ABLATION_VARIANTS,
    CollapseReport,
    LoopConfig,
    LoopPools,
    ablation_run,
    detect_collapse,
    enumerate_generations,
    optimal_generation_set,
    run_cognition_correction,
    run_iteration,
    run_loop,
    sft_on_datasets,
)
from .synthetic import (
    KINDS,
    AblationEnv,
    GeneratorSpec,
    build_ablation_env,
    default_vocab,
    generate,
)

__version__ = "0.1.0"

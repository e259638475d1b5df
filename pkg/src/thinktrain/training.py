"""Policy optimization: GAE, clipped-surrogate PPO with terminal-token
rewards and no KL penalty, the verified-reward training loop, and DPO.

Losses are averaged per token. All gradients are exact for the linear toy
policy, which is what makes the finite-difference checks in the test suite
meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import EmptyTrajectory, LengthMismatch, NonFiniteLoss
from .formats import DEFAULT_FORMAT, FormatConfig, emit, parse_lenient, reasoning_present
from .policy import (
    ToyPolicy,
    _batch_logprobs,
    _context_cols,
    _scatter_rows,
    sequence_logprob_and_grad,
)
from .policy import sample as sample_trajectory
from .rewards import RewardResult, score_generation
from .types import Dataset, PreferencePair, RewardSpec, Sample, TrainingMetrics, Trajectory


@dataclass(frozen=True)
class PpoConfig:
    """Clipped-surrogate settings; defaults follow the recipe this package
    implements (clip 0.2, gamma = lambda = 1, zero KL penalty, 16 samples
    per prompt). max_seq_tokens defaults to the desk-scale 128; the
    full-scale recipe value is 10240.
    """

    clip_eps: float = 0.2
    gamma: float = 1.0
    gae_lambda: float = 1.0
    kl_coeff: float = 0.0
    samples_per_prompt: int = 16
    max_seq_tokens: int = 128
    epochs_per_batch: int = 4
    step_size: float = 10.0
    value_step_size: float = 0.3
    entropy_coeff: float = 0.0
    normalize_advantages: bool = False
    max_grad_norm: float = 10.0  # 0 disables gradient clipping

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.kl_coeff < 0.0:
            raise ValueError("kl_coeff must be non-negative")
        if self.samples_per_prompt < 1 or self.max_seq_tokens < 1 or self.epochs_per_batch < 1:
            raise ValueError("counts must be positive")
        if self.step_size <= 0 or self.value_step_size <= 0:
            raise ValueError("step sizes must be > 0")
        if self.max_grad_norm < 0:
            raise ValueError("max_grad_norm must be non-negative")


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1
    step_size: float = 0.5
    reference_checkpoint: str | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")


def assign_terminal_reward(traj: Trajectory, reward: RewardResult) -> Trajectory:
    """Attach the scalar reward at the final token position only."""
    if not traj.gen_tokens:
        raise EmptyTrajectory("cannot assign a reward to an empty trajectory")
    return replace(traj, terminal_reward=float(reward.value))


def terminal_reward_vector(traj: Trajectory) -> np.ndarray:
    """Per-token reward vector: zero everywhere except the last position."""
    if not traj.gen_tokens:
        raise EmptyTrajectory("empty trajectory has no reward positions")
    rewards = np.zeros(len(traj.gen_tokens))
    rewards[-1] = traj.terminal_reward
    return rewards


def gae(
    rewards: Sequence[float],
    values: Sequence[float],
    gamma: float,
    gae_lambda: float,
) -> np.ndarray:
    """Generalized advantage estimation with a zero terminal bootstrap.

    With gamma = lambda = 1 this telescopes to A_t = sum_{s>=t} r_s - v_t.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape != v.shape:
        raise LengthMismatch(f"rewards shape {r.shape} != values shape {v.shape}")
    adv = np.zeros_like(r)
    next_value = 0.0
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        delta = r[t] + gamma * next_value - v[t]
        acc = delta + gamma * gae_lambda * acc
        adv[t] = acc
        next_value = v[t]
    return adv


def compute_advantages(traj: Trajectory, cfg: PpoConfig) -> Trajectory:
    """Fill a trajectory's advantages from its terminal reward and values."""
    adv = gae(terminal_reward_vector(traj), traj.values, cfg.gamma, cfg.gae_lambda)
    return replace(traj, advantages=tuple(adv.tolist()))


def trajectory_think_tokens(traj: Trajectory, policy: ToyPolicy) -> int:
    """Exact token count of the first complete think span, 0 if none."""
    gen = traj.gen_tokens
    open_id, close_id = policy.vocab.open_id, policy.vocab.close_id
    if open_id not in gen:
        return 0
    start = gen.index(open_id)
    try:
        end = gen.index(close_id, start + 1)
    except ValueError:
        return 0
    return end - start - 1


def _flatten_batch(policy: ToyPolicy, batch: Sequence[Trajectory]):
    cols_rows: list[np.ndarray] = []
    actions: list[int] = []
    behavior: list[float] = []
    advantages: list[float] = []
    value_targets: list[float] = []
    for traj in batch:
        if not traj.gen_tokens:
            raise EmptyTrajectory("batch contains an empty trajectory")
        if len(traj.advantages) != len(traj.gen_tokens):
            raise ValueError("trajectory is missing advantages; run compute_advantages first")
        seq = list(traj.prompt_tokens) + list(traj.gen_tokens)
        base = len(traj.prompt_tokens)
        for t, token in enumerate(traj.gen_tokens):
            cols_rows.append(_context_cols(policy, seq[:base + t]))
            actions.append(token)
            behavior.append(traj.behavior_logprobs[t])
            advantages.append(traj.advantages[t])
            value_targets.append(traj.terminal_reward)
    return (
        np.asarray(cols_rows, dtype=np.intp),
        np.asarray(actions, dtype=np.intp),
        np.asarray(behavior, dtype=np.float64),
        np.asarray(advantages, dtype=np.float64),
        np.asarray(value_targets, dtype=np.float64),
    )


def ppo_loss_and_grad(
    policy: ToyPolicy,
    batch: Sequence[Trajectory],
    cfg: PpoConfig,
) -> tuple[float, np.ndarray, np.ndarray, dict]:
    """Clipped-surrogate loss plus value MSE minus entropy bonus, per token.

    Returns (loss, weight gradient, value-weight gradient, stats). The
    recipe removes the reference-model KL penalty entirely, so a nonzero
    kl_coeff is rejected rather than silently ignored.
    """
    if cfg.kl_coeff != 0.0:
        raise ValueError("KL-penalty variants are not supported; set kl_coeff to 0")
    if not batch:
        raise ValueError("ppo batch must be non-empty")
    cols, actions, behavior, adv, value_targets = _flatten_batch(policy, batch)
    n = len(actions)
    lp = _batch_logprobs(policy, cols)
    probs = np.exp(lp)
    lp_actions = lp[np.arange(n), actions]
    # Overflow guard: beyond |60| the surrogate is deep in its divergent
    # tail anyway; capping keeps transiently bad epochs recoverable.
    ratio = np.exp(np.clip(lp_actions - behavior, -60.0, 60.0))
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surr1 = ratio * adv
    surr2 = clipped * adv
    objective = np.minimum(surr1, surr2)
    policy_loss = -float(objective.mean())

    # Gradient flows through the ratio only where the unclipped branch is
    # active (min picks it, or clip is not saturated).
    active = surr1 <= surr2
    coef = np.where(active, adv * ratio, 0.0)
    rows = probs.copy()
    rows[np.arange(n), actions] -= 1.0
    rows *= coef[:, None] / n

    entropy = -(probs * lp).sum(axis=1)
    mean_entropy = float(entropy.mean())
    if cfg.entropy_coeff:
        # d(-H)/dlogit_k = p_k (log p_k + H)
        rows += cfg.entropy_coeff * probs * (lp + entropy[:, None]) / n
    grad_w = _scatter_rows(policy, cols, rows)

    value_preds = policy.value_weights[cols].sum(axis=1)
    err = value_preds - value_targets
    value_loss = float((err ** 2).mean())
    grad_v = np.zeros(policy.m * policy.vocab.size)
    np.add.at(grad_v, cols.ravel(), np.repeat(2.0 * err / n, policy.m))

    loss = policy_loss + value_loss - cfg.entropy_coeff * mean_entropy
    if not np.isfinite(loss) or not np.all(np.isfinite(grad_w)) or not np.all(np.isfinite(grad_v)):
        raise NonFiniteLoss("ppo loss or gradient left the finite range")
    stats = {
        "loss": loss,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": mean_entropy,
        "mean_ratio": float(ratio.mean()),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)),
    }
    return loss, grad_w, grad_v, stats


def ppo_update(
    policy: ToyPolicy,
    batch: Sequence[Trajectory],
    cfg: PpoConfig,
) -> tuple[ToyPolicy, dict]:
    """Run epochs_per_batch gradient steps on one batch of trajectories."""
    if cfg.normalize_advantages:
        flat = np.concatenate([np.asarray(t.advantages) for t in batch])
        std = flat.std()
        if std > 0:
            mean = flat.mean()
            batch = [
                replace(t, advantages=tuple(((np.asarray(t.advantages) - mean) / std).tolist()))
                for t in batch
            ]
    stats: dict = {}
    for _ in range(cfg.epochs_per_batch):
        _, grad_w, grad_v, stats = ppo_loss_and_grad(policy, batch, cfg)
        if cfg.max_grad_norm > 0:
            w_norm = float(np.sqrt((grad_w ** 2).sum()))
            if w_norm > cfg.max_grad_norm:
                grad_w = grad_w * (cfg.max_grad_norm / w_norm)
            v_norm = float(np.sqrt((grad_v ** 2).sum()))
            if v_norm > cfg.max_grad_norm:
                grad_v = grad_v * (cfg.max_grad_norm / v_norm)
        policy = policy.updated(
            weights=policy.weights - cfg.step_size * grad_w,
            value_weights=policy.value_weights - cfg.value_step_size * grad_v,
        )
    stats["mean_reward"] = float(np.mean([t.terminal_reward for t in batch]))
    stats["mean_think_tokens"] = float(np.mean([trajectory_think_tokens(t, policy) for t in batch]))
    return policy, stats


def rlvr_train(
    policy: ToyPolicy,
    prompts: Dataset,
    spec: RewardSpec,
    cfg: PpoConfig,
    iterations: int,
    seed: int,
    fmt: FormatConfig = DEFAULT_FORMAT,
) -> tuple[ToyPolicy, TrainingMetrics]:
    """Verified-reward RL: sample, score, assign terminal rewards, GAE, PPO.

    Sampling runs at temperature 1.0 so behavior log-probs coincide with the
    policy's own distribution and PPO ratios start at exactly one. A fixed
    seed fixes every trajectory, reward, and update bit-exactly.
    """
    samples = [s for s in prompts.samples if isinstance(s, Sample)]
    if len(samples) != len(prompts.samples):
        raise ValueError("rl prompts must be samples, not preference pairs")
    for s in samples:
        if not s.answer_truth.strip():
            raise ValueError(f"rl prompt {s.id} has no answer_truth")

    mean_rewards: list[float] = []
    think_tokens: list[float] = []
    clip_fractions: list[float] = []
    think_fractions: list[float] = []
    for iteration in range(iterations):
        batch: list[Trajectory] = []
        rewards: list[float] = []
        thinks: list[int] = []
        present: list[bool] = []
        for index, item in enumerate(samples):
            prompt_ids = policy.vocab.tokenize(item.question)
            for draw in range(cfg.samples_per_prompt):
                traj = sample_trajectory(
                    policy, prompt_ids,
                    temperature=1.0,
                    max_len=cfg.max_seq_tokens,
                    seed=(seed, iteration, index, draw),
                )
                text = policy.vocab.detokenize(traj.gen_tokens)
                result, out, _ = score_generation(text, item, spec, fmt)
                traj = compute_advantages(assign_terminal_reward(traj, result), cfg)
                batch.append(traj)
                rewards.append(result.value)
                thinks.append(trajectory_think_tokens(traj, policy))
                present.append(reasoning_present(out))
        policy, stats = ppo_update(policy, batch, cfg)
        mean_rewards.append(float(np.mean(rewards)))
        think_tokens.append(float(np.mean(thinks)))
        clip_fractions.append(stats["clip_fraction"])
        think_fractions.append(float(np.mean(present)))

    notes = {}
    if think_fractions:
        notes["final_think_fraction"] = think_fractions[-1]
        notes["final_mean_reward"] = mean_rewards[-1]
    metrics = TrainingMetrics(
        mean_reward=tuple(mean_rewards),
        think_tokens=tuple(think_tokens),
        clip_fraction=tuple(clip_fractions),
        think_fraction=tuple(think_fractions),
        notes=notes,
    )
    return policy, metrics


def _pair_token_ids(policy: ToyPolicy, pair: PreferencePair, fmt: FormatConfig):
    prompt = policy.vocab.tokenize(pair.prompt)
    chosen = policy.vocab.tokenize(emit(pair.chosen, fmt)) + [policy.vocab.eos_id]
    rejected = policy.vocab.tokenize(emit(pair.rejected, fmt)) + [policy.vocab.eos_id]
    return prompt, chosen, rejected


def dpo_margins(
    policy: ToyPolicy,
    ref: ToyPolicy,
    pairs: Dataset,
    cfg: DpoConfig,
    fmt: FormatConfig = DEFAULT_FORMAT,
) -> np.ndarray:
    """Implicit reward margins beta * Delta, one per preference pair."""
    margins = []
    for pair in pairs.samples:
        prompt, chosen, rejected = _pair_token_ids(policy, pair, fmt)
        lp_c, _ = sequence_logprob_and_grad(policy, prompt, chosen, compute_grad=False)
        lp_r, _ = sequence_logprob_and_grad(policy, prompt, rejected, compute_grad=False)
        ref_c, _ = sequence_logprob_and_grad(ref, prompt, chosen, compute_grad=False)
        ref_r, _ = sequence_logprob_and_grad(ref, prompt, rejected, compute_grad=False)
        margins.append(cfg.beta * ((lp_c - ref_c) - (lp_r - ref_r)))
    return np.asarray(margins)


def dpo_loss_and_grad(
    policy: ToyPolicy,
    ref: ToyPolicy,
    pairs: Dataset,
    cfg: DpoConfig,
    fmt: FormatConfig = DEFAULT_FORMAT,
) -> tuple[float, np.ndarray]:
    """Sigmoid preference loss against a frozen reference, with exact gradient.

    loss = mean of -log sigmoid(beta * ((lp_c - ref_c) - (lp_r - ref_r)))
    """
    items = [p for p in pairs.samples if isinstance(p, PreferencePair)]
    if not items:
        raise ValueError("dpo needs at least one preference pair")
    n = len(items)
    losses = []
    grad = np.zeros_like(policy.weights)
    for pair in items:
        prompt, chosen, rejected = _pair_token_ids(policy, pair, fmt)
        lp_c, g_c = sequence_logprob_and_grad(policy, prompt, chosen)
        lp_r, g_r = sequence_logprob_and_grad(policy, prompt, rejected)
        ref_c, _ = sequence_logprob_and_grad(ref, prompt, chosen, compute_grad=False)
        ref_r, _ = sequence_logprob_and_grad(ref, prompt, rejected, compute_grad=False)
        x = cfg.beta * ((lp_c - ref_c) - (lp_r - ref_r))
        losses.append(np.logaddexp(0.0, -x))  # -log(sigmoid(x)), stable
        sig_neg = 1.0 / (1.0 + np.exp(x))     # sigmoid(-x)
        grad += (-cfg.beta * sig_neg / n) * (g_c - g_r)
    loss = float(np.mean(losses))
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NonFiniteLoss("dpo loss or gradient left the finite range")
    return loss, grad


def dpo_train(
    policy: ToyPolicy,
    ref: ToyPolicy,
    pairs: Dataset,
    cfg: DpoConfig,
    steps: int,
    fmt: FormatConfig = DEFAULT_FORMAT,
) -> tuple[ToyPolicy, list[float]]:
    """Gradient descent on the preference loss; the reference stays frozen."""
    losses = []
    for _ in range(steps):
        loss, grad = dpo_loss_and_grad(policy, ref, pairs, cfg, fmt)
        policy = policy.updated(weights=policy.weights - cfg.step_size * grad)
        losses.append(loss)
    return policy, losses

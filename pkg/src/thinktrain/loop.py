"""Orchestration of the full distillation loop and its analyses.

One iteration: self-distill reasoning chains from the current checkpoint,
filter them through the judge (grounding, coherence, correctness), run
joint SFT on the retained chains plus the task corpus, then verified-reward
RL on the mixed prompt pool. The module also hosts the self-cognition
correction sequence, reasoning-collapse detection, the format-reward
ablation harness, and an exhaustive trajectory-enumeration oracle for the
micro-task where every generation can be scored.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .curation import build_preference_pairs, filter_distilled
from .errors import EmptyDistilledSet, JudgeProtocolError, JudgeUnavailable, SeriesTooShort
from .formats import DEFAULT_FORMAT, FormatConfig, emit, standardize
from .judges import Verdict
from .policy import (
    ToyPolicy,
    derive_rng,
    load_checkpoint,
    make_generation_fn,
    mix_seed,
    save_checkpoint,
    sft_train,
)
from .rewards import audio_reward, score_generation, text_reward, write_reward_audit
from .reports import collapse_text, write_filter_log, write_metrics_csv, write_metrics_jsonl
from .synthetic import AblationEnv
from .training import DpoConfig, PpoConfig, dpo_train, rlvr_train
from .types import (
    MODALITY_AUDIO,
    CurationConfig,
    Dataset,
    IterationState,
    ReasoningOutput,
    RewardSpec,
    Sample,
    TrainingMetrics,
    save_dataset,
)

JudgeFn = Callable[[Sample, ReasoningOutput], Verdict]


@dataclass(frozen=True)
class LoopConfig:
    """Knobs of the full loop; nested configs carry the stage settings.

    The number of distillation candidates per prompt lives once, on the
    embedded CurationConfig (`distill_samples`).
    """

    T: int = 2
    cot_share: float = 0.1
    reward_spec: RewardSpec = RewardSpec()
    ppo: PpoConfig = PpoConfig()
    dpo: DpoConfig = DpoConfig()
    curation: CurationConfig = CurationConfig()
    fmt: FormatConfig = DEFAULT_FORMAT
    seed: int = 0
    sft_steps: int = 200
    sft_step_size: float = 0.5
    rl_iterations: int = 5
    distill_max_tokens: int = 32
    dpo_steps: int = 150
    dpo_pairs: int = 64
    eval_samples_per_prompt: int = 4
    heldout_share: float = 0.2
    collapse_window: int = 10
    collapse_threshold: float = 0.5

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not 0.0 <= self.cot_share <= 1.0:
            raise ValueError("cot_share must lie in [0, 1]")
        if min(self.sft_steps, self.rl_iterations, self.dpo_steps) < 0:
            raise ValueError("step counts must be non-negative")
        if self.distill_max_tokens < 1 or self.dpo_pairs < 1 or self.eval_samples_per_prompt < 1:
            raise ValueError("counts must be positive")
        if not 0.0 < self.heldout_share < 1.0:
            raise ValueError("heldout_share must lie in (0, 1)")
        if self.collapse_window < 1:
            raise ValueError("collapse_window must be positive")
        if self.collapse_threshold < 0:
            raise ValueError("collapse_threshold must be non-negative")

    @property
    def distill_samples(self) -> int:
        return self.curation.distill_samples


@dataclass(frozen=True)
class LoopPools:
    """Input corpora for one loop run."""

    perception: Dataset  # perception-grounded prompts to distill on
    task: Dataset        # reasoning task corpus kept in every joint SFT
    rl: Dataset          # mixed prompt pool for the RL stage


@dataclass(frozen=True)
class CollapseReport:
    collapsed: bool
    start_mean: float
    current_mean: float
    ratio: float


def detect_collapse(
    series: Sequence[float],
    window: int = 10,
    threshold: float = 0.5,
) -> CollapseReport:
    """Compare the trailing window against the leading window of a series."""
    if window < 1:
        raise ValueError("window must be positive")
    if len(series) < window:
        raise SeriesTooShort(f"series has {len(series)} points, window is {window}")
    start = float(np.mean(series[:window]))
    current = float(np.mean(series[-window:]))
    ratio = current / start if start > 0 else float("inf")
    collapsed = start > 0 and ratio < threshold
    return CollapseReport(collapsed=collapsed, start_mean=start, current_mean=current, ratio=ratio)


def sft_on_datasets(
    policy: ToyPolicy,
    datasets: Sequence[Dataset],
    fmt: FormatConfig,
    steps: int,
    step_size: float,
) -> ToyPolicy:
    """Supervised fine-tuning on the standardized targets of several corpora."""
    targets: list[str] = []
    prompts: list[str] = []
    for dataset in datasets:
        for item in dataset.samples:
            if isinstance(item, Sample):
                targets.append(standardize(item, fmt))
                prompts.append(item.question)
    if not targets or steps == 0:
        return policy
    policy, _ = sft_train(policy, targets, prompts, steps=steps, step_size=step_size)
    return policy


def _judge_candidates(
    candidates: Sequence[tuple[Sample, ReasoningOutput]],
    judge_fn: JudgeFn,
) -> tuple[list[tuple[Sample, ReasoningOutput]], list[Verdict], int]:
    """Apply the judge; unjudged candidates are dropped (fail closed)."""
    judged: list[tuple[Sample, ReasoningOutput]] = []
    verdicts: list[Verdict] = []
    unjudged = 0
    for sample, out in candidates:
        try:
            verdict = judge_fn(sample, out)
        except (JudgeUnavailable, JudgeProtocolError):
            unjudged += 1
            continue
        judged.append((sample, out))
        verdicts.append(verdict)
    return judged, verdicts, unjudged


def run_iteration(
    state: IterationState,
    pools: LoopPools,
    judge_fn: JudgeFn,
    cfg: LoopConfig,
    run_dir: str | Path,
) -> IterationState:
    """One full cycle: distill, filter, joint SFT, verified-reward RL.

    Writes the distilled corpus, reward and filter audit logs, the RL metric
    files, and the next checkpoint into `run_dir`. Raises EmptyDistilledSet
    (with the rejection histogram attached) when the filter keeps nothing.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    t = state.t
    policy = load_checkpoint(state.checkpoint_ref)

    gen = make_generation_fn(
        policy, cfg.fmt,
        temperature=cfg.curation.temperature,
        max_len=cfg.distill_max_tokens,
        seed=mix_seed(cfg.seed, "distill", t),
    )
    prompts = [s for s in pools.perception.samples if isinstance(s, Sample)]
    candidates = [
        (sample, gen(sample, draw))
        for sample in prompts
        for draw in range(cfg.curation.distill_samples)
    ]

    judged, verdicts, unjudged = _judge_candidates(candidates, judge_fn)
    distilled = filter_distilled(judged, verdicts, cfg.reward_spec)

    audit_rows = []
    filter_rows = []
    retained_ids = {s.id for s in distilled.samples}
    for index, ((sample, out), verdict) in enumerate(zip(judged, verdicts)):
        candidate_id = f"{sample.id}/c{index}"
        if sample.modality == MODALITY_AUDIO:
            result = audio_reward(out, sample.answer_truth, cfg.reward_spec)
        else:
            result = text_reward(out, sample.answer_truth, cfg.reward_spec)
        audit_rows.append({
            "sample_id": candidate_id,
            "acc_part": result.acc_part,
            "fmt_part": result.fmt_part,
            "value": result.value,
        })
        filter_rows.append({
            "candidate_id": candidate_id,
            "source_id": sample.id,
            "grounding": verdict.grounding,
            "coherence": verdict.coherence,
            "cognition_ok": verdict.cognition_ok,
            "correct": result.acc_part,
            "retained": candidate_id in retained_ids,
        })
    write_reward_audit(run_dir / f"rewards_iter{t}.jsonl", audit_rows)
    write_filter_log(run_dir / f"filter_iter{t}.jsonl", filter_rows)

    if not distilled.samples:
        histogram = {key: int(value) for key, value in distilled.provenance.items() if key != "retained"}
        histogram["unjudged"] = unjudged
        raise EmptyDistilledSet(f"iteration {t}: distillation filter retained nothing", histogram)

    try:
        source_ref = str(Path(state.checkpoint_ref).relative_to(run_dir))
    except ValueError:
        source_ref = Path(state.checkpoint_ref).name
    provenance = dict(distilled.provenance)
    provenance.update({
        "iteration": str(t),
        "source_checkpoint": source_ref,
        "unjudged": str(unjudged),
    })
    distilled = Dataset(name=distilled.name, samples=distilled.samples, provenance=provenance)
    save_dataset(distilled, run_dir / f"distilled_iter{t}.jsonl")

    policy = sft_on_datasets(policy, [distilled, pools.task], cfg.fmt, cfg.sft_steps, cfg.sft_step_size)

    policy, rl_metrics = rlvr_train(
        policy, pools.rl, cfg.reward_spec, cfg.ppo,
        iterations=cfg.rl_iterations,
        seed=mix_seed(cfg.seed, "rl", t),
        fmt=cfg.fmt,
    )
    rl_rows = [
        {
            "iteration": i,
            "mean_reward": rl_metrics.mean_reward[i],
            "think_tokens": rl_metrics.think_tokens[i],
            "clip_fraction": rl_metrics.clip_fraction[i],
            "think_fraction": rl_metrics.think_fraction[i],
        }
        for i in range(len(rl_metrics.mean_reward))
    ]
    write_metrics_csv(run_dir / f"rl_metrics_iter{t}.csv", rl_rows)
    write_metrics_jsonl(run_dir / f"rl_metrics_iter{t}.jsonl", rl_rows)

    checkpoint_path = run_dir / f"checkpoint_iter{t + 1}.json"
    save_checkpoint(policy, checkpoint_path, seed=cfg.seed)

    metrics = state.metrics.extended(
        mean_reward=rl_metrics.mean_reward[-1] if rl_metrics.mean_reward else 0.0,
        think_tokens=rl_metrics.think_tokens[-1] if rl_metrics.think_tokens else 0.0,
        clip_fraction=rl_metrics.clip_fraction[-1] if rl_metrics.clip_fraction else 0.0,
        think_fraction=rl_metrics.think_fraction[-1] if rl_metrics.think_fraction else 0.0,
    )
    return IterationState(
        t=t + 1,
        checkpoint_ref=str(checkpoint_path),
        distilled=distilled,
        metrics=metrics,
    )


def run_loop(
    initial_checkpoint: str | Path,
    pools: LoopPools,
    judge_fn: JudgeFn,
    cfg: LoopConfig,
    run_dir: str | Path,
) -> IterationState:
    """Run T iterations and write the consolidated run-level metric files."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    state = IterationState(
        t=0,
        checkpoint_ref=str(initial_checkpoint),
        distilled=Dataset(name="distilled_audio_cot"),
    )
    all_rows: list[dict] = []
    for _ in range(cfg.T):
        cycle = state.t
        state = run_iteration(state, pools, judge_fn, cfg, run_dir)
        for line in (run_dir / f"rl_metrics_iter{cycle}.jsonl").read_text(encoding="utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                row["cycle"] = cycle
                all_rows.append(row)
    for i, row in enumerate(all_rows):
        row["iteration"] = i
    write_metrics_csv(run_dir / "metrics.csv", all_rows)
    write_metrics_jsonl(run_dir / "metrics.jsonl", all_rows)

    think_series = [row["think_tokens"] for row in all_rows]
    if len(think_series) >= cfg.collapse_window:
        report = detect_collapse(think_series, cfg.collapse_window, cfg.collapse_threshold)
        text = collapse_text(report.collapsed, report.start_mean, report.current_mean, report.ratio)
        (run_dir / "collapse.txt").write_text(text, encoding="utf-8")
    return state


def run_cognition_correction(
    policy: ToyPolicy,
    cognition_corpus: Dataset,
    judge_fn: JudgeFn,
    cfg: LoopConfig,
) -> tuple[ToyPolicy, list[tuple[str, float]]]:
    """Two-stage self-cognition correction with a held-out error measurement.

    Stage A: self-distill, keep only cognition-correct generations, SFT on
    them. Stage B: build preference pairs from fresh generations and run DPO
    against the pre-DPO policy as the frozen reference. Returns the error
    rate on the held-out split after the base model, stage A, and stage B.
    """
    samples = [s for s in cognition_corpus.samples if isinstance(s, Sample)]
    if not samples:
        return policy, []
    untagged = [s.id for s in samples if "self-cognition" not in s.tags]
    if untagged:
        raise ValueError(f"cognition corpus samples missing the self-cognition tag: {untagged[:3]}")

    order = derive_rng(cfg.seed, "cog-split").permutation(len(samples))
    heldout_n = max(1, round(cfg.heldout_share * len(samples)))
    heldout_idx = sorted(order[:heldout_n].tolist())
    train_idx = sorted(order[heldout_n:].tolist())
    heldout = [samples[i] for i in heldout_idx]
    train = [samples[i] for i in train_idx]

    def error_rate(current: ToyPolicy, stage: str) -> float:
        gen = make_generation_fn(
            current, cfg.fmt, temperature=1.0,
            max_len=cfg.distill_max_tokens,
            seed=mix_seed(cfg.seed, "cog-eval", stage),
        )
        bad = total = 0
        for item in heldout:
            for draw in range(cfg.eval_samples_per_prompt):
                out = gen(item, draw)
                verdict = judge_fn(item, out)
                bad += int(not verdict.cognition_ok)
                total += 1
        return bad / total if total else 0.0

    report: list[tuple[str, float]] = [("Base model", error_rate(policy, "base"))]

    gen_a = make_generation_fn(
        policy, cfg.fmt, temperature=1.0,
        max_len=cfg.distill_max_tokens,
        seed=mix_seed(cfg.seed, "cog-distill"),
    )
    candidates = [(s, gen_a(s, j)) for s in train for j in range(cfg.curation.distill_samples)]
    judged, verdicts, _ = _judge_candidates(candidates, judge_fn)
    targets = [emit(out, cfg.fmt) for (s, out), v in zip(judged, verdicts) if v.cognition_ok]
    prompts = [s.question for (s, out), v in zip(judged, verdicts) if v.cognition_ok]
    if targets and cfg.sft_steps:
        policy, _ = sft_train(policy, targets, prompts, steps=cfg.sft_steps, step_size=cfg.sft_step_size)
    report.append(("Filtered self-distillation", error_rate(policy, "sft")))

    gen_b = make_generation_fn(
        policy, cfg.fmt, temperature=1.0,
        max_len=cfg.distill_max_tokens,
        seed=mix_seed(cfg.seed, "cog-pairs"),
    )
    generations = [(s, gen_b(s, j)) for s in train for j in range(cfg.curation.distill_samples)]
    judged_b, verdicts_b, _ = _judge_candidates(generations, judge_fn)
    pairs = build_preference_pairs(judged_b, verdicts_b, cfg.dpo_pairs)
    if pairs.samples and cfg.dpo_steps:
        reference = policy
        policy, _ = dpo_train(policy, reference, pairs, cfg.dpo, steps=cfg.dpo_steps, fmt=cfg.fmt)
    report.append(("Filtered self-distillation + DPO", error_rate(policy, "dpo")))
    return policy, report


ABLATION_VARIANTS = ("with_format_reward", "accuracy_only")


def ablation_run(variant: str, env: "AblationEnv", cfg: LoopConfig) -> TrainingMetrics:
    """Train on the micro-task with or without the format reward term.

    Both variants share the cold-start and the pipeline; only the reward
    weights differ (composite vs accuracy-only).
    """
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant: {variant!r}")
    policy = ToyPolicy.initial(env.vocab, m=4)
    policy = sft_on_datasets(policy, [env.coldstart], cfg.fmt, cfg.sft_steps, cfg.sft_step_size)
    if variant == "with_format_reward":
        spec = cfg.reward_spec
    else:
        spec = RewardSpec(w_acc=1.0, w_fmt=0.0, matcher=cfg.reward_spec.matcher)
    ppo = replace(cfg.ppo, max_seq_tokens=env.max_len)
    _, metrics = rlvr_train(
        policy, env.prompts, spec, ppo,
        iterations=cfg.rl_iterations,
        seed=mix_seed(cfg.seed, "ablate", variant),
        fmt=cfg.fmt,
    )
    return metrics


def enumerate_generations(vocab: Vocabulary, max_len: int) -> Iterator[tuple[int, ...]]:
    """Every terminal generation: eos only in final position, length <= max_len.

    Sequences of exactly max_len need no eos (the sampler truncates there).
    """
    non_eos = [i for i in range(vocab.size) if i != vocab.eos_id]
    eos = vocab.eos_id
    for length in range(1, max_len + 1):
        for body in itertools.product(non_eos, repeat=length - 1):
            yield body + (eos,)
    for body in itertools.product(non_eos, repeat=max_len):
        yield tuple(body)


def optimal_generation_set(
    vocab: Vocabulary,
    sample: Sample,
    spec: RewardSpec,
    fmt: FormatConfig,
    max_len: int,
) -> tuple[float, list[tuple[tuple[int, ...], ReasoningOutput]]]:
    """Exhaustively score every generation; return the argmax set.

    This is the oracle for the format-reward ablation: it proves which
    trajectories are optimal under a reward spec without any training.
    """
    best = -1.0
    argmax: list[tuple[tuple[int, ...], ReasoningOutput]] = []
    for seq in enumerate_generations(vocab, max_len):
        text = vocab.detokenize(seq)
        result, out, _ = score_generation(text, sample, spec, fmt)
        value = round(result.value, 12)
        if value > best:
            best = value
            argmax = [(seq, out)]
        elif value == best:
            argmax.append((seq, out))
    return best, argmax

"""Data curation: pass@k difficulty filtering, distillation filtering,
cold-start composition, preference-pair construction, and RL pool mixing.

Every selection here is deterministic for a fixed seed, and generations are
cached on the stats records so downstream stages can reuse them without
touching the generator again.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .errors import (
    EmptyTruth,
    GenerationFailure,
    InsufficientCoT,
    MissingResponse,
    PoolTooSmall,
    RecipeError,
    VerdictMismatch,
)
from .formats import DEFAULT_FORMAT, FormatConfig, parse, standardize
from .judges import Verdict
from .policy import GenerationFn, derive_rng
from .rewards import verify_answer
from .types import (
    CurationConfig,
    Dataset,
    PreferencePair,
    ReasoningOutput,
    RewardSpec,
    Sample,
)


@dataclass(frozen=True)
class PassStats:
    """Pass@k outcome for one sample, with the generations cached."""

    sample_id: str
    k: int
    correct: int
    generations: tuple[ReasoningOutput, ...]

    def __post_init__(self):
        object.__setattr__(self, "generations", tuple(self.generations))
        if not 0 <= self.correct <= self.k:
            raise ValueError("correct must lie in [0, k]")
        if len(self.generations) != self.k:
            raise ValueError("must cache exactly k generations")


def estimate_pass_at_k(
    sample: Sample,
    gen: GenerationFn,
    cfg: CurationConfig,
    spec: RewardSpec,
) -> PassStats:
    """Draw k generations and count verified-correct answers."""
    if not sample.answer_truth.strip():
        raise EmptyTruth(f"sample {sample.id} has no ground truth to verify against")
    outputs: list[ReasoningOutput] = []
    for draw in range(cfg.k):
        try:
            out = gen(sample, draw)
        except RecipeError:
            continue
        if out is not None:
            outputs.append(out)
    if len(outputs) < cfg.k:
        raise GenerationFailure(
            f"sample {sample.id}: {len(outputs)} usable generations, need {cfg.k}"
        )
    correct = sum(
        verify_answer(out.response, sample.answer_truth, spec.matcher) for out in outputs
    )
    return PassStats(sample_id=sample.id, k=cfg.k, correct=correct, generations=tuple(outputs))


def select_rl_subset(
    stats: Sequence[PassStats],
    cfg: CurationConfig,
    pool: Dataset,
) -> Dataset:
    """Keep the moderately difficult samples: keep_min <= correct <= keep_max.

    Counts pass@k above keep_max as too easy and below keep_min as too hard;
    both tallies land in the provenance.
    """
    by_id = {s.id: s for s in pool.samples if isinstance(s, Sample)}
    kept: list[Sample] = []
    dropped_easy = dropped_hard = 0
    for stat in stats:
        if stat.k != cfg.k:
            raise ValueError(f"stats for {stat.sample_id} use k={stat.k}, config says k={cfg.k}")
        if stat.sample_id not in by_id:
            raise ValueError(f"sample {stat.sample_id} not present in pool")
        if stat.correct > cfg.keep_max:
            dropped_easy += 1
        elif stat.correct < cfg.keep_min:
            dropped_hard += 1
        else:
            kept.append(by_id[stat.sample_id])
    provenance = {
        "kept": str(len(kept)),
        "dropped_easy": f"{dropped_easy} (pass@{cfg.k} > {cfg.keep_max})",
        "dropped_hard": f"{dropped_hard} (pass@{cfg.k} < {cfg.keep_min})",
    }
    return Dataset(name="rl_selected", samples=tuple(kept), provenance=provenance)


def filter_distilled(
    candidates: Sequence[tuple[Sample, ReasoningOutput]],
    verdicts: Sequence[Verdict],
    spec: RewardSpec,
) -> Dataset:
    """Three-criterion filter for self-distilled chains.

    Retains a candidate iff the judge confirms grounding and coherence and
    the answer verifies against ground truth when one is available. Retained
    candidates become training samples carrying the generated chain.
    """
    if len(candidates) != len(verdicts):
        raise VerdictMismatch(
            f"{len(candidates)} candidates but {len(verdicts)} verdicts"
        )
    retained: list[Sample] = []
    counts = {"grounding_failed": 0, "coherence_failed": 0, "answer_incorrect": 0}
    for index, ((sample, out), verdict) in enumerate(zip(candidates, verdicts)):
        ok = True
        if not verdict.grounding:
            counts["grounding_failed"] += 1
            ok = False
        if not verdict.coherence:
            counts["coherence_failed"] += 1
            ok = False
        if sample.answer_truth.strip():
            if verify_answer(out.response, sample.answer_truth, spec.matcher) != 1:
                counts["answer_incorrect"] += 1
                ok = False
        if ok:
            retained.append(replace(
                sample,
                id=f"{sample.id}/c{index}",
                native_think=out.think,
                response_truth=out.response,
            ))
    provenance = {"retained": str(len(retained))}
    provenance.update({key: str(value) for key, value in counts.items()})
    return Dataset(name="distilled_audio_cot", samples=tuple(retained), provenance=provenance)


def compose_coldstart(
    text: Dataset,
    audio: Dataset,
    audio_cot: Dataset,
    cot_share: float,
    cfg: FormatConfig = DEFAULT_FORMAT,
    seed: int = 0,
) -> Dataset:
    """Mix text and audio pools so reasoning chains make up `cot_share` of
    the audio portion; every chain-less sample standardizes to the
    empty-think prefix.
    """
    if not 0.0 <= cot_share <= 1.0:
        raise ValueError("cot_share must lie in [0, 1]")
    for item in audio.samples:
        if isinstance(item, Sample) and item.native_think is not None:
            raise ValueError(
                f"plain audio pool sample {item.id} carries a reasoning chain; "
                "chain-bearing samples belong in the audio_cot pool"
            )
    for item in audio_cot.samples:
        if not (isinstance(item, Sample) and item.native_think and item.native_think.strip()):
            raise ValueError("every audio_cot sample must carry a non-empty reasoning chain")

    if cot_share == 1.0:
        n_cot = len(audio_cot.samples)
        plain_audio: tuple = ()
    else:
        n_cot = round(cot_share * len(audio.samples) / (1.0 - cot_share))
        plain_audio = audio.samples
    if n_cot > len(audio_cot.samples):
        raise InsufficientCoT(
            f"need {n_cot} reasoning-chain samples, pool has {len(audio_cot.samples)}"
        )

    rng = derive_rng(seed, "coldstart")
    cot_pool = list(audio_cot.samples)
    chosen_idx = sorted(rng.choice(len(cot_pool), size=n_cot, replace=False).tolist()) if n_cot else []
    chosen_cot = [cot_pool[i] for i in chosen_idx]

    combined = list(text.samples) + list(plain_audio) + chosen_cot
    for item in combined:
        if not isinstance(item, Sample):
            raise ValueError("cold-start pools must contain samples, not pairs")
        # Surfaces MissingResponse early and guarantees every target parses.
        parse(standardize(item, cfg), cfg)
    order = rng.permutation(len(combined))
    shuffled = tuple(combined[i] for i in order)
    provenance = {
        "cot_share": repr(float(cot_share)),
        "cot_count": str(n_cot),
        "audio_count": str(len(plain_audio) + n_cot),
        "text_count": str(len(text.samples)),
        "seed": str(seed),
    }
    return Dataset(name="coldstart", samples=shuffled, provenance=provenance)


def build_preference_pairs(
    generations: Sequence[tuple[Sample, ReasoningOutput]],
    verdicts: Sequence[Verdict],
    n_pairs: int,
) -> Dataset:
    """Pair cognition-correct generations against denials from the same prompt.

    Prompts lacking both polarities contribute nothing and are counted in the
    provenance. Pairs are taken round-robin across prompts until n_pairs.
    """
    if len(generations) != len(verdicts):
        raise VerdictMismatch(
            f"{len(generations)} generations but {len(verdicts)} verdicts"
        )
    grouped: dict[str, tuple[Sample, list[ReasoningOutput], list[ReasoningOutput]]] = {}
    order: list[str] = []
    for (sample, out), verdict in zip(generations, verdicts):
        if sample.id not in grouped:
            grouped[sample.id] = (sample, [], [])
            order.append(sample.id)
        _, positives, negatives = grouped[sample.id]
        (positives if verdict.cognition_ok else negatives).append(out)

    per_prompt: list[list[PreferencePair]] = []
    skipped = 0
    for sample_id in order:
        sample, positives, negatives = grouped[sample_id]
        pairs = [
            PreferencePair(prompt=sample.question, chosen=pos, rejected=neg)
            for pos, neg in zip(positives, negatives)
            if pos != neg
        ]
        if pairs:
            per_prompt.append(pairs)
        else:
            skipped += 1

    selected: list[PreferencePair] = []
    round_index = 0
    while len(selected) < n_pairs and any(round_index < len(p) for p in per_prompt):
        for pairs in per_prompt:
            if round_index < len(pairs):
                selected.append(pairs[round_index])
                if len(selected) == n_pairs:
                    break
        round_index += 1
    provenance = {
        "requested": str(n_pairs),
        "built": str(len(selected)),
        "skipped_no_contrast": str(skipped),
    }
    return Dataset(name="preference_pairs", samples=tuple(selected), provenance=provenance)


def compose_rl_mix(
    text_pool: Dataset,
    audio_pool: Dataset,
    n_text: int,
    n_audio: int,
    seed: int,
) -> Dataset:
    """Seeded draw of n_text + n_audio prompts for the RL phase."""
    if n_text > len(text_pool.samples):
        raise PoolTooSmall(f"text pool has {len(text_pool.samples)}, need {n_text}")
    if n_audio > len(audio_pool.samples):
        raise PoolTooSmall(f"audio pool has {len(audio_pool.samples)}, need {n_audio}")
    rng = derive_rng(seed, "rl_mix")
    picked: list[Sample] = []
    for pool, count in ((text_pool, n_text), (audio_pool, n_audio)):
        idx = rng.choice(len(pool.samples), size=count, replace=False) if count else []
        picked.extend(pool.samples[i] for i in idx)
    order = rng.permutation(len(picked))
    mixed = tuple(picked[i] for i in order)
    provenance = {
        "n_text": str(n_text),
        "n_audio": str(n_audio),
        "seed": str(seed),
        "text_pool": text_pool.name,
        "audio_pool": audio_pool.name,
    }
    return Dataset(name="rl_mix", samples=mixed, provenance=provenance)

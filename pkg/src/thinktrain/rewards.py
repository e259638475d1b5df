"""Verified rewards for text and audio tasks.

Text tasks earn the binary answer-verification reward. Audio tasks earn the
composite `w_acc * correct + w_fmt * reasoning_present` reward (defaults
0.8 / 0.2), which keeps answer correctness dominant while paying for the
presence of an actual deliberation span.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import EmptyBatch, EmptyTruth
from .formats import DEFAULT_FORMAT, FormatConfig, parse_lenient, reasoning_present
from .types import MODALITY_AUDIO, MODALITY_TEXT, ReasoningOutput, RewardSpec, Sample, Trajectory


@dataclass(frozen=True)
class RewardResult:
    value: float
    acc_part: int
    fmt_part: int


_WS = re.compile(r"\s+")


def _normalize(text: str) -> str:
    text = _WS.sub(" ", text.strip().casefold())
    return text.rstrip(string.punctuation).rstrip()


def verify_answer(answer: str, answer_truth: str, matcher: str = "normalized") -> int:
    """Binary verification of `answer` against ground truth.

    `exact` compares byte equality after trimming; `normalized` also
    case-folds, collapses internal whitespace, and strips trailing
    punctuation on both sides.
    """
    if not answer_truth.strip():
        raise EmptyTruth("answer_truth must be non-empty")
    if matcher == "exact":
        return int(answer.strip() == answer_truth.strip())
    if matcher == "normalized":
        return int(_normalize(answer) == _normalize(answer_truth))
    raise ValueError(f"unknown matcher: {matcher!r}")


def text_reward(out: ReasoningOutput, answer_truth: str, spec: RewardSpec) -> RewardResult:
    """Binary verification reward; the format term plays no role for text."""
    acc = verify_answer(out.response, answer_truth, spec.matcher)
    return RewardResult(value=float(acc), acc_part=acc, fmt_part=0)


def audio_reward(out: ReasoningOutput, answer_truth: str, spec: RewardSpec) -> RewardResult:
    """Composite reward: w_acc * correctness + w_fmt * reasoning presence."""
    acc = verify_answer(out.response, answer_truth, spec.matcher)
    fmt = int(reasoning_present(out))
    return RewardResult(value=spec.w_acc * acc + spec.w_fmt * fmt, acc_part=acc, fmt_part=fmt)


def score_generation(
    raw: str,
    sample: Sample,
    spec: RewardSpec,
    fmt: FormatConfig = DEFAULT_FORMAT,
) -> tuple[RewardResult, ReasoningOutput, bool]:
    """Parse a raw generation and score it under the sample's modality.

    Malformed generations are scored conservatively: the whole string acts
    as the response and the format part is 0.
    """
    out, format_ok = parse_lenient(raw, fmt)
    if sample.modality == MODALITY_AUDIO:
        result = audio_reward(out, sample.answer_truth, spec)
    else:
        result = text_reward(out, sample.answer_truth, spec)
    return result, out, format_ok


def batch_objective(
    scored: Sequence[tuple[Trajectory, RewardResult]],
    partition: Sequence[str],
) -> float:
    """Estimate the combined objective: mean audio reward plus mean text reward.

    Each expectation is the arithmetic mean over its own partition; an empty
    partition contributes 0.
    """
    if not scored:
        raise EmptyBatch("batch_objective needs at least one trajectory")
    if len(scored) != len(partition):
        raise ValueError("partition labels must match the batch length")
    total = 0.0
    for modality in (MODALITY_AUDIO, MODALITY_TEXT):
        values = [r.value for (_, r), label in zip(scored, partition) if label == modality]
        if values:
            total += sum(values) / len(values)
    return total


def write_reward_audit(path: str | Path, rows: Iterable[Mapping]) -> None:
    """Append-free JSONL audit log: {sample_id, acc_part, fmt_part, value} per row."""
    lines = []
    for row in rows:
        lines.append(json.dumps(
            {
                "sample_id": row["sample_id"],
                "acc_part": int(row["acc_part"]),
                "fmt_part": int(row["fmt_part"]),
                "value": float(row["value"]),
            },
            ensure_ascii=False,
        ))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def iter_reward_audit(path: str | Path) -> Iterator[dict]:
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                yield json.loads(line)

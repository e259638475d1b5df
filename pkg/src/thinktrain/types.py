"""Shared domain records for the training pipeline.

These dataclasses define the vocabulary every stage speaks:
- Sample: one training item (question, ground truth, optional reasoning chain)
- ReasoningOutput: a parsed model response (think span + final reply)
- Trajectory: token-level rollout data for policy optimization
- PreferencePair: chosen/rejected responses for preference optimization
- Dataset: an ordered, named collection of samples or pairs with provenance
- RewardSpec / CurationConfig: reward weighting and data-selection knobs
- IterationState / TrainingMetrics: loop bookkeeping

All records are immutable values; pipeline stages share them freely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence, Union

MODALITY_TEXT = "text"
MODALITY_AUDIO = "audio"

META_PREFIX = "#meta "


@dataclass(frozen=True)
class Sample:
    """One training item; `audio_ref` is an opaque locator, never decoded."""

    id: str
    modality: str  # "text" | "audio"
    question: str
    answer_truth: str
    audio_ref: str | None = None
    native_think: str | None = None
    response_truth: str | None = None
    tags: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "tags", frozenset(self.tags))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "modality": self.modality,
            "question": self.question,
            "audio_ref": self.audio_ref,
            "answer_truth": self.answer_truth,
            "native_think": self.native_think,
            "response_truth": self.response_truth,
            "tags": sorted(self.tags),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Sample":
        return cls(
            id=data["id"],
            modality=data["modality"],
            question=data["question"],
            answer_truth=data["answer_truth"],
            audio_ref=data.get("audio_ref"),
            native_think=data.get("native_think"),
            response_truth=data.get("response_truth"),
            tags=frozenset(data.get("tags", ())),
        )


@dataclass(frozen=True)
class ReasoningOutput:
    """A parsed response: deliberation span plus the final reply."""

    think: str
    response: str

    def to_dict(self) -> dict[str, str]:
        return {"think": self.think, "response": self.response}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ReasoningOutput":
        return cls(think=data["think"], response=data["response"])


@dataclass(frozen=True)
class Trajectory:
    """Token-level rollout: one behavior log-prob and value per generated token."""

    prompt_tokens: tuple[int, ...]
    gen_tokens: tuple[int, ...]
    behavior_logprobs: tuple[float, ...]
    values: tuple[float, ...]
    terminal_reward: float = 0.0
    advantages: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "prompt_tokens", tuple(self.prompt_tokens))
        object.__setattr__(self, "gen_tokens", tuple(self.gen_tokens))
        object.__setattr__(self, "behavior_logprobs", tuple(float(x) for x in self.behavior_logprobs))
        object.__setattr__(self, "values", tuple(float(x) for x in self.values))
        object.__setattr__(self, "advantages", tuple(float(x) for x in self.advantages))
        n = len(self.gen_tokens)
        if len(self.behavior_logprobs) != n or len(self.values) != n:
            raise ValueError("behavior_logprobs, values and gen_tokens must have equal length")
        if self.advantages and len(self.advantages) != n:
            raise ValueError("advantages, when set, must match gen_tokens in length")
        if not 0.0 <= self.terminal_reward <= 1.0:
            raise ValueError(f"terminal_reward must lie in [0, 1], got {self.terminal_reward}")


@dataclass(frozen=True)
class PreferencePair:
    """A prompt with a preferred and a dispreferred response."""

    prompt: str
    chosen: ReasoningOutput
    rejected: ReasoningOutput

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt": self.prompt,
            "chosen": self.chosen.to_dict(),
            "rejected": self.rejected.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PreferencePair":
        return cls(
            prompt=data["prompt"],
            chosen=ReasoningOutput.from_dict(data["chosen"]),
            rejected=ReasoningOutput.from_dict(data["rejected"]),
        )


DatasetItem = Union[Sample, PreferencePair]


@dataclass(frozen=True)
class Dataset:
    """Named, ordered collection of samples or preference pairs."""

    name: str
    samples: tuple[DatasetItem, ...] = ()
    provenance: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "provenance", dict(self.provenance))

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[DatasetItem]:
        return iter(self.samples)


@dataclass(frozen=True)
class RewardSpec:
    """Weights of the composite reward and the answer-matching mode."""

    w_acc: float = 0.8
    w_fmt: float = 0.2
    matcher: str = "normalized"  # "exact" | "normalized"

    def __post_init__(self):
        if self.w_acc < 0 or self.w_fmt < 0:
            raise ValueError("reward weights must be non-negative")
        if abs(self.w_acc + self.w_fmt - 1.0) > 1e-9:
            raise ValueError("w_acc + w_fmt must equal 1")
        if self.matcher not in ("exact", "normalized"):
            raise ValueError(f"unknown matcher: {self.matcher!r}")


@dataclass(frozen=True)
class CurationConfig:
    """Pass@k difficulty window and distillation sampling settings."""

    k: int = 8
    keep_min: int = 3
    keep_max: int = 6
    distill_samples: int = 8
    temperature: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if not 0 <= self.keep_min <= self.keep_max <= self.k:
            raise ValueError("require 0 <= keep_min <= keep_max <= k")
        if self.distill_samples < 1:
            raise ValueError("distill_samples must be a positive integer")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


@dataclass(frozen=True)
class TrainingMetrics:
    """Per-iteration series plus scalar notes recorded by the trainers."""

    mean_reward: tuple[float, ...] = ()
    think_tokens: tuple[float, ...] = ()
    clip_fraction: tuple[float, ...] = ()
    think_fraction: tuple[float, ...] = ()
    notes: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mean_reward", tuple(float(x) for x in self.mean_reward))
        object.__setattr__(self, "think_tokens", tuple(float(x) for x in self.think_tokens))
        object.__setattr__(self, "clip_fraction", tuple(float(x) for x in self.clip_fraction))
        object.__setattr__(self, "think_fraction", tuple(float(x) for x in self.think_fraction))
        object.__setattr__(self, "notes", dict(self.notes))

    def extended(self, **series_points: float) -> "TrainingMetrics":
        """Return a copy with one point appended to each named series."""
        fields = {
            "mean_reward": self.mean_reward,
            "think_tokens": self.think_tokens,
            "clip_fraction": self.clip_fraction,
            "think_fraction": self.think_fraction,
        }
        for key, value in series_points.items():
            if key not in fields:
                raise KeyError(f"unknown metric series: {key}")
            fields[key] = fields[key] + (float(value),)
        return TrainingMetrics(notes=self.notes, **fields)


@dataclass(frozen=True)
class IterationState:
    """Loop state after iteration t: checkpoint, distilled corpus, metrics."""

    t: int
    checkpoint_ref: str
    distilled: Dataset
    metrics: TrainingMetrics = TrainingMetrics()

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("iteration index must be non-negative")


def validate_dataset(dataset: Dataset) -> list[str]:
    """Report every invariant violation in `dataset`; empty list means clean.

    Violations are data, not faults: nothing raises, callers decide policy.
    """
    violations: list[str] = []
    seen: set[str] = set()
    for item in dataset.samples:
        if isinstance(item, Sample):
            if item.id in seen:
                violations.append(f"duplicate id: {item.id}")
            seen.add(item.id)
            if item.modality not in (MODALITY_TEXT, MODALITY_AUDIO):
                violations.append(f"unknown modality {item.modality!r}: {item.id}")
            if item.modality == MODALITY_AUDIO and not item.audio_ref:
                violations.append(f"audio sample without audio_ref: {item.id}")
            if not item.answer_truth.strip():
                violations.append(f"empty answer_truth: {item.id}")
        elif isinstance(item, PreferencePair):
            if item.chosen == item.rejected:
                violations.append(f"chosen equals rejected for prompt: {item.prompt!r}")
            for role, out in (("chosen", item.chosen), ("rejected", item.rejected)):
                if not out.response.strip():
                    violations.append(f"empty {role} response for prompt: {item.prompt!r}")
        else:
            violations.append(f"unsupported item type: {type(item).__name__}")
    return violations


def _item_to_dict(item: DatasetItem) -> dict[str, Any]:
    return item.to_dict()


def _item_from_dict(data: Mapping[str, Any]) -> DatasetItem:
    if "chosen" in data and "rejected" in data:
        return PreferencePair.from_dict(data)
    return Sample.from_dict(data)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write one JSON object per line, preceded by a '#meta ' provenance header."""
    path = Path(path)
    meta = {"name": dataset.name, "provenance": dict(sorted(dataset.provenance.items()))}
    lines = [META_PREFIX + json.dumps(meta, ensure_ascii=False, sort_keys=True)]
    lines.extend(json.dumps(_item_to_dict(item), ensure_ascii=False) for item in dataset.samples)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    """Inverse of `save_dataset`; tolerates a missing header line."""
    path = Path(path)
    name = path.stem
    provenance: dict[str, str] = {}
    items: list[DatasetItem] = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if lineno == 0 and line.startswith(META_PREFIX):
                meta = json.loads(line[len(META_PREFIX):])
                name = meta.get("name", name)
                provenance = {str(k): str(v) for k, v in meta.get("provenance", {}).items()}
                continue
            items.append(_item_from_dict(json.loads(line)))
    return Dataset(name=name, samples=tuple(items), provenance=provenance)


def filter_by_tags(dataset: Dataset, include: Sequence[str]) -> Dataset:
    """Keep the samples carrying at least one of the requested tags."""
    wanted = set(include)
    kept = tuple(
        s for s in dataset.samples
        if isinstance(s, Sample) and s.tags & wanted
    )
    provenance = dict(dataset.provenance)
    provenance["tag_filter"] = ",".join(sorted(wanted))
    return Dataset(name=dataset.name, samples=kept, provenance=provenance)

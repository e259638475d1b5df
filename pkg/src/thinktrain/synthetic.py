"""Deterministic desk-scale corpora for exercising the pipeline.

Four generators: a copy task and single-digit sums (verifiable text QA),
perception prompts whose grounded reference chains pass the rule judge by
construction, and self-cognition prompts with a count-exact share of
injected denial behavior. Everything is seeded; identical specs produce
identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UnsupportedKind
from .policy import Vocabulary, derive_rng
from .types import MODALITY_AUDIO, MODALITY_TEXT, Dataset, Sample

KINDS = ("copy_task", "arithmetic_task", "perception_task", "cognition_task")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    size: int
    error_injection_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("size must be at least 1")
        if not 0.0 <= self.error_injection_rate <= 1.0:
            raise ValueError("error_injection_rate must lie in [0, 1]")


_COPY_WORDS = tuple(f"w{i}" for i in range(8))

_PERCEPTION_CLASSES = (
    # (cue word, question template, answer, grounded reference chain)
    ("falls", "melody falls what key", "minor", "minor key falls. low pitch contour."),
    ("rises", "melody rises what key", "major", "major key rises. high pitch contour."),
    ("rings", "tone rings what timbre", "bright", "bright timbre rings. high frequency tone."),
    ("hums", "tone hums what timbre", "dark", "dark timbre hums. low frequency tone."),
)
_SURROGATE_CHAIN = "the lyrics sound sad. transcript mentions tears."

_COG_QUESTION = "clip {filler} describe the sound you hear"
_COG_FILLERS = tuple(f"c{i}" for i in range(8))
_COG_POSITIVE = ("pitch steady. timbre bright.", "i hear a bright steady tone")
_COG_NEGATIVE = ("no audio input available.", "i cannot hear sounds")


def _words_for(kind: str) -> list[str]:
    if kind == "copy_task":
        return ["copy", *_COPY_WORDS]
    if kind == "arithmetic_task":
        return ["what", "is", "plus", "equals", *[str(n) for n in range(19)]]
    if kind == "perception_task":
        words: list[str] = []
        for _, question, answer, chain in _PERCEPTION_CLASSES:
            words.extend(question.split())
            words.append(answer)
            words.extend(chain.split())
        words.extend(_SURROGATE_CHAIN.split())
        return words
    if kind == "cognition_task":
        words = ["clip", *_COG_FILLERS]
        words.extend("describe the sound you hear".split())
        for think, response in (_COG_POSITIVE, _COG_NEGATIVE):
            words.extend(think.split())
            words.extend(response.split())
        return words
    raise UnsupportedKind(f"unknown generator kind: {kind!r}")


def default_vocab(kinds: str | tuple[str, ...] | list[str]) -> Vocabulary:
    """Vocabulary covering one or several generator kinds."""
    if isinstance(kinds, str):
        kinds = (kinds,)
    words: list[str] = []
    for kind in kinds:
        words.extend(_words_for(kind))
    return Vocabulary.from_words(words)


def _check_vocab(vocab: Vocabulary, kind: str) -> None:
    known = set(vocab.tokens)
    missing = [w for w in _words_for(kind) if w not in known]
    if missing:
        raise UnsupportedKind(f"vocabulary lacks tokens for {kind}: {missing[:5]}")


def generate(spec: GeneratorSpec, vocab: Vocabulary) -> Dataset:
    """Produce a seeded dataset of the requested kind over `vocab`."""
    if spec.kind not in KINDS:
        raise UnsupportedKind(f"unknown generator kind: {spec.kind!r}")
    _check_vocab(vocab, spec.kind)
    rng = derive_rng(spec.seed, spec.kind)
    samples: list[Sample] = []

    if spec.kind == "copy_task":
        for i in range(spec.size):
            word = _COPY_WORDS[int(rng.integers(len(_COPY_WORDS)))]
            samples.append(Sample(
                id=f"copy-{i:05d}",
                modality=MODALITY_TEXT,
                question=f"copy {word}",
                answer_truth=word,
                response_truth=word,
                tags=frozenset({"copy"}),
            ))

    elif spec.kind == "arithmetic_task":
        for i in range(spec.size):
            a = int(rng.integers(10))
            b = int(rng.integers(10))
            total = str(a + b)
            samples.append(Sample(
                id=f"arith-{i:05d}",
                modality=MODALITY_TEXT,
                question=f"what is {a} plus {b}",
                answer_truth=total,
                native_think=f"{a} plus {b} equals {total}",
                response_truth=total,
                tags=frozenset({"arith", "task"}),
            ))

    elif spec.kind == "perception_task":
        n_poisoned = round(spec.error_injection_rate * spec.size)
        poisoned = set(rng.permutation(spec.size)[:n_poisoned].tolist())
        for i in range(spec.size):
            _, question, answer, chain = _PERCEPTION_CLASSES[int(rng.integers(len(_PERCEPTION_CLASSES)))]
            tags = {"perception", "timbral"} if "timbre" in question else {"perception"}
            if i in poisoned:
                chain = _SURROGATE_CHAIN
                tags.add("poisoned")
            samples.append(Sample(
                id=f"perc-{i:05d}",
                modality=MODALITY_AUDIO,
                question=question,
                answer_truth=answer,
                audio_ref=f"audio://perc-{i:05d}",
                native_think=chain,
                response_truth=answer,
                tags=frozenset(tags),
            ))

    elif spec.kind == "cognition_task":
        n_injected = round(spec.error_injection_rate * spec.size)
        injected = set(rng.permutation(spec.size)[:n_injected].tolist())
        for i in range(spec.size):
            think, response = _COG_NEGATIVE if i in injected else _COG_POSITIVE
            tags = {"self-cognition"}
            if i in injected:
                tags.add("denial-injected")
            samples.append(Sample(
                id=f"cog-{i:05d}",
                modality=MODALITY_AUDIO,
                question=_COG_QUESTION.format(filler=_COG_FILLERS[i % len(_COG_FILLERS)]),
                answer_truth=_COG_POSITIVE[1],
                audio_ref=f"audio://cog-{i:05d}",
                native_think=think,
                response_truth=response,
                tags=frozenset(tags),
            ))

    provenance = {
        "generator": spec.kind,
        "size": str(spec.size),
        "seed": str(spec.seed),
        "error_injection_rate": repr(float(spec.error_injection_rate)),
    }
    return Dataset(name=spec.kind, samples=tuple(samples), provenance=provenance)


@dataclass(frozen=True)
class AblationEnv:
    """The think-budget micro-task: small enough to enumerate every trajectory.

    The cold-start mixture is dominated by empty-think targets with a
    minority of content chains, the same shape as a cold start whose audio
    data mostly carries the empty reasoning marker. Think tokens spend the
    five-token generation budget, so an accuracy-only reward reverts to the
    well-trained short prior, while the composite reward's format term makes
    content-bearing correct trajectories strictly dominant. Content chains
    carry the class token through the think span so they stay answerable
    inside the context window.
    """

    vocab: Vocabulary
    prompts: Dataset
    coldstart: Dataset
    max_len: int


def build_ablation_env(empty_share: int = 3) -> AblationEnv:
    """Eight-token vocabulary, two prompts, generation budget of five.

    `empty_share` is the number of empty-think cold-start exemplars per
    class, against one short and one long content chain.
    """
    vocab = Vocabulary.from_words(["cue", "A", "B", "w"])
    prompts = []
    coldstart = []
    for answer in ("A", "B"):
        base = Sample(
            id=f"abl-{answer}",
            modality=MODALITY_AUDIO,
            question=f"cue {answer}",
            answer_truth=answer,
            audio_ref=f"audio://abl-{answer}",
            response_truth=answer,
        )
        prompts.append(base)
        thinks = [None] * empty_share + [answer, f"{answer} w"]
        for j, think in enumerate(thinks):
            coldstart.append(Sample(
                id=f"abl-{answer}-cs{j}",
                modality=MODALITY_AUDIO,
                question=base.question,
                answer_truth=answer,
                audio_ref=base.audio_ref,
                native_think=think,
                response_truth=answer,
            ))
    return AblationEnv(
        vocab=vocab,
        prompts=Dataset(name="ablation_prompts", samples=tuple(prompts)),
        coldstart=Dataset(name="ablation_coldstart", samples=tuple(coldstart)),
        max_len=5,
    )

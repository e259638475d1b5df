"""Toy autoregressive policy with a value head.

The policy maps the one-hot features of the last `m` context tokens
linearly to a logit per vocabulary token, which makes every training
objective in this package exactly differentiable and cheap to verify
against finite differences. The format tags are atomic vocabulary tokens
so format presence is learnable. This is deliberately not a language
model; it is the smallest generator on which the full recipe is exact.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import GenerationFailure, OutOfVocabulary
from .formats import DEFAULT_FORMAT, FormatConfig, parse_lenient
from .types import ReasoningOutput, Sample, Trajectory


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token set with reserved pad/eos and atomic format tags."""

    tokens: tuple[str, ...]
    eos: str = "<eos>"
    pad: str = "<pad>"
    open_tag: str = "<think>"
    close_tag: str = "</think>"
    _ids: dict = field(init=False, repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")
        for required in (self.eos, self.pad, self.open_tag, self.close_tag):
            if required not in self.tokens:
                raise ValueError(f"vocabulary must contain {required!r}")
        object.__setattr__(self, "_ids", {tok: i for i, tok in enumerate(self.tokens)})

    @classmethod
    def from_words(cls, words: Sequence[str], **kwargs) -> "Vocabulary":
        """Build a vocabulary from plain words, prepending the reserved tokens."""
        probe = cls.__dataclass_fields__
        eos = kwargs.get("eos", probe["eos"].default)
        pad = kwargs.get("pad", probe["pad"].default)
        open_tag = kwargs.get("open_tag", probe["open_tag"].default)
        close_tag = kwargs.get("close_tag", probe["close_tag"].default)
        specials = (pad, eos, open_tag, close_tag)
        rest = tuple(w for w in dict.fromkeys(words) if w not in specials)
        return cls(tokens=specials + rest, **kwargs)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def eos_id(self) -> int:
        return self._ids[self.eos]

    @property
    def pad_id(self) -> int:
        return self._ids[self.pad]

    @property
    def open_id(self) -> int:
        return self._ids[self.open_tag]

    @property
    def close_id(self) -> int:
        return self._ids[self.close_tag]

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise OutOfVocabulary(f"unknown token: {token!r}") from None

    def tokenize(self, text: str) -> list[int]:
        """Split on the atomic tags, then on whitespace."""
        pattern = f"({re.escape(self.open_tag)}|{re.escape(self.close_tag)})"
        ids: list[int] = []
        for part in re.split(pattern, text):
            if part in (self.open_tag, self.close_tag):
                ids.append(self._ids[part])
            else:
                ids.extend(self.id_of(word) for word in part.split())
        return ids

    def detokenize(self, ids: Sequence[int]) -> str:
        """Join tokens with single spaces, dropping pad and eos."""
        skip = {self.eos_id, self.pad_id}
        return " ".join(self.tokens[i] for i in ids if i not in skip)


@dataclass(frozen=True, eq=False)
class ToyPolicy:
    """Linear softmax policy over the concatenated one-hot context window."""

    vocab: Vocabulary
    m: int
    weights: np.ndarray        # (V, m*V) feature-to-logit map
    value_weights: np.ndarray  # (m*V,) value head on the same features

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("context window m must be positive")
        w = np.array(self.weights, dtype=np.float64)
        v = np.array(self.value_weights, dtype=np.float64)
        dim = self.m * self.vocab.size
        if w.shape != (self.vocab.size, dim):
            raise ValueError(f"weights must have shape {(self.vocab.size, dim)}, got {w.shape}")
        if v.shape != (dim,):
            raise ValueError(f"value_weights must have shape {(dim,)}, got {v.shape}")
        w.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "value_weights", v)

    @classmethod
    def initial(cls, vocab: Vocabulary, m: int = 4) -> "ToyPolicy":
        """Zero-weight policy: uniform sampling distribution, zero values."""
        dim = m * vocab.size
        return cls(vocab=vocab, m=m, weights=np.zeros((vocab.size, dim)), value_weights=np.zeros(dim))

    def updated(self, weights: np.ndarray | None = None, value_weights: np.ndarray | None = None) -> "ToyPolicy":
        return ToyPolicy(
            vocab=self.vocab,
            m=self.m,
            weights=self.weights if weights is None else weights,
            value_weights=self.value_weights if value_weights is None else value_weights,
        )


def _entropy(parts: Sequence[int | str]) -> list[int]:
    words = []
    for part in parts:
        if isinstance(part, str):
            digest = hashlib.blake2s(part.encode("utf-8"), digest_size=8).digest()
            words.append(int.from_bytes(digest, "big"))
        else:
            words.append(int(part) & 0xFFFFFFFFFFFFFFFF)
    return words


def derive_rng(*parts: int | str) -> np.random.Generator:
    """Deterministic RNG from a mixed tuple of ints and strings."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(parts)))


def mix_seed(*parts: int | str) -> int:
    """Fold a mixed tuple into one stable integer seed."""
    digest = hashlib.blake2s(repr(_entropy(parts)).encode("ascii"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _context_cols(policy: ToyPolicy, context: Sequence[int]) -> np.ndarray:
    m, size = policy.m, policy.vocab.size
    tail = list(context[-m:])
    if len(tail) < m:
        tail = [policy.vocab.pad_id] * (m - len(tail)) + tail
    return np.arange(m) * size + np.asarray(tail, dtype=np.intp)


def _batch_logprobs(policy: ToyPolicy, cols: np.ndarray) -> np.ndarray:
    """Log-softmax rows for a (P, m) matrix of feature columns."""
    logits = policy.weights[:, cols].sum(axis=2).T  # (P, V)
    logits = logits - logits.max(axis=1, keepdims=True)
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def logprobs(policy: ToyPolicy, context: Sequence[int]) -> np.ndarray:
    """Log-probability vector over the vocabulary for the next token."""
    return _batch_logprobs(policy, _context_cols(policy, context)[None, :])[0]


def value_estimate(policy: ToyPolicy, context: Sequence[int]) -> float:
    """Linear value head on the same context features."""
    return float(policy.value_weights[_context_cols(policy, context)].sum())


def sample(
    policy: ToyPolicy,
    prompt: Sequence[int],
    temperature: float = 1.0,
    max_len: int = 64,
    seed: int | Sequence[int | str] = 0,
) -> Trajectory:
    """Autoregressive draw until eos or max_len.

    Behavior log-probabilities are recorded under the sampling distribution
    (softmax of logits / temperature); values are recorded at the context
    each token was drawn from.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    rng = derive_rng(*seed) if isinstance(seed, (tuple, list)) else derive_rng(seed)
    context = list(prompt)
    gen: list[int] = []
    lps: list[float] = []
    values: list[float] = []
    for _ in range(max_len):
        cols = _context_cols(policy, context)
        logits = policy.weights[:, cols].sum(axis=1)
        if temperature != 1.0:
            logits = logits / temperature
        logits = logits - logits.max()
        lp = logits - np.log(np.exp(logits).sum())
        probs = np.exp(lp)
        probs = probs / probs.sum()
        token = int(rng.choice(policy.vocab.size, p=probs))
        gen.append(token)
        lps.append(float(lp[token]))
        values.append(float(policy.value_weights[cols].sum()))
        context.append(token)
        if token == policy.vocab.eos_id:
            break
    return Trajectory(
        prompt_tokens=tuple(prompt),
        gen_tokens=tuple(gen),
        behavior_logprobs=tuple(lps),
        values=tuple(values),
    )


def _gather_positions(
    policy: ToyPolicy,
    pairs: Sequence[tuple[Sequence[int], Sequence[int]]],
) -> tuple[np.ndarray, np.ndarray]:
    cols_rows: list[np.ndarray] = []
    targets: list[int] = []
    for prompt, target in pairs:
        seq = list(prompt) + list(target)
        base = len(prompt)
        for k, tok in enumerate(target):
            cols_rows.append(_context_cols(policy, seq[:base + k]))
            targets.append(tok)
    return np.asarray(cols_rows, dtype=np.intp), np.asarray(targets, dtype=np.intp)


def _scatter_rows(policy: ToyPolicy, cols: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Accumulate per-position (V,) rows onto the active feature columns."""
    acc = np.zeros((policy.m * policy.vocab.size, policy.vocab.size))
    np.add.at(acc, cols.ravel(), np.repeat(rows, policy.m, axis=0))
    return acc.T


def sft_loss_and_grad(
    policy: ToyPolicy,
    targets: Sequence[str],
    prompts: Sequence[str] | None = None,
    append_eos: bool = True,
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the target tokens, with exact gradient.

    Prompts, when given, condition the contexts but contribute no loss.
    """
    if prompts is not None and len(prompts) != len(targets):
        raise ValueError("prompts must match targets in length")
    pairs = []
    for i, text in enumerate(targets):
        prompt_ids = policy.vocab.tokenize(prompts[i]) if prompts is not None else []
        target_ids = policy.vocab.tokenize(text)
        if append_eos:
            target_ids = target_ids + [policy.vocab.eos_id]
        if not target_ids:
            raise ValueError("empty target after tokenization")
        pairs.append((prompt_ids, target_ids))
    cols, ys = _gather_positions(policy, pairs)
    lp = _batch_logprobs(policy, cols)
    n = len(ys)
    loss = -float(lp[np.arange(n), ys].mean())
    resid = np.exp(lp)
    resid[np.arange(n), ys] -= 1.0
    grad = _scatter_rows(policy, cols, resid / n)
    return loss, grad


def sft_train(
    policy: ToyPolicy,
    targets: Sequence[str],
    prompts: Sequence[str] | None = None,
    steps: int = 100,
    step_size: float = 0.5,
    append_eos: bool = True,
) -> tuple[ToyPolicy, list[float]]:
    """Plain gradient descent on the SFT loss; returns the loss trace."""
    losses = []
    for _ in range(steps):
        loss, grad = sft_loss_and_grad(policy, targets, prompts, append_eos)
        policy = policy.updated(weights=policy.weights - step_size * grad)
        losses.append(loss)
    return policy, losses


def sequence_logprob(policy: ToyPolicy, prompt: Sequence[int], target: Sequence[int]) -> float:
    """Sum of next-token log-probabilities of `target` given `prompt`."""
    lp, _ = sequence_logprob_and_grad(policy, prompt, target, compute_grad=False)
    return lp


def sequence_logprob_and_grad(
    policy: ToyPolicy,
    prompt: Sequence[int],
    target: Sequence[int],
    compute_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    if not target:
        raise ValueError("target must be non-empty")
    cols, ys = _gather_positions(policy, [(prompt, target)])
    lp = _batch_logprobs(policy, cols)
    n = len(ys)
    total = float(lp[np.arange(n), ys].sum())
    if not compute_grad:
        return total, None
    rows = -np.exp(lp)
    rows[np.arange(n), ys] += 1.0
    return total, _scatter_rows(policy, cols, rows)


def value_loss_and_grad(
    policy: ToyPolicy,
    contexts: Sequence[Sequence[int]],
    targets: Sequence[float],
) -> tuple[float, np.ndarray]:
    """Mean squared error of the value head over contexts, with gradient."""
    if len(contexts) != len(targets):
        raise ValueError("contexts and targets must have equal length")
    cols = np.asarray([_context_cols(policy, c) for c in contexts], dtype=np.intp)
    preds = policy.value_weights[cols].sum(axis=1)
    err = preds - np.asarray(targets, dtype=np.float64)
    mse = float((err ** 2).mean())
    grad = np.zeros(policy.m * policy.vocab.size)
    np.add.at(grad, cols.ravel(), np.repeat(2.0 * err / len(err), policy.m))
    return mse, grad


CHECKPOINT_VERSION = 1


def save_checkpoint(policy: ToyPolicy, path: str | Path, seed: int = 0) -> None:
    """Versioned JSON checkpoint; reloading reproduces sampling bit-exactly."""
    record = {
        "version": CHECKPOINT_VERSION,
        "seed": seed,
        "m": policy.m,
        "vocab": {
            "tokens": list(policy.vocab.tokens),
            "eos": policy.vocab.eos,
            "pad": policy.vocab.pad,
            "open_tag": policy.vocab.open_tag,
            "close_tag": policy.vocab.close_tag,
        },
        "weights": policy.weights.tolist(),
        "value_weights": policy.value_weights.tolist(),
    }
    Path(path).write_text(json.dumps(record, ensure_ascii=False), encoding="utf-8")


def load_checkpoint(path: str | Path) -> ToyPolicy:
    record = json.loads(Path(path).read_text(encoding="utf-8"))
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {record.get('version')}")
    vocab = Vocabulary(
        tokens=tuple(record["vocab"]["tokens"]),
        eos=record["vocab"]["eos"],
        pad=record["vocab"]["pad"],
        open_tag=record["vocab"]["open_tag"],
        close_tag=record["vocab"]["close_tag"],
    )
    return ToyPolicy(
        vocab=vocab,
        m=record["m"],
        weights=np.array(record["weights"], dtype=np.float64),
        value_weights=np.array(record["value_weights"], dtype=np.float64),
    )


GenerationFn = Callable[[Sample, int], ReasoningOutput]


def make_generation_fn(
    policy: ToyPolicy,
    fmt: FormatConfig = DEFAULT_FORMAT,
    temperature: float = 1.0,
    max_len: int = 32,
    seed: int = 0,
) -> GenerationFn:
    """Generation function over the toy policy: (sample, draw index) -> output.

    Seeds derive from (seed, sample id, draw index), so distinct samples can
    be generated concurrently and still reproduce bit-exactly.
    """
    def generate(item: Sample, draw: int) -> ReasoningOutput:
        prompt = policy.vocab.tokenize(item.question)
        traj = sample(policy, prompt, temperature=temperature, max_len=max_len,
                      seed=(seed, item.id, draw))
        out, _ = parse_lenient(policy.vocab.detokenize(traj.gen_tokens), fmt)
        return out

    return generate


def replay_generation_fn(recorded: Mapping[str, Sequence[ReasoningOutput]]) -> GenerationFn:
    """Generation function replaying recorded outputs keyed by sample id."""
    def generate(item: Sample, draw: int) -> ReasoningOutput:
        outputs = recorded.get(item.id)
        if outputs is None or draw >= len(outputs):
            raise GenerationFailure(f"no recorded generation {draw} for sample {item.id}")
        return outputs[draw]

    return generate

"""Judgment of reasoning chains: grounding, coherence, self-cognition.

Two judges share one verdict schema: a deterministic rule-based judge built
on editable lexicons, and an HTTP client for an external judge service.
Candidates the remote judge cannot score stay unjudged; callers default to
dropping them (fail closed).
"""

from __future__ import annotations

import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import requests

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import JudgeProtocolError, JudgeTimeout, JudgeUnavailable
from .types import ReasoningOutput, Sample


@dataclass(frozen=True)
class Verdict:
    grounding: bool
    coherence: bool
    cognition_ok: bool
    rationale: str = ""

    def __post_init__(self):
        if not (self.grounding and self.coherence and self.cognition_ok) and not self.rationale:
            raise ValueError("rationale must be non-empty when any check fails")


@dataclass(frozen=True)
class Lexicons:
    """Term lists for the rule judge; acoustic and surrogate sets are disjoint."""

    acoustic_terms: frozenset[str]
    surrogate_terms: frozenset[str]
    denial_patterns: frozenset[str]
    contradiction_markers: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "acoustic_terms", frozenset(t.casefold() for t in self.acoustic_terms))
        object.__setattr__(self, "surrogate_terms", frozenset(t.casefold() for t in self.surrogate_terms))
        object.__setattr__(self, "denial_patterns", frozenset(t.casefold() for t in self.denial_patterns))
        object.__setattr__(self, "contradiction_markers", frozenset(t.casefold() for t in self.contradiction_markers))
        if self.acoustic_terms & self.surrogate_terms:
            raise ValueError("acoustic_terms and surrogate_terms must be disjoint")


def load_lexicons(path: str | Path | None = None) -> Lexicons:
    """Load lexicons from a TOML file; None loads the packaged defaults."""
    if path is None:
        path = Path(__file__).parent / "data" / "lexicons.toml"
    with Path(path).open("rb") as handle:
        data = tomllib.load(handle)
    return Lexicons(
        acoustic_terms=frozenset(data.get("acoustic_terms", ())),
        surrogate_terms=frozenset(data.get("surrogate_terms", ())),
        denial_patterns=frozenset(data.get("denial_patterns", ())),
        contradiction_markers=frozenset(data.get("contradiction_markers", ())),
    )


_WS = re.compile(r"\s+")


def _canon(text: str) -> str:
    return _WS.sub(" ", text.casefold())


def _count_terms(text: str, terms: frozenset[str]) -> int:
    canon = _canon(text)
    return sum(1 for term in terms if term in canon)


def _sentence_units(text: str) -> int:
    return sum(1 for part in re.split(r"[.!?;\n]+", text) if part.strip())


def _matches_any(text: str, patterns: frozenset[str]) -> bool:
    canon = _canon(text)
    return any(p in canon for p in patterns)


def rule_judge(sample: Sample, out: ReasoningOutput, lex: Lexicons) -> Verdict:
    """Deterministic lexicon-based verdict.

    Grounding requires acoustic terms to at least tie surrogate terms, not
    merely appear, so chains that lean on transcripts or captions fail even
    when they name-drop one acoustic word.
    """
    n_acoustic = _count_terms(out.think, lex.acoustic_terms)
    n_surrogate = _count_terms(out.think, lex.surrogate_terms)
    grounding = n_acoustic >= 1 and n_acoustic >= n_surrogate

    units = _sentence_units(out.think)
    contradiction = _matches_any(out.think, lex.contradiction_markers)
    coherence = units >= 2 and not contradiction

    denial = _matches_any(out.think, lex.denial_patterns) or _matches_any(out.response, lex.denial_patterns)
    cognition_ok = not denial

    reasons = []
    if not grounding:
        if n_acoustic == 0:
            reasons.append("no acoustic terms in think span")
        else:
            reasons.append(f"surrogate terms outnumber acoustic terms ({n_surrogate} > {n_acoustic})")
    if not coherence:
        if units < 2:
            reasons.append(f"only {units} sentence unit(s) in think span")
        if contradiction:
            reasons.append("contradiction marker present")
    if not cognition_ok:
        reasons.append("denial pattern matched")
    rationale = "; ".join(reasons) if reasons else "all checks passed"
    return Verdict(grounding=grounding, coherence=coherence, cognition_ok=cognition_ok, rationale=rationale)


def verdict_to_dict(verdict: Verdict) -> dict[str, Any]:
    return {
        "grounding": verdict.grounding,
        "coherence": verdict.coherence,
        "cognition_ok": verdict.cognition_ok,
        "rationale": verdict.rationale,
    }


def verdict_from_dict(data: Mapping[str, Any]) -> Verdict:
    for key in ("grounding", "coherence", "cognition_ok", "rationale"):
        if key not in data:
            raise JudgeProtocolError(f"judge response missing field: {key}")
    for key in ("grounding", "coherence", "cognition_ok"):
        if not isinstance(data[key], bool):
            raise JudgeProtocolError(f"judge field {key} must be a boolean")
    try:
        return Verdict(
            grounding=data["grounding"],
            coherence=data["coherence"],
            cognition_ok=data["cognition_ok"],
            rationale=str(data["rationale"]),
        )
    except ValueError as exc:
        raise JudgeProtocolError(str(exc)) from exc


class RemoteJudge:
    """HTTP client for an external judge service.

    Wire protocol: POST one JSON object {id, question, think, response,
    modality}; the service answers JSON {grounding, coherence, cognition_ok,
    rationale}. Non-2xx statuses and timeouts are transient and retried;
    well-formed transport with a malformed body is a protocol error and is
    not retried.
    """

    def __init__(
        self,
        endpoint: str,
        timeout_s: float = 5.0,
        retries: int = 3,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
    ):
        if retries < 1:
            raise ValueError("retries must be at least 1")
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.retries = retries
        self.max_in_flight = max(1, max_in_flight)
        self._session = session or requests.Session()

    def judge(self, sample: Sample, out: ReasoningOutput) -> Verdict:
        payload = {
            "id": sample.id,
            "question": sample.question,
            "think": out.think,
            "response": out.response,
            "modality": sample.modality,
        }
        timeouts = 0
        last_error: Exception | None = None
        for _ in range(self.retries):
            try:
                resp = self._session.post(self.endpoint, json=payload, timeout=self.timeout_s)
            except requests.Timeout as exc:
                timeouts += 1
                last_error = exc
                continue
            except requests.RequestException as exc:
                last_error = exc
                continue
            if not 200 <= resp.status_code < 300:
                last_error = JudgeUnavailable(f"judge returned status {resp.status_code}")
                continue
            try:
                data = resp.json()
            except ValueError as exc:
                raise JudgeProtocolError(f"judge response is not JSON: {exc}") from exc
            return verdict_from_dict(data)
        if timeouts == self.retries:
            raise JudgeTimeout(f"judge timed out on all {self.retries} attempts") from last_error
        raise JudgeUnavailable(f"judge unavailable after {self.retries} attempts") from last_error

    def judge_many(
        self,
        items: Sequence[tuple[Sample, ReasoningOutput]],
    ) -> list[Verdict | None]:
        """Judge a batch with bounded concurrency; failures yield None entries."""
        def one(item: tuple[Sample, ReasoningOutput]) -> Verdict | None:
            try:
                return self.judge(*item)
            except (JudgeUnavailable, JudgeProtocolError):
                return None

        if not items:
            return []
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(one, items))

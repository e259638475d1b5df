"""Grammar for the think-block response format.

A well-formed generation is `{open_tag}{think}{close_tag}{separator}{response}`
with the open tag at offset 0 and exactly one tag pair. Samples that come
without a native reasoning chain are standardized with a whitespace-only
think body so the structural format is present without fake deliberation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import MalformedFormat, MissingResponse
from .types import ReasoningOutput, Sample


@dataclass(frozen=True)
class FormatConfig:
    open_tag: str = "<think>"
    close_tag: str = "</think>"
    empty_body: str = "\n\n"
    separator: str = "\n"

    def __post_init__(self):
        if not self.open_tag or not self.close_tag:
            raise ValueError("format tags must be non-empty")
        if self.open_tag == self.close_tag:
            raise ValueError("open_tag and close_tag must differ")
        # A whitespace-only empty body guarantees standardized CoT-less
        # samples never count as reasoning-present.
        if self.empty_body.strip():
            raise ValueError("empty_body must be whitespace only")


DEFAULT_FORMAT = FormatConfig()


def parse(raw: str, cfg: FormatConfig = DEFAULT_FORMAT) -> ReasoningOutput:
    """Split a raw generation into its think span and final response.

    Raises MalformedFormat unless `raw` starts with exactly one open tag
    followed by exactly one close tag.
    """
    n_open = raw.count(cfg.open_tag)
    n_close = raw.count(cfg.close_tag)
    if n_open == 0 or n_close == 0:
        raise MalformedFormat(f"missing think tags in {raw!r}")
    if n_open > 1 or n_close > 1:
        raise MalformedFormat(f"duplicate think tags in {raw!r}")
    if not raw.startswith(cfg.open_tag):
        raise MalformedFormat("open tag must start at offset 0")
    close_at = raw.index(cfg.close_tag)
    if close_at < len(cfg.open_tag):
        raise MalformedFormat("close tag precedes open tag")
    think = raw[len(cfg.open_tag):close_at]
    rest = raw[close_at + len(cfg.close_tag):]
    if cfg.separator and rest.startswith(cfg.separator):
        rest = rest[len(cfg.separator):]
    return ReasoningOutput(think=think, response=rest)


def parse_lenient(raw: str, cfg: FormatConfig = DEFAULT_FORMAT) -> tuple[ReasoningOutput, bool]:
    """Parse, falling back to (whole string as response, no think) when malformed.

    Returns (output, format_ok). The fallback never earns the format reward:
    its think span is empty.
    """
    try:
        return parse(raw, cfg), True
    except MalformedFormat:
        return ReasoningOutput(think="", response=raw), False


def emit(out: ReasoningOutput, cfg: FormatConfig = DEFAULT_FORMAT) -> str:
    """Render an output in the standardized format."""
    return f"{cfg.open_tag}{out.think}{cfg.close_tag}{cfg.separator}{out.response}"


def standardize(sample: Sample, cfg: FormatConfig = DEFAULT_FORMAT) -> str:
    """Build the training target string for a sample.

    Samples with a native reasoning chain keep it; the rest get the
    whitespace-only think prefix so the structure is uniform.
    """
    if sample.response_truth is None or not sample.response_truth.strip():
        raise MissingResponse(f"sample {sample.id} has no response_truth")
    think = sample.native_think if sample.native_think is not None else cfg.empty_body
    return emit(ReasoningOutput(think=think, response=sample.response_truth), cfg)


def reasoning_present(out: ReasoningOutput) -> bool:
    """True iff the think span holds at least one non-whitespace character."""
    return bool(out.think.strip())


def think_token_count(out: ReasoningOutput) -> int:
    """Whitespace-delimited unit count of the think span.

    A desk-scale proxy for model tokens; trainers that know the real token
    sequence report exact counts instead.
    """
    return len(re.findall(r"\S+", out.think))

"""Declarative pipeline configuration.

One TOML file configures every stage; the CLI applies dotted-key overrides
on top and snapshots the resolved result into the run directory. Unknown
keys are rejected so typos fail fast. Relative data paths resolve against
the run directory.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .formats import FormatConfig
from .judges import Lexicons, load_lexicons
from .loop import LoopConfig
from .training import DpoConfig, PpoConfig
from .types import CurationConfig, RewardSpec

JUDGE_ENDPOINT_ENV = "THINKTRAIN_JUDGE_ENDPOINT"


@dataclass(frozen=True)
class JudgeConfig:
    mode: str = "rule"  # "rule" | "remote"
    endpoint: str = ""
    timeout_s: float = 5.0
    retries: int = 3
    fallback_to_rule: bool = False
    max_in_flight: int = 4

    def __post_init__(self):
        if self.mode not in ("rule", "remote"):
            raise ValueError(f"judge mode must be 'rule' or 'remote', got {self.mode!r}")
        if self.mode == "remote" and not self.endpoint:
            raise ValueError("remote judge mode needs an endpoint")
        if self.retries < 1 or self.max_in_flight < 1:
            raise ValueError("retries and max_in_flight must be positive")


@dataclass(frozen=True)
class DataPaths:
    perception: str = ""
    task: str = ""
    rl: str = ""
    cognition: str = ""
    checkpoint: str = ""


@dataclass(frozen=True)
class PipelineConfig:
    run_dir: str = "run"
    seed: int = 0
    fmt: FormatConfig = FormatConfig()
    reward: RewardSpec = RewardSpec()
    curation: CurationConfig = CurationConfig()
    ppo: PpoConfig = PpoConfig()
    dpo: DpoConfig = DpoConfig()
    judge: JudgeConfig = JudgeConfig()
    data: DataPaths = DataPaths()
    lexicons_path: str = ""
    loop_extras: Mapping[str, Any] = field(default_factory=dict)

    def loop_config(self) -> LoopConfig:
        return LoopConfig(
            reward_spec=self.reward,
            ppo=self.ppo,
            dpo=self.dpo,
            curation=self.curation,
            fmt=self.fmt,
            seed=self.seed,
            **dict(self.loop_extras),
        )

    def lexicons(self) -> Lexicons:
        return load_lexicons(self.lexicons_path or None)

    def resolve(self, path: str) -> Path:
        """Resolve a config-declared path; relative paths live under run_dir."""
        p = Path(path)
        return p if p.is_absolute() else Path(self.run_dir) / p


_SECTION_FIELDS = {
    "run": ("dir", "seed"),
    "format": ("open_tag", "close_tag", "empty_body", "separator"),
    "reward": ("w_acc", "w_fmt", "matcher"),
    "curation": ("k", "keep_min", "keep_max", "distill_samples", "temperature"),
    "ppo": (
        "clip_eps", "gamma", "gae_lambda", "kl_coeff", "samples_per_prompt",
        "max_seq_tokens", "epochs_per_batch", "step_size", "entropy_coeff",
        "normalize_advantages",
    ),
    "dpo": ("beta", "step_size", "reference_checkpoint"),
    "loop": (
        "T", "cot_share", "sft_steps", "sft_step_size", "rl_iterations",
        "distill_max_tokens", "dpo_steps", "dpo_pairs", "eval_samples_per_prompt",
        "heldout_share", "collapse_window", "collapse_threshold",
    ),
    "judge": ("mode", "endpoint", "timeout_s", "retries", "fallback_to_rule", "max_in_flight"),
    "data": ("perception", "task", "rl", "cognition", "checkpoint"),
    "lexicons": ("path",),
}


def _check_keys(data: Mapping[str, Any]) -> None:
    for section, content in data.items():
        if section not in _SECTION_FIELDS:
            raise ValueError(f"unknown config section: [{section}]")
        if not isinstance(content, Mapping):
            raise ValueError(f"config section [{section}] must be a table")
        allowed = set(_SECTION_FIELDS[section])
        for key in content:
            if key not in allowed:
                raise ValueError(f"unknown config key: {section}.{key}")


def _build(data: Mapping[str, Any]) -> PipelineConfig:
    _check_keys(data)
    run = data.get("run", {})
    fmt = FormatConfig(**data.get("format", {}))
    reward = RewardSpec(**data.get("reward", {}))
    curation = CurationConfig(**data.get("curation", {}))
    ppo = PpoConfig(**data.get("ppo", {}))
    dpo_section = dict(data.get("dpo", {}))
    dpo_section.setdefault("reference_checkpoint", None)
    dpo = DpoConfig(**dpo_section)
    judge = JudgeConfig(**data.get("judge", {}))
    paths = DataPaths(**data.get("data", {}))
    return PipelineConfig(
        run_dir=str(run.get("dir", "run")),
        seed=int(run.get("seed", 0)),
        fmt=fmt,
        reward=reward,
        curation=curation,
        ppo=ppo,
        dpo=dpo,
        judge=judge,
        data=paths,
        lexicons_path=str(data.get("lexicons", {}).get("path", "")),
        loop_extras=dict(data.get("loop", {})),
    )


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    with Path(path).open("rb") as handle:
        data = tomllib.load(handle)
    return _build(data)


def apply_overrides(data: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict:
    """Merge dotted-key overrides (e.g. 'run.seed') into a raw config tree."""
    merged: dict = {section: dict(content) for section, content in data.items()}
    for dotted, value in overrides.items():
        if "." not in dotted:
            raise ValueError(f"override key must be section.key, got {dotted!r}")
        section, key = dotted.split(".", 1)
        merged.setdefault(section, {})[key] = value
    return merged


def load_with_overrides(path: str | Path, overrides: Mapping[str, Any]) -> tuple[PipelineConfig, dict]:
    """Load a config file, apply overrides, and return the snapshot tree too."""
    with Path(path).open("rb") as handle:
        data = tomllib.load(handle)
    merged = apply_overrides(data, overrides)
    cfg = _build(merged)
    snapshot = {section: dict(content) for section, content in merged.items()}
    if overrides:
        snapshot["_overrides"] = {str(k): v for k, v in sorted(overrides.items())}
    return cfg, snapshot


def snapshot_config(cfg: PipelineConfig) -> dict:
    """JSON-ready view of a resolved configuration."""
    def encode(value: Any) -> Any:
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {
                f.name: encode(getattr(value, f.name))
                for f in dataclasses.fields(value)
                if not f.name.startswith("_")
            }
        if isinstance(value, Mapping):
            return {str(k): encode(v) for k, v in sorted(value.items())}
        if isinstance(value, frozenset):
            return sorted(value)
        return value

    return encode(cfg)

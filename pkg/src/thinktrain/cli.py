"""Command-line surface for the pipeline.

Subcommands cover data generation, policy initialization, pass@k curation,
the full distillation loop, cognition correction, the format-reward
ablation, and report emission. Exit codes are a stable contract: 0 on
success, 2 on usage or I/O problems, 3 on pipeline-state failures.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from contextlib import contextmanager
from pathlib import Path

from .config import (
    JUDGE_ENDPOINT_ENV,
    PipelineConfig,
    load_with_overrides,
)
from .curation import estimate_pass_at_k, select_rl_subset
from .errors import EmptyDistilledSet, JudgeProtocolError, JudgeUnavailable, RecipeError
from .formats import DEFAULT_FORMAT
from .judges import RemoteJudge, rule_judge
from .loop import (
    ABLATION_VARIANTS,
    LoopPools,
    ablation_run,
    run_cognition_correction,
    run_loop,
)
from .policy import ToyPolicy, load_checkpoint, make_generation_fn, save_checkpoint
from .reports import cognition_table, emit_report, write_metrics_csv, write_metrics_jsonl
from .synthetic import KINDS, GeneratorSpec, build_ablation_env, default_vocab, generate
from .types import (
    CurationConfig,
    Dataset,
    RewardSpec,
    load_dataset,
    save_dataset,
    validate_dataset,
)

LOCK_NAME = ".lock"


class _Locked(Exception):
    pass


@contextmanager
def _run_lock(run_dir: Path):
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / LOCK_NAME
    try:
        handle = lock.open("x")
    except FileExistsError:
        raise _Locked(f"run directory is locked by another writer: {lock}") from None
    try:
        handle.write(str(os.getpid()))
        handle.close()
        yield
    finally:
        lock.unlink(missing_ok=True)


def _fail(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def _load_clean_dataset(path: Path) -> Dataset:
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    dataset = load_dataset(path)
    violations = validate_dataset(dataset)
    if violations:
        raise ValueError(f"dataset {path} has violations: " + "; ".join(violations[:5]))
    return dataset


def _build_judge(cfg: PipelineConfig):
    lexicons = cfg.lexicons()

    def rule(sample, out):
        return rule_judge(sample, out, lexicons)

    if cfg.judge.mode == "rule":
        return rule
    endpoint = os.environ.get(JUDGE_ENDPOINT_ENV) or cfg.judge.endpoint
    remote = RemoteJudge(
        endpoint,
        timeout_s=cfg.judge.timeout_s,
        retries=cfg.judge.retries,
        max_in_flight=cfg.judge.max_in_flight,
    )
    if not cfg.judge.fallback_to_rule:
        return remote.judge

    def judge(sample, out):
        try:
            return remote.judge(sample, out)
        except (JudgeUnavailable, JudgeProtocolError):
            return rule(sample, out)

    return judge


def _config_from_args(args) -> tuple[PipelineConfig, dict]:
    overrides = {}
    if getattr(args, "run_dir", None):
        overrides["run.dir"] = args.run_dir
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = args.seed
    if getattr(args, "T", None) is not None:
        overrides["loop.T"] = args.T
    return load_with_overrides(args.config, overrides)


def _snapshot(run_dir: Path, snapshot: dict) -> None:
    path = run_dir / "config_snapshot.json"
    path.write_text(json.dumps(snapshot, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def cmd_gen(args) -> int:
    spec = GeneratorSpec(
        kind=args.kind,
        size=args.size,
        error_injection_rate=args.error_rate,
        seed=args.seed,
    )
    dataset = generate(spec, default_vocab(args.kind))
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} samples to {args.out}")
    return 0


def cmd_init(args) -> int:
    vocab = default_vocab(tuple(args.kinds))
    policy = ToyPolicy.initial(vocab, m=args.window)
    save_checkpoint(policy, args.out, seed=args.seed)
    print(f"wrote checkpoint ({vocab.size} tokens, window {args.window}) to {args.out}")
    return 0


def cmd_curate(args) -> int:
    match = re.fullmatch(r"(\d+)\.\.(\d+)", args.keep)
    if not match:
        raise ValueError(f"--keep expects MIN..MAX, got {args.keep!r}")
    cfg = CurationConfig(
        k=args.k,
        keep_min=int(match.group(1)),
        keep_max=int(match.group(2)),
        temperature=args.temperature,
    )
    pool = _load_clean_dataset(Path(getattr(args, "in")))
    if not Path(args.ckpt).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.ckpt}")
    policy = load_checkpoint(args.ckpt)
    spec = RewardSpec(matcher=args.matcher)
    gen = make_generation_fn(
        policy, DEFAULT_FORMAT,
        temperature=cfg.temperature,
        max_len=args.max_tokens,
        seed=args.seed,
    )
    stats = [estimate_pass_at_k(s, gen, cfg, spec) for s in pool.samples]
    selected = select_rl_subset(stats, cfg, pool)
    save_dataset(selected, args.out)
    for key in ("kept", "dropped_easy", "dropped_hard"):
        print(f"{key}: {selected.provenance[key]}")
    return 0


def cmd_loop(args) -> int:
    cfg, snapshot = _config_from_args(args)
    run_dir = Path(cfg.run_dir)
    pools = LoopPools(
        perception=_load_clean_dataset(cfg.resolve(cfg.data.perception)),
        task=_load_clean_dataset(cfg.resolve(cfg.data.task)),
        rl=_load_clean_dataset(cfg.resolve(cfg.data.rl)),
    )
    checkpoint = cfg.resolve(cfg.data.checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    judge = _build_judge(cfg)
    loop_cfg = cfg.loop_config()
    with _run_lock(run_dir):
        _snapshot(run_dir, snapshot)
        state = run_loop(checkpoint, pools, judge, loop_cfg, run_dir)
    print(f"completed {state.t} iterations; final checkpoint {state.checkpoint_ref}")
    print(f"distilled chains in final iteration: {len(state.distilled)}")
    return 0


def cmd_cognition(args) -> int:
    cfg, snapshot = _config_from_args(args)
    run_dir = Path(cfg.run_dir)
    corpus = _load_clean_dataset(cfg.resolve(cfg.data.cognition))
    checkpoint = cfg.resolve(cfg.data.checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    judge = _build_judge(cfg)
    loop_cfg = cfg.loop_config()
    with _run_lock(run_dir):
        _snapshot(run_dir, snapshot)
        policy, stages = run_cognition_correction(load_checkpoint(checkpoint), corpus, judge, loop_cfg)
        rows = [{"stage": name, "error_rate": rate} for name, rate in stages]
        (run_dir / "cognition_stages.json").write_text(
            json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (run_dir / "cognition_table.txt").write_text(cognition_table(stages), encoding="utf-8")
        save_checkpoint(policy, run_dir / "checkpoint_cognition.json", seed=cfg.seed)
    for name, rate in stages:
        print(f"{name}: {100.0 * rate:.2f}%")
    return 0


def cmd_ablate(args) -> int:
    cfg, snapshot = _config_from_args(args)
    run_dir = Path(cfg.run_dir)
    env = build_ablation_env()
    variants = ABLATION_VARIANTS if args.variant == "both" else (args.variant,)
    loop_cfg = cfg.loop_config()
    with _run_lock(run_dir):
        _snapshot(run_dir, snapshot)
        for variant in variants:
            metrics = ablation_run(variant, env, loop_cfg)
            rows = [
                {
                    "iteration": i,
                    "mean_reward": metrics.mean_reward[i],
                    "think_tokens": metrics.think_tokens[i],
                    "clip_fraction": metrics.clip_fraction[i],
                    "think_fraction": metrics.think_fraction[i],
                }
                for i in range(len(metrics.mean_reward))
            ]
            variant_dir = run_dir / variant
            variant_dir.mkdir(parents=True, exist_ok=True)
            write_metrics_csv(variant_dir / "metrics.csv", rows)
            write_metrics_jsonl(variant_dir / "metrics.jsonl", rows)
            final = metrics.notes.get("final_think_fraction", float("nan"))
            print(f"{variant}: final think fraction {final:.3f}")
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out) if args.out else Path(args.run) / "report"
    try:
        written = emit_report(args.run, out_dir, window=args.window, threshold=args.threshold,
                              plots=args.plots)
    except FileNotFoundError as exc:
        raise FileNotFoundError(str(exc)) from None
    for name in written:
        print(f"wrote {out_dir / name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thinktrain",
        description="Desk-scale training recipe for think-format reasoning policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--error-rate", type=float, default=0.0,
                   help="count-exact share of injected errors")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("init", help="write a fresh policy checkpoint")
    p.add_argument("--kinds", nargs="+", required=True, choices=KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("curate", help="pass@k difficulty filtering of an RL pool")
    p.add_argument("--in", required=True, help="input dataset JSONL")
    p.add_argument("--ckpt", required=True, help="policy checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--keep", default="3..6", help="inclusive pass-count window MIN..MAX")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-tokens", type=int, default=32)
    p.add_argument("--matcher", choices=("exact", "normalized"), default="normalized")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("loop", help="run the full distillation loop")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", default=None)
    p.add_argument("--T", type=int, default=None, help="override iteration count")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("cognition", help="run the self-cognition correction stages")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_cognition)

    p = sub.add_parser("ablate", help="format-reward ablation on the micro-task")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", choices=ABLATION_VARIANTS + ("both",), default="both")
    p.add_argument("--run-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="emit curves and tables for a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmptyDistilledSet as exc:
        _fail(str(exc))
        print("rejection histogram:", file=sys.stderr)
        for key, value in sorted(exc.histogram.items()):
            print(f"  {key}: {value}", file=sys.stderr)
        return 3
    except _Locked as exc:
        _fail(str(exc))
        return 2
    except (RecipeError, ValueError, OSError) as exc:
        _fail(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())

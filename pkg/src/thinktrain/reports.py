"""Metric files, audit logs, and report emission.

Data files are the contract: CSV with pinned columns plus JSONL with the
full rows. Plot rendering is optional and needs matplotlib.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

METRIC_COLUMNS = ("iteration", "mean_reward", "think_tokens", "clip_fraction")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path: str | Path, rows: Sequence[Mapping]) -> None:
    """Pinned-column CSV: iteration, mean_reward, think_tokens, clip_fraction."""
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[col]) for col in METRIC_COLUMNS])


def read_metrics_csv(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        for record in csv.DictReader(handle):
            rows.append({
                "iteration": int(record["iteration"]),
                "mean_reward": float(record["mean_reward"]),
                "think_tokens": float(record["think_tokens"]),
                "clip_fraction": float(record["clip_fraction"]),
            })
    return rows


def write_metrics_jsonl(path: str | Path, rows: Sequence[Mapping]) -> None:
    lines = [json.dumps(dict(row), ensure_ascii=False, sort_keys=True) for row in rows]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_filter_log(path: str | Path, rows: Iterable[Mapping]) -> None:
    """Per-candidate filter decisions: verdict fields, correctness, retention."""
    lines = [json.dumps(dict(row), ensure_ascii=False, sort_keys=True) for row in rows]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def iter_jsonl(path: str | Path) -> Iterable[dict]:
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                yield json.loads(line)


def write_curve_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(value) for value in row])


def cognition_table(stages: Sequence[tuple[str, float]]) -> str:
    """Two-column plain-text table of stage name and error rate."""
    width = max([len("Training Stage")] + [len(name) for name, _ in stages]) + 4
    lines = [f"{'Training Stage':<{width}}Self-Cognition Error Rate"]
    for name, rate in stages:
        lines.append(f"{name:<{width}}{100.0 * rate:.2f}%")
    return "\n".join(lines) + "\n"


def collapse_text(collapsed: bool, start_mean: float, current_mean: float, ratio: float) -> str:
    return (
        f"collapsed: {collapsed}\n"
        f"start_mean: {start_mean:.6g}\n"
        f"current_mean: {current_mean:.6g}\n"
        f"ratio: {ratio:.6g}\n"
    )


def emit_report(run_dir: str | Path, out_dir: str | Path, window: int = 10, threshold: float = 0.5,
                plots: bool = False) -> list[str]:
    """Emit curve data files and verdict tables for a finished run directory.

    Handles three layouts: a plain run (metrics.csv at the top level), an
    ablation pair (variant subdirectories with their own metrics.csv), and a
    cognition run (cognition_stages.json). Returns the written file names.
    """
    from .loop import detect_collapse  # local import to avoid a cycle

    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []

    variant_dirs = sorted(
        d for d in run_dir.iterdir()
        if d.is_dir() and (d / "metrics.csv").exists()
    ) if run_dir.exists() else []
    top_metrics = run_dir / "metrics.csv"
    cognition_file = run_dir / "cognition_stages.json"

    if not top_metrics.exists() and not variant_dirs and not cognition_file.exists():
        raise FileNotFoundError(f"no metrics found under {run_dir}")

    def dump_series(tag: str, rows: list[dict]) -> None:
        reward = [(r["iteration"], r["mean_reward"]) for r in rows]
        think = [(r["iteration"], r["think_tokens"]) for r in rows]
        write_curve_csv(out_dir / f"reward_curve{tag}.csv", ("iteration", "mean_reward"), reward)
        write_curve_csv(out_dir / f"think_tokens_curve{tag}.csv", ("iteration", "think_tokens"), think)
        written.extend([f"reward_curve{tag}.csv", f"think_tokens_curve{tag}.csv"])

    collected: dict[str, list[dict]] = {}
    if top_metrics.exists():
        collected[""] = read_metrics_csv(top_metrics)
    for variant in variant_dirs:
        collected[f"_{variant.name}"] = read_metrics_csv(variant / "metrics.csv")

    verdict_lines = []
    for tag, rows in collected.items():
        dump_series(tag, rows)
        series = [r["think_tokens"] for r in rows]
        label = tag.lstrip("_") or "run"
        if len(series) >= window:
            report = detect_collapse(series, window, threshold)
            verdict_lines.append(
                f"{label}: collapsed={report.collapsed} ratio={report.ratio:.6g} "
                f"start={report.start_mean:.6g} current={report.current_mean:.6g}"
            )
        else:
            verdict_lines.append(f"{label}: series too short for window {window}")
    if verdict_lines:
        (out_dir / "collapse_verdicts.txt").write_text("\n".join(verdict_lines) + "\n", encoding="utf-8")
        written.append("collapse_verdicts.txt")

    if cognition_file.exists():
        stages = json.loads(cognition_file.read_text(encoding="utf-8"))
        table = cognition_table([(row["stage"], row["error_rate"]) for row in stages])
        (out_dir / "cognition_table.txt").write_text(table, encoding="utf-8")
        written.append("cognition_table.txt")

    if plots and collected:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            pass
        else:
            for metric in ("mean_reward", "think_tokens"):
                fig, ax = plt.subplots(figsize=(6, 4))
                for tag, rows in collected.items():
                    ax.plot(
                        [r["iteration"] for r in rows],
                        [r[metric] for r in rows],
                        label=tag.lstrip("_") or "run",
                    )
                ax.set_xlabel("iteration")
                ax.set_ylabel(metric)
                ax.legend()
                fig.tight_layout()
                fig.savefig(out_dir / f"{metric}.png")
                plt.close(fig)
                written.append(f"{metric}.png")
    return written

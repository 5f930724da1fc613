"""Corpus evaluation and report rendering (JSON + CSV + figures).

Metrics follow the strict conventions of the pipeline: localization counts
a hit only on complete gold coverage, pass@k asks whether any of the first
k candidates resolves the issue, and best@k whether the candidate the
selector picks from those k does. Figures are written next to the delimited
output so a report directory is self-contained.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from pathlib import Path

from .config import PipelineConfig
from .errors import NoPatchSelected, SchemaError
from .localizer import LineLocation, loc_accuracy
from .pipeline import (
    Issue,
    candidate_from_json,
    check_resolved,
    load_issue,
    location_set_from_json,
)
from .repo_index import scan_repo
from .validator import select_final

logger = logging.getLogger(__name__)

DEFAULT_K_SWEEP = (1, 2, 3, 5, 10)

_HUNK = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+\d+(?:,\d+)? @@")


def gold_lines_from_patch(gold_patch: str) -> dict[str, list[int]]:
    """Original-file line numbers a unified diff modifies, per file.

    Removed lines map to their own numbers; pure insertions anchor to the
    preceding original line.
    """
    lines_by_file: dict[str, list[int]] = {}
    current: str | None = None
    old_line = 0
    for line in gold_patch.splitlines():
        if line.startswith("+++ "):
            path = line[4:].strip()
            if path.startswith("b/"):
                path = path[2:]
            current = None if path == "/dev/null" else path
            continue
        m = _HUNK.match(line)
        if m:
            old_line = int(m.group(1))
            continue
        if current is None:
            continue
        if line.startswith("-") and not line.startswith("---"):
            lines_by_file.setdefault(current, []).append(old_line)
            old_line += 1
        elif line.startswith("+") and not line.startswith("+++"):
            anchor = max(1, old_line - 1)
            bucket = lines_by_file.setdefault(current, [])
            if anchor not in bucket:
                bucket.append(anchor)
        elif not line.startswith("\\"):
            old_line += 1
    return {path: sorted(set(nums)) for path, nums in lines_by_file.items()}


def load_run(run_dir) -> dict:
    """Load one run directory's report and stage artifacts."""
    run_dir = Path(run_dir)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise SchemaError(str(report_path), "missing run report")
    report = json.loads(report_path.read_text(encoding="utf-8"))
    out = {"report": report, "run_dir": str(run_dir)}
    loc_path = run_dir / "localization.json"
    if loc_path.exists():
        out["localization"] = json.loads(loc_path.read_text(encoding="utf-8"))
    val_path = run_dir / "validation.json"
    if val_path.exists():
        validation = json.loads(val_path.read_text(encoding="utf-8"))
        out["candidates"] = [candidate_from_json(c) for c in validation.get("candidates", ())]
    return out


def _issue_gold(issue: Issue) -> tuple[list[str], dict[str, list[int]]]:
    gold_files = list(issue.gold_files)
    gold_lines: dict[str, list[int]] = {}
    if issue.gold_patch:
        gold_lines = gold_lines_from_patch(issue.gold_patch)
        if not gold_files:
            gold_files = sorted(gold_lines)
    return gold_files, gold_lines


def evaluate_runs(
    run_dirs,
    config: PipelineConfig,
    ks=DEFAULT_K_SWEEP,
) -> dict:
    """Aggregate localization and resolution metrics over run directories."""
    ks = sorted(set(ks))
    per_instance: list[dict] = []
    sweep_hits = {k: {"pass": 0, "best": 0} for k in ks}
    structural_only = 0

    for run_dir in run_dirs:
        run = load_run(run_dir)
        report = run["report"]
        manifest_path = report.get("manifest_path")
        if not manifest_path:
            logger.warning("run %s has no manifest; skipping gold metrics", run_dir)
            structural_only += 1
            continue
        issue = load_issue(manifest_path)
        snapshot = scan_repo(issue.repo_root, config.ignore_rules)
        gold_files, gold_lines = _issue_gold(issue)

        row: dict = {"instance_id": issue.instance_id}

        if "localization" in run and gold_files:
            loc = run["localization"]
            merged = location_set_from_json(loc.get("merged", {}))
            gold_locations = [
                LineLocation(file_path=path, kind="line", lines=tuple(nums))
                for path, nums in sorted(gold_lines.items())
                if nums
            ]
            file_metrics = loc_accuracy(
                loc.get("top_files", []), gold_files, [], snapshot
            )
            line_metrics = loc_accuracy(merged, gold_files, gold_locations, snapshot)
            row["file_hit"] = file_metrics["file_hit"]
            row["line_hit"] = line_metrics["line_hit"]

        candidates = run.get("candidates", [])
        resolved_by_id: dict[int, bool] = {}
        if issue.gold_test_command and candidates:
            for cand in candidates:
                outcome = check_resolved(issue, snapshot, cand, config)
                resolved_by_id[cand.candidate_id] = bool(outcome)
            row["resolved_selected"] = (
                resolved_by_id.get(report["selection"]["winner"], False)
                if report.get("selection")
                else False
            )
            for k in ks:
                subset = [c for c in candidates if c.candidate_id < k]
                if any(resolved_by_id.get(c.candidate_id, False) for c in subset):
                    sweep_hits[k]["pass"] += 1
                try:
                    winner = select_final(subset).winner
                    if resolved_by_id.get(winner, False):
                        sweep_hits[k]["best"] += 1
                except NoPatchSelected:
                    pass
        else:
            structural_only += 1
        per_instance.append(row)

    evaluable = [r for r in per_instance if "resolved_selected" in r]
    loc_rows = [r for r in per_instance if "file_hit" in r]
    n_eval = len(evaluable)
    metrics = {
        "instances": len(per_instance),
        "structural_only": structural_only,
        "localization": {
            "file_acc": _rate(sum(r["file_hit"] for r in loc_rows), len(loc_rows)),
            "line_acc": _rate(sum(r["line_hit"] for r in loc_rows), len(loc_rows)),
            "top_k_files": config.top_k_files,
        },
        "resolution": {
            "selected": _rate(sum(r["resolved_selected"] for r in evaluable), n_eval),
            "sweep": [
                {
                    "k": k,
                    "pass_at_k": _rate(sweep_hits[k]["pass"], n_eval),
                    "best_at_k": _rate(sweep_hits[k]["best"], n_eval),
                }
                for k in ks
            ],
        },
        "per_instance": per_instance,
    }
    return metrics


def _rate(hits: int, total: int) -> float | None:
    return round(hits / total, 4) if total else None


def write_metrics(out_dir, metrics: dict) -> list[str]:
    """Write metrics.json plus delimited per-instance and sweep tables."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    json_path = out_dir / "metrics.json"
    json_path.write_text(
        json.dumps(metrics, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    written.append(str(json_path))

    per_path = out_dir / "per_instance.csv"
    with per_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["instance_id", "file_hit", "line_hit", "resolved_selected"],
            extrasaction="ignore",
        )
        writer.writeheader()
        for row in metrics["per_instance"]:
            writer.writerow(row)
    written.append(str(per_path))

    sweep_path = out_dir / "sweep.csv"
    with sweep_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["k", "pass_at_k", "best_at_k"])
        writer.writeheader()
        for row in metrics["resolution"]["sweep"]:
            writer.writerow(row)
    written.append(str(sweep_path))
    return written


def render_eval_figures(out_dir, metrics: dict) -> list[str]:
    """Render the sweep curve and localization bars as PNG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    sweep = [row for row in metrics["resolution"]["sweep"] if row["pass_at_k"] is not None]
    if sweep:
        ks = [row["k"] for row in sweep]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(ks, [row["pass_at_k"] for row in sweep], marker="o", label="pass@k")
        ax.plot(ks, [row["best_at_k"] for row in sweep], marker="s", label="best@k")
        ax.set_xlabel("candidates (k)")
        ax.set_ylabel("resolved rate")
        ax.set_ylim(0, 1.05)
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / "resolution_sweep.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(str(path))

    loc = metrics["localization"]
    if loc["file_acc"] is not None:
        fig, ax = plt.subplots(figsize=(4, 4))
        labels = [f"file top@{loc['top_k_files']}", "line"]
        values = [loc["file_acc"], loc["line_acc"]]
        ax.bar(labels, values, color=["#4878d0", "#ee854a"])
        ax.set_ylabel("strict accuracy")
        ax.set_ylim(0, 1.05)
        for i, v in enumerate(values):
            ax.text(i, v + 0.02, f"{v:.2f}", ha="center")
        fig.tight_layout()
        path = out_dir / "localization_accuracy.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(str(path))
    return written


def render_score_figure(out_dir, validation: dict) -> str | None:
    """Bar chart of per-candidate dynamic scores from a validation report."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [
        (c["candidate_id"], c["score"]["dynamic_score"])
        for c in validation.get("candidates", ())
        if c.get("score")
    ]
    if not rows:
        return None
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar([str(cid) for cid, _ in rows], [s for _, s in rows], color="#4878d0")
    ax.set_xlabel("candidate id")
    ax.set_ylabel("dynamic score")
    fig.tight_layout()
    path = out_dir / "candidate_scores.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)

"""Command-line interface wiring the pipeline stages and the data factory.

Exit codes: 0 when a patch is selected (or the command succeeded), 2 when no
patch could be selected, 3 on a stage-fatal error.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import distill
from .config import PipelineConfig, build_gateway, load_config
from .errors import NoPatchSelected, PatchKitError, StageError
from .pipeline import (
    Issue,
    candidate_from_json,
    load_issue,
    location_set_from_json,
    read_candidates,
    run_pipeline,
    selection_to_json,
    stage_generate,
    stage_localize,
    stage_select,
    stage_validate,
    write_candidates,
    write_json,
    write_prediction,
)
from .repo_index import scan_repo

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NO_PATCH = 2
EXIT_STAGE_FATAL = 3


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


_CONFIG_FLAGS = (
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="YAML/JSON config file."),
    click.option("--backend", type=click.Choice(["scripted", "http"]), default=None),
    click.option("--scripted-dir", default=None, help="Directory of scripted records."),
    click.option("--http-endpoint", default=None),
    click.option("--file-number", type=int, default=None),
    click.option("--top-k-files", type=int, default=None),
    click.option("--root-causes", type=int, default=None),
    click.option("--candidates-k", "-k", "candidates_k", type=int, default=None),
    click.option("--pocs-per-style", type=int, default=None),
    click.option("--loc-samples", type=int, default=None),
    click.option("--critique/--no-critique", "critique_enabled", default=None),
    click.option("--workers", type=int, default=None),
    click.option("--poc-timeout-s", type=float, default=None),
    click.option("--test-timeout-s", type=float, default=None),
    click.option("--ignore", "extra_ignore", multiple=True,
                 help="Extra repo-scan ignore glob (repeatable)."),
)


def config_options(fn):
    for option in reversed(_CONFIG_FLAGS):
        fn = option(fn)

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        keys = (
            "backend", "scripted_dir", "http_endpoint", "file_number", "top_k_files",
            "root_causes", "candidates_k", "pocs_per_style", "loc_samples",
            "critique_enabled", "workers", "poc_timeout_s", "test_timeout_s",
        )
        overrides = {k: kwargs.pop(k) for k in keys}
        extra_ignore = kwargs.pop("extra_ignore")
        config_path = kwargs.pop("config_path")
        config = load_config(config_path, overrides)
        if extra_ignore:
            config.ignore_rules = config.ignore_rules + tuple(extra_ignore)
        kwargs["config"] = config
        return fn(*args, **kwargs)

    return wrapper


def _load_issue_args(manifest, repo, issue_file, instance_id) -> Issue:
    if manifest:
        return load_issue(manifest)
    if not repo or not issue_file:
        raise click.UsageError("provide --manifest, or both --repo and --issue")
    return Issue(
        instance_id=instance_id or Path(repo).name,
        problem_statement=Path(issue_file).read_text(encoding="utf-8"),
        repo_root=str(repo),
    )


@click.group()
@click.option("--verbose", is_flag=True, default=False)
def main(verbose):
    """Issue-patching pipeline and training-data factory."""
    _setup_logging(verbose)


@main.command("config")
@config_options
def cmd_config(config: PipelineConfig):
    """Print the effective configuration as JSON."""
    click.echo(json.dumps(config.to_dict(), indent=2, default=str))


@main.command("patch")
@click.option("--manifest", type=click.Path(exists=True), default=None)
@click.option("--repo", type=click.Path(exists=True), default=None)
@click.option("--issue", "issue_file", type=click.Path(exists=True), default=None)
@click.option("--instance-id", default=None)
@click.option("--out", type=click.Path(), required=True)
@config_options
def cmd_patch(manifest, repo, issue_file, instance_id, out, config: PipelineConfig):
    """Run the whole pipeline on one issue and write predictions + report."""
    issue = _load_issue_args(manifest, repo, issue_file, instance_id)
    gateway = build_gateway(config)
    try:
        report = run_pipeline(config, issue, out, gateway, manifest_path=manifest)
    except NoPatchSelected as exc:
        click.echo(f"no patch selected: {exc}", err=True)
        sys.exit(EXIT_NO_PATCH)
    except StageError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_STAGE_FATAL)
    resolved = "" if report.resolved is None else f" resolved={report.resolved}"
    click.echo(f"{issue.instance_id}: selected candidate "
               f"{report.selection['winner']}{resolved}")
    sys.exit(EXIT_OK)


@main.command("localize")
@click.option("--manifest", type=click.Path(exists=True), default=None)
@click.option("--repo", type=click.Path(exists=True), default=None)
@click.option("--issue", "issue_file", type=click.Path(exists=True), default=None)
@click.option("--instance-id", default=None)
@click.option("--out", type=click.Path(), required=True)
@config_options
def cmd_localize(manifest, repo, issue_file, instance_id, out, config):
    """Run only localization; writes localization.json."""
    issue = _load_issue_args(manifest, repo, issue_file, instance_id)
    gateway = build_gateway(config)
    try:
        snapshot = scan_repo(issue.repo_root, config.ignore_rules)
        report = stage_localize(gateway, config, issue, snapshot)
    except PatchKitError as exc:
        click.echo(f"stage localize failed: {exc}", err=True)
        sys.exit(EXIT_STAGE_FATAL)
    out_path = Path(out) / "localization.json" if Path(out).suffix == "" else Path(out)
    write_json(out_path, report)
    click.echo(str(out_path))


@main.command("generate")
@click.option("--manifest", type=click.Path(exists=True), default=None)
@click.option("--repo", type=click.Path(exists=True), default=None)
@click.option("--issue", "issue_file", type=click.Path(exists=True), default=None)
@click.option("--instance-id", default=None)
@click.option("--localization", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@config_options
def cmd_generate(manifest, repo, issue_file, instance_id, localization, out, config):
    """Generate the candidate pool from a localization report."""
    issue = _load_issue_args(manifest, repo, issue_file, instance_id)
    gateway = build_gateway(config)
    loc_report = json.loads(Path(localization).read_text(encoding="utf-8"))
    merged = location_set_from_json(loc_report.get("merged", {}))
    try:
        snapshot = scan_repo(issue.repo_root, config.ignore_rules)
        candidates = stage_generate(gateway, config, issue, snapshot, merged)
    except PatchKitError as exc:
        click.echo(f"stage generate failed: {exc}", err=True)
        sys.exit(EXIT_STAGE_FATAL)
    out_path = Path(out) / "candidates.jsonl" if Path(out).suffix == "" else Path(out)
    write_candidates(out_path, candidates)
    click.echo(str(out_path))


@main.command("validate")
@click.option("--manifest", type=click.Path(exists=True), default=None)
@click.option("--repo", type=click.Path(exists=True), default=None)
@click.option("--issue", "issue_file", type=click.Path(exists=True), default=None)
@click.option("--instance-id", default=None)
@click.option("--candidates", "candidates_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--figures/--no-figures", default=False)
@config_options
def cmd_validate(manifest, repo, issue_file, instance_id, candidates_path, out, figures,
                 config):
    """PoC-gate, apply, and dynamically score a candidate pool."""
    issue = _load_issue_args(manifest, repo, issue_file, instance_id)
    gateway = build_gateway(config)
    candidates = read_candidates(candidates_path)
    if not candidates:
        click.echo("no patch selected: candidate pool is empty", err=True)
        sys.exit(EXIT_NO_PATCH)
    try:
        snapshot = scan_repo(issue.repo_root, config.ignore_rules)
        validation = stage_validate(gateway, config, issue, snapshot, candidates)
    except PatchKitError as exc:
        click.echo(f"stage validate failed: {exc}", err=True)
        sys.exit(EXIT_STAGE_FATAL)
    out_dir = Path(out)
    out_path = out_dir / "validation.json" if out_dir.suffix == "" else out_dir
    write_json(out_path, validation)
    if figures:
        from .reporting import render_score_figure

        figure = render_score_figure(out_path.parent, validation)
        if figure:
            click.echo(figure)
    click.echo(str(out_path))


@main.command("select")
@click.option("--validation", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default=None)
def cmd_select(validation, out):
    """Re-run final selection over a validation report."""
    report = json.loads(Path(validation).read_text(encoding="utf-8"))
    candidates = [candidate_from_json(c) for c in report.get("candidates", ())]
    try:
        selection = stage_select(candidates)
    except NoPatchSelected as exc:
        click.echo(f"no patch selected: {exc}", err=True)
        sys.exit(EXIT_NO_PATCH)
    payload = selection_to_json(selection)
    winner = next(c for c in candidates if c.candidate_id == selection.winner)
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "selection.json", payload)
        predictions = out_dir / "predictions.jsonl"
        predictions.unlink(missing_ok=True)
        write_prediction(predictions, report.get("instance_id", "unknown"),
                         winner.unified_diff or "")
    click.echo(json.dumps(payload["ranking"][0]))
    click.echo(f"winner: {selection.winner} via {selection.tie_break_path}")
    sys.exit(EXIT_OK)


# --- dataset subcommands -----------------------------------------------------


@main.group("dataset")
def dataset():
    """Training-data recipe: select, collect, filter, emit."""


def _read_issues(path) -> list[distill.IssueRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(distill.IssueRecord.from_raw(json.loads(line)))
    return records


def _parse_mix(text: str | None) -> dict | None:
    if not text:
        return None
    mix = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        mix[name.strip()] = float(value)
    return mix


@dataset.command("select")
@click.option("--issues", type=click.Path(exists=True), required=True)
@click.option("--target", type=int, default=distill.DEFAULT_TARGET_ISSUES, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--per-repo-cap", type=int, default=None)
@click.option("--bucket-min", type=int, default=0)
@click.option("--mix", default=None, help="e.g. simple=0.4,medium=0.4,difficult=0.2")
@click.option("--out", type=click.Path(), required=True)
def dataset_select(issues, target, seed, per_repo_cap, bucket_min, mix, out):
    """Deterministically sample training issues under diversity quotas."""
    pool = _read_issues(issues)
    quotas = distill.SelectionQuotas(
        per_repo_cap=per_repo_cap, per_bucket_min=bucket_min,
        difficulty_mix=_parse_mix(mix), seed=seed,
    )
    try:
        selected = distill.select_issues(pool, target, quotas)
    except ValueError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_STAGE_FATAL)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as fh:
        for record in selected:
            fh.write(json.dumps({
                "instance_id": record.instance_id,
                "repo": record.repo,
                "created_at": record.created_at,
                "problem_statement": record.problem_statement,
                "gold_patch": record.gold_patch,
                "difficulty": record.difficulty,
            }, ensure_ascii=False) + "\n")
    click.echo(f"selected {len(selected)} issues -> {out_path}")


def _collect_bindings(record: distill.IssueRecord, task: str, issues_path: Path,
                      raw: dict, config: PipelineConfig) -> dict | None:
    """Assemble template bindings for a task from an issue row."""
    base = {"problem_statement": record.problem_statement}
    if task in ("poc_gen_assert", "poc_gen_no_assert"):
        return {**base, "last_time_poc_code": "", "execution_output": ""}
    if task == "poc_judge":
        needed = ("poc_code", "old_output", "new_output")
        if not all(raw.get(k) is not None for k in needed):
            return None
        return {
            "issue_description": record.problem_statement,
            "poc_code": raw["poc_code"],
            "old_execution_output": raw["old_output"],
            "new_execution_output": raw["new_output"],
        }
    repo_dir = raw.get("repo_dir")
    if not repo_dir:
        return None
    snapshot = scan_repo(issues_path.parent / repo_dir, config.ignore_rules)
    if task == "file_loc":
        from .repo_index import render_structure

        return {**base, "structure": render_structure(snapshot),
                "file_number": str(config.file_number)}
    if task == "line_loc":
        from .repo_index import chunk_file

        parts = []
        for path in record.gold_files:
            repo_file = snapshot.get(path)
            if repo_file is None:
                continue
            chunks = chunk_file(repo_file, config.prompt_budget, 512)
            parts.append(f"### File: {path} ###\n{chunks[0].content}")
        if not parts:
            return None
        return {**base, "file_contents": "\n\n".join(parts), "last_search_results": ""}
    if task in ("patch_gen", "critique"):
        sections = []
        for path in record.gold_files:
            repo_file = snapshot.get(path)
            if repo_file is not None:
                sections.append(f"### {path}\n```python\n{repo_file.content}\n```")
        if not sections:
            return None
        bindings = {**base, "content": "\n\n".join(sections)}
        if task == "critique":
            if raw.get("candidate_answer") is None:
                return None
            bindings["candidate_answer"] = raw["candidate_answer"]
        return bindings
    return None


@dataset.command("collect")
@click.option("--issues", "issues_path", type=click.Path(exists=True), required=True)
@click.option("--tasks", default="file_loc,line_loc,patch_gen",
              help="Comma-separated task names.")
@click.option("--teachers", default="teacher", help="Comma-separated teacher model tags.")
@click.option("--samples", "samples_per_teacher", type=int, default=1)
@click.option("--out", type=click.Path(), required=True)
@config_options
def dataset_collect(issues_path, tasks, teachers, samples_per_teacher, out,
                    config: PipelineConfig):
    """Collect teacher traces for each issue and task."""
    gateway = build_gateway(config)
    issues_path = Path(issues_path)
    teacher_tags = [t.strip() for t in teachers.split(",") if t.strip()]
    task_names = [t.strip() for t in tasks.split(",") if t.strip()]
    collected: list[distill.TrainingSample] = []
    skipped = 0
    for line in issues_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        record = distill.IssueRecord.from_raw(raw)
        for task in task_names:
            bindings = _collect_bindings(record, task, issues_path, raw, config)
            if bindings is None:
                logger.warning("skipping %s/%s: missing inputs", record.instance_id, task)
                skipped += 1
                continue
            collected.extend(
                distill.collect_traces(
                    gateway, record, task, teacher_tags, samples_per_teacher, bindings
                )
            )
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as fh:
        for s in collected:
            fh.write(json.dumps(s.__dict__, ensure_ascii=False) + "\n")
    click.echo(f"collected {len(collected)} samples ({skipped} skipped) -> {out_path}")


def _read_samples(path) -> list[distill.TrainingSample]:
    samples = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            samples.append(distill.TrainingSample(**json.loads(line)))
    return samples


@dataset.command("filter")
@click.option("--samples", "samples_path", type=click.Path(exists=True), required=True)
@click.option("--issues", "issues_path", type=click.Path(exists=True), required=True)
@click.option("--eval-issues", type=click.Path(exists=True), default=None)
@click.option("--max-reasoning-tokens", type=int, default=distill.DEFAULT_MAX_REASONING_TOKENS,
              show_default=True)
@click.option("--out", type=click.Path(), required=True)
@config_options
def dataset_filter(samples_path, issues_path, eval_issues, max_reasoning_tokens, out,
                   config: PipelineConfig):
    """Apply leakage, wrong-answer, and reasoning-length filters."""
    samples = _read_samples(samples_path)
    issues = _read_issues(issues_path)
    issues_by_id = {r.instance_id: r for r in issues}
    raw_by_id = {
        row["instance_id"]: row
        for row in (
            json.loads(line)
            for line in Path(issues_path).read_text(encoding="utf-8").splitlines()
            if line.strip()
        )
    }

    decisions: list[distill.FilterDecision] = []
    leaked_ids: set[str] = set()
    if eval_issues:
        leak_decisions = distill.screen_leakage(issues, _read_issues(eval_issues))
        decisions.extend(leak_decisions)
        leaked_ids = {d.sample_ref for d in leak_decisions}
    survivors = []
    for s in samples:
        if s.instance_id in leaked_ids:
            decisions.append(
                distill.FilterDecision(s.sample_id, "leakage", "issue failed leakage screen")
            )
        else:
            survivors.append(s)

    oracles = _standard_oracle_table(issues_by_id, raw_by_id, Path(issues_path), config)
    decisions.extend(distill.reject_wrong_answers(survivors, oracles))
    decisions.extend(distill.reject_long_reasoning(survivors, max_reasoning_tokens))
    kept = distill.finalize_kept(survivors)

    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as fh:
        for s in survivors:
            fh.write(json.dumps(s.__dict__, ensure_ascii=False) + "\n")

    counts: dict[str, int] = {}
    for d in decisions:
        counts[d.rule] = counts.get(d.rule, 0) + 1
    report = {
        "kept": kept,
        "rejections": counts,
        "decisions": [
            {"sample_ref": d.sample_ref, "rule": d.rule, "detail": d.detail}
            for d in decisions
        ],
    }
    write_json(out_path.with_name(out_path.stem + "_filter_report.json"), report)
    for rule in sorted(counts):
        click.echo(f"rejected[{rule}]: {counts[rule]}")
    click.echo(f"kept: {kept}")


def _standard_oracle_table(issues_by_id, raw_by_id, issues_path: Path,
                           config: PipelineConfig) -> dict:
    """Task oracles over the gold data carried by the issues file."""
    snapshots: dict[str, object] = {}

    def snapshot_for(sample):
        if sample.instance_id not in snapshots:
            raw_path = raw_by_id.get(sample.instance_id, {}).get("repo_dir")
            snapshots[sample.instance_id] = (
                scan_repo(issues_path.parent / raw_path, config.ignore_rules)
                if raw_path
                else None
            )
        return snapshots[sample.instance_id]

    def file_loc_oracle(sample):
        record = issues_by_id.get(sample.instance_id)
        if record is None or not record.gold_files:
            return None
        return distill.file_loc_correct(sample.answer, record.gold_files)

    def patch_gen_oracle(sample):
        record = issues_by_id.get(sample.instance_id)
        if record is None or not record.gold_patch:
            return None
        return distill.patch_gen_correct(sample.answer, snapshot_for(sample),
                                         record.gold_patch)

    return {"file_loc": file_loc_oracle, "patch_gen": patch_gen_oracle}


@dataset.command("emit")
@click.option("--samples", "samples_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--review", type=click.Path(), default=None,
              help="Also export difficult-issue reasoning for manual review.")
@click.option("--issues", "issues_path", type=click.Path(exists=True), default=None)
def dataset_emit(samples_path, out, review, issues_path):
    """Emit kept samples as SFT JSONL records."""
    samples = _read_samples(samples_path)
    count = distill.emit_sft_records(samples, out)
    click.echo(f"emitted {count} records -> {out}")
    if review:
        if not issues_path:
            raise click.UsageError("--review needs --issues for difficulty labels")
        issues_by_id = {r.instance_id: r for r in _read_issues(issues_path)}
        exported = distill.export_review(samples, issues_by_id, review)
        click.echo(f"review export: {exported} samples -> {review}")


@main.command("eval")
@click.option("--runs", "runs_dir", type=click.Path(exists=True), required=True,
              help="Directory containing one run directory per instance.")
@click.option("--ks", default="1,2,3,5,10", help="Comma-separated k sweep.")
@click.option("--out", type=click.Path(), required=True)
@click.option("--figures/--no-figures", default=True)
@config_options
def cmd_eval(runs_dir, ks, out, figures, config: PipelineConfig):
    """Score a corpus of runs: localization accuracy, pass@k, best@k."""
    from .reporting import evaluate_runs, render_eval_figures, write_metrics

    run_dirs = sorted(
        p for p in Path(runs_dir).iterdir() if (p / "report.json").exists()
    )
    if not run_dirs:
        click.echo(f"no run directories under {runs_dir}", err=True)
        sys.exit(EXIT_STAGE_FATAL)
    k_values = [int(v) for v in ks.split(",") if v.strip()]
    metrics = evaluate_runs(run_dirs, config, k_values)
    written = write_metrics(out, metrics)
    if figures:
        written.extend(render_eval_figures(out, metrics))
    for path in written:
        click.echo(path)


if __name__ == "__main__":
    main()

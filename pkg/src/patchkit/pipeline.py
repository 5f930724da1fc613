"""Stage orchestration: localize, generate, validate, select, end to end.

Each stage is a pure function from serialized inputs to serialized outputs,
so running the stages individually over their artifact files produces
exactly what the single-shot pipeline produces. All cross-stage handoffs go
through JSON/JSONL artifacts in the run directory.
"""

from __future__ import annotations

import concurrent.futures
import json
import logging
import shlex
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import PipelineConfig
from .errors import (
    ApplyError,
    GenerationError,
    NoPatchSelected,
    PatchKitError,
    PoCExhausted,
    SchemaError,
    StageError,
)
from .gateway import Gateway
from .generator import (
    build_context,
    critique_candidate,
    generate_candidates,
    refine_pool,
)
from .localizer import (
    LineLocation,
    LocationSet,
    localize_files,
    localize_lines,
    merge_locations,
    select_top_files,
)
from .patch_engine import (
    Edit,
    PatchCandidate,
    ScoreCard,
    apply_patch,
    materialize_snapshot,
    normalize_fingerprint,
)
from .repo_index import RepoSnapshot, chunk_file, estimate_tokens, render_structure, scan_repo
from .sandbox import run_command, run_sandbox
from .templates import template_text
from .validator import (
    FuncResult,
    PoCArtifact,
    SelectionResult,
    compute_baseline,
    generate_pocs,
    poc_fixed,
    run_functionality,
    score_candidate,
    select_final,
)

logger = logging.getLogger(__name__)

PREDICTIONS_FILENAME = "predictions.jsonl"
LINE_LOC_OVERHEAD_MARGIN = 64


@dataclass(frozen=True)
class Issue:
    instance_id: str
    problem_statement: str
    repo_root: str
    test_command: str | None = None
    interpreter: str | None = None
    timeout_s: float | None = None
    gold_patch: str | None = None
    gold_files: tuple[str, ...] = ()
    gold_test_command: str | None = None
    gold_test_files: tuple[str, ...] = ()
    manifest_dir: str | None = None


def load_issue(manifest_path) -> Issue:
    """Read a fixture/issue manifest; paths inside are manifest-relative."""
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(str(manifest_path), str(exc)) from exc
    base = manifest_path.parent
    for key in ("instance_id", "repo_dir", "issue_file"):
        if key not in raw:
            raise SchemaError(f"{manifest_path}:{key}", "missing required field")
    issue_file = base / raw["issue_file"]
    gold_patch = None
    if raw.get("gold_patch_file"):
        gold_patch = (base / raw["gold_patch_file"]).read_text(encoding="utf-8")
    gold_test = raw.get("gold_test") or {}
    return Issue(
        instance_id=raw["instance_id"],
        problem_statement=issue_file.read_text(encoding="utf-8"),
        repo_root=str(base / raw["repo_dir"]),
        test_command=raw.get("test_command"),
        interpreter=raw.get("interpreter"),
        timeout_s=raw.get("timeout_s"),
        gold_patch=gold_patch,
        gold_files=tuple(raw.get("gold_files", ())),
        gold_test_command=gold_test.get("command"),
        gold_test_files=tuple(gold_test.get("files", ())),
        manifest_dir=str(base),
    )


# --- serialization helpers ---------------------------------------------------


def location_to_json(loc: LineLocation) -> dict:
    return {"file_path": loc.file_path, "kind": loc.kind, "name": loc.name,
            "lines": list(loc.lines)}


def location_from_json(raw: dict) -> LineLocation:
    try:
        return LineLocation(
            file_path=raw["file_path"], kind=raw["kind"],
            name=raw.get("name"), lines=tuple(raw.get("lines", ())),
        )
    except (KeyError, ValueError) as exc:
        raise SchemaError("location", str(exc)) from exc


def location_set_to_json(loc_set: LocationSet) -> dict:
    return {
        "locations": [location_to_json(l) for l in loc_set.locations],
        "source_samples": loc_set.source_samples,
        "merged": loc_set.merged,
        "warnings": list(loc_set.warnings),
    }


def location_set_from_json(raw: dict) -> LocationSet:
    return LocationSet(
        locations=tuple(location_from_json(l) for l in raw.get("locations", ())),
        source_samples=raw.get("source_samples", 1),
        merged=raw.get("merged", False),
        warnings=tuple(raw.get("warnings", ())),
    )


def candidate_to_json(cand: PatchCandidate) -> dict:
    return {
        "candidate_id": cand.candidate_id,
        "status": cand.status,
        "raw_answer": cand.raw_answer,
        "reasoning": cand.reasoning,
        "finish_reason": cand.finish_reason,
        "edits": [
            {"file_path": e.file_path, "search_text": e.search_text,
             "replace_text": e.replace_text}
            for e in cand.edits
        ],
        "unified_diff": cand.unified_diff,
        "fingerprint": cand.fingerprint,
        "score": score_to_json(cand.score) if cand.score else None,
        "critique_verdict": cand.critique_verdict,
        "parse_problems": list(cand.parse_problems),
    }


def candidate_from_json(raw: dict) -> PatchCandidate:
    if "candidate_id" not in raw:
        raise SchemaError("candidate.candidate_id", "missing required field")
    score = raw.get("score")
    return PatchCandidate(
        candidate_id=raw["candidate_id"],
        edits=tuple(
            Edit(e["file_path"], e["search_text"], e["replace_text"])
            for e in raw.get("edits", ())
        ),
        raw_answer=raw.get("raw_answer", ""),
        reasoning=raw.get("reasoning"),
        unified_diff=raw.get("unified_diff"),
        fingerprint=raw.get("fingerprint"),
        score=score_from_json(score) if score else None,
        finish_reason=raw.get("finish_reason", "stop"),
        status=raw.get("status", "parsed"),
        critique_verdict=raw.get("critique_verdict"),
        parse_problems=tuple(raw.get("parse_problems", ())),
    )


def score_to_json(score: ScoreCard) -> dict:
    return {
        "poc_passed": score.poc_passed,
        "poc_total": score.poc_total,
        "func_passed": score.func_passed,
        "func_total": score.func_total,
        "dynamic_score": score.dynamic_score,
    }


def score_from_json(raw: dict) -> ScoreCard:
    try:
        return ScoreCard(
            poc_passed=raw["poc_passed"], poc_total=raw["poc_total"],
            func_passed=raw["func_passed"], func_total=raw["func_total"],
        )
    except (KeyError, ValueError) as exc:
        raise SchemaError("score", str(exc)) from exc


def selection_to_json(selection: SelectionResult) -> dict:
    return {
        "winner": selection.winner,
        "tie_break_path": selection.tie_break_path,
        "ranking": [
            {"candidate_id": cid, "score": score_to_json(score)}
            for cid, score in selection.ranking
        ],
        "vote_classes": {fp: list(ids) for fp, ids in selection.vote_classes.items()},
    }


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def write_candidates(path, candidates) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for cand in candidates:
            fh.write(json.dumps(candidate_to_json(cand), ensure_ascii=False) + "\n")


def read_candidates(path) -> list[PatchCandidate]:
    candidates = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            candidates.append(candidate_from_json(json.loads(line)))
    return candidates


# --- stages -------------------------------------------------------------------


def stage_localize(
    gateway: Gateway, config: PipelineConfig, issue: Issue, snapshot: RepoSnapshot
) -> dict:
    """File localization, top-k aggregation, then per-chunk line localization."""
    structure = render_structure(snapshot, max_tokens=config.prompt_budget)
    file_results = localize_files(
        gateway, issue.problem_statement, snapshot, structure,
        config.file_number, config.loc_samples,
    )
    top_files = select_top_files(file_results, config.top_k_files, config.file_number)

    overhead = (
        estimate_tokens(issue.problem_statement)
        + estimate_tokens(template_text("line_loc"))
        + LINE_LOC_OVERHEAD_MARGIN
    )
    paths = snapshot.paths()
    line_sets: list[LocationSet] = []
    for path in top_files:
        repo_file = snapshot.get(path)
        chunks = chunk_file(repo_file, config.prompt_budget, overhead)
        for chunk in chunks:
            line_sets.extend(
                localize_lines(
                    gateway, issue.problem_statement, [chunk],
                    samples=config.loc_samples, snapshot_paths=paths,
                )
            )
    merged = merge_locations(line_sets, config.root_causes)
    report = {
        "instance_id": issue.instance_id,
        "file_samples": [
            {
                "sample_index": r.sample_index,
                "ranked_files": list(r.ranked_files),
                "raw_answer": r.raw_answer,
                "warnings": list(r.warnings),
            }
            for r in file_results
        ],
        "top_files": list(top_files),
        "line_sets": [location_set_to_json(s) for s in line_sets],
        "merged": location_set_to_json(merged),
    }
    metrics = _gold_loc_metrics(issue, snapshot, top_files, merged)
    if metrics is not None:
        report["metrics"] = metrics
    return report


def _gold_loc_metrics(issue: Issue, snapshot, top_files, merged) -> dict | None:
    """Strict accuracy against the issue's gold answers, when it has any."""
    from .localizer import LineLocation, loc_accuracy

    gold_files = list(issue.gold_files)
    gold_lines: dict = {}
    if issue.gold_patch:
        from .reporting import gold_lines_from_patch

        gold_lines = gold_lines_from_patch(issue.gold_patch)
        if not gold_files:
            gold_files = sorted(gold_lines)
    if not gold_files:
        return None
    gold_locations = [
        LineLocation(file_path=path, kind="line", lines=tuple(nums))
        for path, nums in sorted(gold_lines.items())
        if nums
    ]
    file_metrics = loc_accuracy(list(top_files), gold_files, [], snapshot)
    line_metrics = loc_accuracy(merged, gold_files, gold_locations, snapshot)
    return {"file_hit": file_metrics["file_hit"], "line_hit": line_metrics["line_hit"]}


def stage_generate(
    gateway: Gateway,
    config: PipelineConfig,
    issue: Issue,
    snapshot: RepoSnapshot,
    merged: LocationSet,
) -> list[PatchCandidate]:
    """Sample candidates and run the optional one-shot critique pass."""
    context = build_context(
        issue.problem_statement, merged, snapshot,
        window_lines=config.window_lines, max_tokens=config.prompt_budget,
    )
    candidates = generate_candidates(gateway, context, config.candidates_k)
    if config.critique_enabled:
        verdicts = {}
        for cand in candidates:
            if cand.status != "parsed":
                continue
            verdicts[cand.candidate_id] = critique_candidate(gateway, context, cand)
        candidates = refine_pool(candidates, verdicts, config.refine_policy)
    return candidates


def _issue_timeout(issue: Issue, config: PipelineConfig) -> float:
    return issue.timeout_s if issue.timeout_s is not None else config.poc_timeout_s


def _poc_to_json(poc: PoCArtifact) -> dict:
    return {
        "style": poc.style,
        "code": poc.code,
        "origin": poc.origin,
        "retries_used": poc.retries_used,
        "valid": poc.valid,
        "pre_patch_run": {
            "exit_code": poc.pre_patch_run.exit_code,
            "stdout": poc.pre_patch_run.stdout,
            "stderr": poc.pre_patch_run.stderr,
            "timed_out": poc.pre_patch_run.timed_out,
        } if poc.pre_patch_run else None,
    }


def stage_validate(
    gateway: Gateway,
    config: PipelineConfig,
    issue: Issue,
    snapshot: RepoSnapshot,
    candidates: list[PatchCandidate],
) -> dict:
    """Generate+gate PoCs, apply and dynamically test every candidate."""
    timeout = _issue_timeout(issue, config)
    pocs: list[PoCArtifact] = []
    degraded: list[str] = []
    for style in ("assert", "no_assert"):
        try:
            pocs.extend(
                generate_pocs(
                    gateway, issue.problem_statement, snapshot, style,
                    count=config.pocs_per_style,
                    max_retries=config.poc_retries,
                    timeout_s=timeout,
                    output_limit_bytes=config.output_limit_bytes,
                    interpreter=issue.interpreter,
                    deny_network=config.deny_network,
                )
            )
        except PoCExhausted as exc:
            logger.warning("%s; continuing without that style", exc)
            degraded.append(style)
    valid_pocs = [p for p in pocs if p.valid]

    baseline: set[str] = set()
    if issue.test_command:
        base_dir = tempfile.mkdtemp(prefix="patchkit-baseline-")
        try:
            materialize_snapshot(snapshot, base_dir)
            baseline = compute_baseline(
                base_dir, issue.test_command,
                timeout_s=config.test_timeout_s,
                deny_network=config.deny_network,
            )
        finally:
            shutil.rmtree(base_dir, ignore_errors=True)

    def validate_one(cand: PatchCandidate) -> dict:
        detail: dict = {"candidate_id": cand.candidate_id}
        if not cand.edits:
            return detail
        try:
            result = apply_patch(snapshot, cand.edits, on_ambiguous=config.on_ambiguous)
        except ApplyError as exc:
            cand.status = "apply_failed"
            detail["apply_error"] = str(exc)
            return detail
        try:
            if not result.unified_diff:
                cand.status = "no_op"
                cand.unified_diff = ""
                return detail
            cand.status = "applied"
            cand.unified_diff = result.unified_diff
            cand.fingerprint = normalize_fingerprint(result.unified_diff)

            flags = []
            judgments = []
            for poc in valid_pocs:
                run_dir = tempfile.mkdtemp(prefix="patchkit-run-")
                shutil.copytree(result.workdir, run_dir, dirs_exist_ok=True)
                try:
                    post = run_sandbox(
                        run_dir, poc.code,
                        timeout_s=timeout,
                        output_limit_bytes=config.output_limit_bytes,
                        interpreter=issue.interpreter,
                        deny_network=config.deny_network,
                    )
                    fixed, judgment = poc_fixed(
                        gateway, issue.problem_statement, poc, post
                    )
                finally:
                    shutil.rmtree(run_dir, ignore_errors=True)
                flags.append(fixed)
                judgments.append(
                    {"style": poc.style, "fixed": fixed,
                     "judge": judgment.verdict if judgment else None}
                )

            if issue.test_command:
                func_dir = tempfile.mkdtemp(prefix="patchkit-func-")
                shutil.copytree(result.workdir, func_dir, dirs_exist_ok=True)
                try:
                    func = run_functionality(
                        func_dir, issue.test_command, baseline,
                        timeout_s=config.test_timeout_s,
                        deny_network=config.deny_network,
                    )
                finally:
                    shutil.rmtree(func_dir, ignore_errors=True)
            else:
                func = FuncResult(passed=0, total=0)

            cand.score = score_candidate(flags, func, config.func_cap)
            detail["poc_results"] = judgments
            detail["func"] = {
                "passed": func.passed, "total": func.total,
                "regressions": list(func.regressions),
                "diagnostic": func.diagnostic,
            }
            return detail
        finally:
            shutil.rmtree(result.workdir, ignore_errors=True)

    details: list[dict] = []
    if config.workers > 1 and len(candidates) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=config.workers) as pool:
            details = list(pool.map(validate_one, candidates))
    else:
        details = [validate_one(c) for c in candidates]

    report = {
        "instance_id": issue.instance_id,
        "pocs": [_poc_to_json(p) for p in pocs],
        "degraded_styles": degraded,
        "baseline_tests": sorted(baseline),
        "candidates": [candidate_to_json(c) for c in candidates],
        "details": details,
        "selection": None,
        "final_diff": None,
    }
    try:
        selection = select_final(candidates)
    except NoPatchSelected:
        return report
    report["selection"] = selection_to_json(selection)
    winner = next(c for c in candidates if c.candidate_id == selection.winner)
    report["final_diff"] = winner.unified_diff
    return report


def stage_select(candidates) -> SelectionResult:
    return select_final(candidates)


def check_resolved(issue: Issue, snapshot: RepoSnapshot, cand: PatchCandidate,
                   config: PipelineConfig) -> bool | None:
    """Run the held-out gold tests against a candidate, when the issue has them."""
    if not issue.gold_test_command or not cand.edits:
        return None
    try:
        result = apply_patch(snapshot, cand.edits, on_ambiguous=config.on_ambiguous)
    except ApplyError:
        return False
    try:
        for rel in issue.gold_test_files:
            src = Path(issue.manifest_dir) / rel
            dest = Path(result.workdir) / Path(rel).name
            dest.write_text(src.read_text(encoding="utf-8"), encoding="utf-8")
        transcript = run_command(
            result.workdir,
            shlex.split(issue.gold_test_command),
            timeout_s=config.test_timeout_s,
            deny_network=config.deny_network,
        )
        return transcript.exit_code == 0 and not transcript.timed_out
    finally:
        shutil.rmtree(result.workdir, ignore_errors=True)


@dataclass
class RunReport:
    instance_id: str
    status: str = "pending"  # selected | no_patch | failed:<stage>
    stage_seconds: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    final_diff: str | None = None
    selection: dict | None = None
    resolved: bool | None = None
    manifest_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "status": self.status,
            "stage_seconds": self.stage_seconds,
            "artifacts": self.artifacts,
            "final_diff": self.final_diff,
            "selection": self.selection,
            "resolved": self.resolved,
            "manifest_path": self.manifest_path,
        }


def write_prediction(path, instance_id: str, model_patch: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(
            json.dumps({"instance_id": instance_id, "model_patch": model_patch},
                       ensure_ascii=False) + "\n"
        )


def run_pipeline(
    config: PipelineConfig,
    issue: Issue,
    out_dir,
    gateway: Gateway,
    manifest_path=None,
) -> RunReport:
    """Full workflow: scan, localize, generate, validate, select, report.

    Stage-fatal errors surface as StageError naming the stage; a pool with
    nothing selectable raises NoPatchSelected after the report is written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport(
        instance_id=issue.instance_id,
        manifest_path=str(manifest_path) if manifest_path else None,
    )

    def timed(stage: str, fn):
        start = time.monotonic()
        try:
            value = fn()
        except (NoPatchSelected, PoCExhausted):
            raise
        except PatchKitError as exc:
            report.status = f"failed:{stage}"
            write_json(out_dir / "report.json", report.to_dict())
            raise StageError(stage, exc) from exc
        report.stage_seconds[stage] = round(time.monotonic() - start, 3)
        return value

    snapshot = timed("scan", lambda: scan_repo(issue.repo_root, config.ignore_rules))

    loc_report = timed(
        "localize", lambda: stage_localize(gateway, config, issue, snapshot)
    )
    loc_path = out_dir / "localization.json"
    write_json(loc_path, loc_report)
    report.artifacts["localization"] = str(loc_path)

    merged = location_set_from_json(loc_report["merged"])
    if not merged.locations:
        report.status = "failed:generate"
        write_json(out_dir / "report.json", report.to_dict())
        raise StageError("generate", GenerationError("merged location set is empty"))

    candidates = timed(
        "generate", lambda: stage_generate(gateway, config, issue, snapshot, merged)
    )
    cand_path = out_dir / "candidates.jsonl"
    write_candidates(cand_path, candidates)
    report.artifacts["candidates"] = str(cand_path)

    validation = timed(
        "validate", lambda: stage_validate(gateway, config, issue, snapshot, candidates)
    )
    val_path = out_dir / "validation.json"
    write_json(val_path, validation)
    report.artifacts["validation"] = str(val_path)

    try:
        selection = stage_select(candidates)
    except NoPatchSelected:
        report.status = "no_patch"
        write_json(out_dir / "report.json", report.to_dict())
        raise

    winner = next(c for c in candidates if c.candidate_id == selection.winner)
    report.selection = selection_to_json(selection)
    report.final_diff = winner.unified_diff
    report.status = "selected"

    predictions = out_dir / PREDICTIONS_FILENAME
    predictions.unlink(missing_ok=True)
    write_prediction(predictions, issue.instance_id, winner.unified_diff)
    report.artifacts["predictions"] = str(predictions)

    resolved = check_resolved(issue, snapshot, winner, config)
    report.resolved = resolved

    write_json(out_dir / "report.json", report.to_dict())
    return report

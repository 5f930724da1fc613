"""Training-data factory: issue selection, teacher traces, and filtering.

The recipe is deliberately conservative: seeded deterministic issue
sampling with diversity quotas, leakage screening against the eval set,
teacher-trace collection through the same prompt templates the pipeline
uses at inference, then rejection of wrong answers and overlong reasoning.
Every rejection carries exactly one primary rule.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from .errors import GatewayError
from .gateway import Gateway, render_template
from .localizer import parse_location_answer
from .repo_index import estimate_tokens

logger = logging.getLogger(__name__)

TASKS = (
    "file_loc",
    "line_loc",
    "patch_gen",
    "critique",
    "poc_gen_assert",
    "poc_gen_no_assert",
    "poc_judge",
)

# Tasks whose diversity benefits from every teacher; the rest default to the
# first teacher only.
MULTI_TEACHER_TASKS = ("poc_gen_assert", "poc_gen_no_assert", "poc_judge")

TASK_TEMPLATES = {
    "file_loc": "file_loc",
    "line_loc": "line_loc",
    "patch_gen": "patch_gen",
    "critique": "patch_critique",
    "poc_gen_assert": "poc_gen_assert",
    "poc_gen_no_assert": "poc_gen_no_assert",
    "poc_judge": "poc_judge",
}

DIFFICULTIES = ("simple", "medium", "difficult")
DEFAULT_TARGET_ISSUES = 2000
DEFAULT_MAX_REASONING_TOKENS = 8192


def classify_difficulty(gold_files_count: int) -> str:
    """Bucket by fix size: 1 file is simple, 5+ difficult, between is medium."""
    if gold_files_count < 1:
        raise ValueError("gold patch changes no files")
    if gold_files_count == 1:
        return "simple"
    if gold_files_count >= 5:
        return "difficult"
    return "medium"


_DIFF_FILE = re.compile(r"^\+\+\+ (?:b/)?(\S+)", re.MULTILINE)
_DIFF_FILE_OLD = re.compile(r"^--- (?:a/)?(\S+)", re.MULTILINE)
_HUNK_CONTEXT_DEF = re.compile(r"^@@ .* @@\s*(?:async\s+)?(?:def|class)\s+(\w+)", re.MULTILINE)
_CHANGED_DEF = re.compile(r"^[+-]\s*(?:async\s+)?(?:def|class)\s+(\w+)", re.MULTILINE)


def patch_files(gold_patch: str) -> list[str]:
    """Files named in a unified diff, in order, /dev/null excluded."""
    files: list[str] = []
    for m in _DIFF_FILE.finditer(gold_patch):
        path = m.group(1)
        if path == "/dev/null":
            continue
        if path not in files:
            files.append(path)
    for m in _DIFF_FILE_OLD.finditer(gold_patch):
        path = m.group(1)
        if path != "/dev/null" and path not in files:
            files.append(path)
    return files


def patch_function_names(gold_patch: str) -> set[str]:
    """Function/class names a diff touches (hunk context plus changed defs)."""
    names = set(_HUNK_CONTEXT_DEF.findall(gold_patch))
    names.update(_CHANGED_DEF.findall(gold_patch))
    return names


@dataclass(frozen=True)
class IssueRecord:
    instance_id: str
    repo: str
    created_at: str  # ISO timestamp
    problem_statement: str
    gold_patch: str
    gold_files: tuple[str, ...] = ()
    difficulty: str = ""

    @classmethod
    def from_raw(cls, raw: dict) -> "IssueRecord":
        gold_patch = raw.get("gold_patch", raw.get("patch", ""))
        files = tuple(raw.get("gold_files") or patch_files(gold_patch))
        return cls(
            instance_id=raw["instance_id"],
            repo=raw["repo"],
            created_at=raw.get("created_at", ""),
            problem_statement=raw.get("problem_statement", ""),
            gold_patch=gold_patch,
            gold_files=files,
            difficulty=classify_difficulty(len(files)) if files else "",
        )

    def time_bucket(self) -> str:
        """Calendar quarter of created_at; unknown dates share one bucket."""
        try:
            ts = datetime.fromisoformat(self.created_at.replace("Z", "+00:00"))
        except (ValueError, AttributeError):
            return "unknown"
        return f"{ts.year}-Q{(ts.month - 1) // 3 + 1}"


@dataclass
class TrainingSample:
    sample_id: str
    task: str
    prompt: str
    reasoning: str
    answer: str
    teacher_tag: str
    instance_id: str
    filter_status: str = "pending"  # pending | kept | rejected_wrong_answer | rejected_too_long
    # multi-turn tasks (critique) carry the whole conversation
    messages: list | None = None


@dataclass(frozen=True)
class FilterDecision:
    sample_ref: str
    rule: str  # wrong_answer | too_long | leakage | manual
    detail: str


@dataclass(frozen=True)
class SelectionQuotas:
    per_repo_cap: int | None = None
    per_bucket_min: int = 0
    difficulty_mix: dict | None = None  # difficulty -> fraction
    seed: int = 0


def _difficulty_targets(target: int, mix: dict) -> dict[str, int]:
    """Largest-remainder apportionment of the target across difficulties."""
    raw = {d: target * mix.get(d, 0.0) for d in DIFFICULTIES}
    floors = {d: int(raw[d]) for d in DIFFICULTIES}
    short = target - sum(floors.values())
    remainders = sorted(DIFFICULTIES, key=lambda d: (-(raw[d] - floors[d]), d))
    for d in remainders[:short]:
        floors[d] += 1
    return floors


def select_issues(pool, target: int, quotas: SelectionQuotas | None = None):
    """Deterministic seeded sample honoring repo caps and diversity quotas.

    Bucket minimums are satisfied first, then the difficulty mix is filled;
    when a quota cannot be met the shortfall spills over proportionally and
    is logged. Output order is stable (by instance id).
    """
    pool = list(pool)
    if target > len(pool):
        raise ValueError(f"target {target} exceeds pool size {len(pool)}")
    quotas = quotas or SelectionQuotas()

    rng = random.Random(quotas.seed)
    shuffled = sorted(pool, key=lambda r: r.instance_id)
    rng.shuffle(shuffled)

    repo_counts: dict[str, int] = {}
    remaining = (
        _difficulty_targets(target, quotas.difficulty_mix)
        if quotas.difficulty_mix
        else None
    )
    selected: list[IssueRecord] = []
    chosen: set[str] = set()

    def cap_ok(record: IssueRecord) -> bool:
        if quotas.per_repo_cap is None:
            return True
        return repo_counts.get(record.repo, 0) < quotas.per_repo_cap

    def take(record: IssueRecord) -> None:
        selected.append(record)
        chosen.add(record.instance_id)
        repo_counts[record.repo] = repo_counts.get(record.repo, 0) + 1
        if remaining is not None and record.difficulty in remaining:
            remaining[record.difficulty] = max(0, remaining[record.difficulty] - 1)

    if quotas.per_bucket_min > 0:
        by_bucket: dict[str, list[IssueRecord]] = {}
        for record in shuffled:
            by_bucket.setdefault(record.time_bucket(), []).append(record)
        for bucket in sorted(by_bucket):
            picked = 0
            for record in by_bucket[bucket]:
                if picked >= quotas.per_bucket_min or len(selected) >= target:
                    break
                if record.instance_id in chosen or not cap_ok(record):
                    continue
                take(record)
                picked += 1
            if picked < quotas.per_bucket_min:
                logger.warning(
                    "time bucket %s short of minimum: %d/%d",
                    bucket, picked, quotas.per_bucket_min,
                )

    for record in shuffled:
        if len(selected) >= target:
            break
        if record.instance_id in chosen or not cap_ok(record):
            continue
        if remaining is not None and remaining.get(record.difficulty, 0) <= 0:
            continue
        take(record)

    if len(selected) < target:
        # difficulty quota infeasible: spill over, caps still honored
        spilled = 0
        for record in shuffled:
            if len(selected) >= target:
                break
            if record.instance_id in chosen or not cap_ok(record):
                continue
            take(record)
            spilled += 1
        if spilled:
            logger.warning("difficulty quota infeasible; %d issues spilled over", spilled)

    if len(selected) < target:
        logger.warning(
            "selection shortfall: %d of %d (repo caps exhausted the pool)",
            len(selected), target,
        )
    return sorted(selected, key=lambda r: r.instance_id)


def screen_leakage(selected, eval_set) -> list[FilterDecision]:
    """Reject training issues sharing a repo or touched function with eval."""
    eval_repos = {e.repo for e in eval_set}
    eval_funcs: set[str] = set()
    for e in eval_set:
        eval_funcs.update(patch_function_names(e.gold_patch))
    decisions: list[FilterDecision] = []
    for record in selected:
        if record.repo in eval_repos:
            decisions.append(
                FilterDecision(record.instance_id, "leakage", f"repo overlap: {record.repo}")
            )
            continue
        overlap = patch_function_names(record.gold_patch) & eval_funcs
        if overlap:
            decisions.append(
                FilterDecision(
                    record.instance_id, "leakage",
                    f"function overlap: {', '.join(sorted(overlap))}",
                )
            )
    return decisions


def collect_traces(
    gateway: Gateway,
    issue: IssueRecord,
    task: str,
    teachers,
    samples_per_teacher: int,
    bindings: dict,
    all_teachers: bool | None = None,
) -> list[TrainingSample]:
    """Gather teacher reasoning traces for one (issue, task) pair.

    PoC tasks query every listed teacher for diversity; other tasks use the
    first teacher only unless ``all_teachers`` overrides that.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    teachers = list(teachers)
    if not teachers:
        raise ValueError("at least one teacher model tag required")
    use_all = all_teachers if all_teachers is not None else task in MULTI_TEACHER_TASKS
    active = teachers if use_all else teachers[:1]

    samples: list[TrainingSample] = []
    failures: list[str] = []
    for teacher in active:
        request = _task_request(task, bindings, samples_per_teacher, teacher)
        try:
            response = gateway.complete(request)
        except GatewayError as exc:
            failures.append(f"{teacher}: {exc}")
            logger.warning("teacher %s failed for %s/%s: %s", teacher, issue.instance_id, task, exc)
            continue
        messages = [{"role": m.role, "content": m.content} for m in request.messages]
        prompt_text = request.messages[-1].content
        for i, completion in enumerate(response.samples):
            samples.append(
                TrainingSample(
                    sample_id=f"{issue.instance_id}/{task}/{teacher}/{i}",
                    task=task,
                    prompt=prompt_text,
                    reasoning=completion.reasoning_text or "",
                    answer=completion.answer_text,
                    teacher_tag=teacher,
                    instance_id=issue.instance_id,
                    messages=messages if len(messages) > 1 else None,
                )
            )
    if not samples:
        raise GatewayError(
            f"no traces collected for {issue.instance_id}/{task}: {'; '.join(failures)}"
        )
    return samples


def _task_request(task: str, bindings: dict, sample_count: int, teacher: str):
    """Critique is a conversation (question, answer, review); the rest are single-turn."""
    from .gateway import ChatRequest, Message
    from .templates import substitute, template_text

    if task == "critique":
        gen_prompt = substitute(
            template_text("patch_gen"),
            {"problem_statement": bindings["problem_statement"],
             "content": bindings["content"]},
        )
        return ChatRequest(
            messages=(
                Message("user", gen_prompt),
                Message("assistant", bindings["candidate_answer"]),
                Message("user", template_text("patch_critique")),
            ),
            model_tag=teacher,
            temperature=0.0,
            sample_count=sample_count,
        )
    return render_template(
        TASK_TEMPLATES[task], bindings, sample_count=sample_count, model_tag=teacher
    )


# --- rejection filters -------------------------------------------------------

_FENCE_LIST = re.compile(r"```[\w-]*\n(.*?)```", re.DOTALL)


def answer_file_list(answer: str) -> list[str]:
    m = _FENCE_LIST.search(answer)
    if not m:
        return []
    return [l.strip() for l in m.group(1).splitlines() if l.strip()]


def file_loc_correct(answer: str, gold_files) -> bool:
    return set(gold_files) <= set(answer_file_list(answer))


def line_loc_correct(answer: str, gold_lines_by_file: dict, snapshot, tolerance: int = 2) -> bool:
    """Answer covers every gold edit line within the training tolerance."""
    from .localizer import LineLocation, loc_accuracy, LocationSet

    locations, _ = parse_location_answer(answer)
    gold_locations = [
        LineLocation(file_path=path, kind="line", lines=tuple(lines))
        for path, lines in sorted(gold_lines_by_file.items())
        if lines
    ]
    result = loc_accuracy(
        LocationSet(locations=locations),
        list(gold_lines_by_file),
        gold_locations,
        snapshot,
        tolerance=tolerance,
    )
    return result["file_hit"] and result["line_hit"]


def patch_gen_correct(
    answer: str,
    snapshot,
    gold_patch: str,
    test_command: str | None = None,
    timeout_s: float = 60.0,
) -> bool | None:
    """Patch-generation oracle.

    With an executable fixture the candidate must apply cleanly and pass the
    fixture's tests; without one, its normalized diff fingerprint must equal
    the gold patch's. Returns None when no snapshot is available.
    """
    import shlex
    import shutil

    from .errors import ApplyError, EmptyPatch
    from .patch_engine import apply_patch, normalize_fingerprint, parse_patch
    from .sandbox import run_command

    if snapshot is None:
        return None
    try:
        edits = parse_patch(answer)
    except EmptyPatch:
        return False
    try:
        result = apply_patch(snapshot, edits)
    except ApplyError:
        return False
    try:
        if test_command:
            transcript = run_command(
                result.workdir, shlex.split(test_command), timeout_s=timeout_s
            )
            return transcript.exit_code == 0 and not transcript.timed_out
        return normalize_fingerprint(result.unified_diff) == normalize_fingerprint(gold_patch)
    finally:
        shutil.rmtree(result.workdir, ignore_errors=True)


def critique_correct(answer: str, gold_label: str) -> bool:
    """Critique oracle: the final conclusion must match the gold label."""
    from .generator import _parse_conclusion

    return _parse_conclusion(answer) == gold_label


def judge_correct(answer: str, patch_fixes_issue: bool) -> bool:
    """PoC-judgment oracle against the ground truth of the (patch, PoC) pair."""
    from .validator import parse_judgment

    expected = "Yes" if patch_fixes_issue else "No"
    return parse_judgment(answer).verdict == expected


def poc_gen_correct(
    answer: str, snapshot, style: str, timeout_s: float = 60.0
) -> bool | None:
    """PoC-generation oracle: the style gate on the unpatched tree."""
    from .validator import _parse_poc_code, gate_poc, run_on_fresh_tree

    if snapshot is None:
        return None
    code = _parse_poc_code(answer)
    if code is None:
        return False
    transcript = run_on_fresh_tree(
        snapshot, code, timeout_s, 64 * 1024, interpreter=None, deny_network=True
    )
    return gate_poc(style, transcript)


def reject_wrong_answers(samples, oracles) -> list[FilterDecision]:
    """Rejection sampling: drop traces whose final answer fails the oracle.

    ``oracles`` maps task name to a callable returning True (correct), False
    (wrong), or None (gold missing; sample stays pending with a logged
    diagnostic).
    """
    decisions: list[FilterDecision] = []
    for sample in samples:
        if sample.filter_status != "pending":
            continue
        oracle = oracles.get(sample.task)
        if oracle is None:
            logger.warning("no oracle for task %s; %s left pending", sample.task, sample.sample_id)
            continue
        verdict = oracle(sample)
        if verdict is None:
            logger.warning("missing gold for %s; left pending", sample.sample_id)
            continue
        if not verdict:
            sample.filter_status = "rejected_wrong_answer"
            decisions.append(
                FilterDecision(sample.sample_id, "wrong_answer", "answer failed task oracle")
            )
    return decisions


def reject_long_reasoning(
    samples, max_reasoning_tokens: int = DEFAULT_MAX_REASONING_TOKENS
) -> list[FilterDecision]:
    """Drop traces with reasoning beyond the token threshold."""
    decisions: list[FilterDecision] = []
    for sample in samples:
        if sample.filter_status != "pending":
            continue
        tokens = estimate_tokens(sample.reasoning)
        if tokens > max_reasoning_tokens:
            sample.filter_status = "rejected_too_long"
            decisions.append(
                FilterDecision(
                    sample.sample_id, "too_long",
                    f"reasoning estimate {tokens} > {max_reasoning_tokens}",
                )
            )
    return decisions


def finalize_kept(samples) -> int:
    """Promote surviving pending samples to kept; returns how many."""
    count = 0
    for sample in samples:
        if sample.filter_status == "pending":
            sample.filter_status = "kept"
            count += 1
    return count


def emit_sft_records(samples, output_path) -> int:
    """Write kept samples as JSONL, stably ordered; byte-identical re-runs."""
    kept = [s for s in samples if s.filter_status == "kept"]
    kept.sort(key=lambda s: (s.instance_id, s.task, s.teacher_tag, s.sample_id))
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with output_path.open("w", encoding="utf-8") as fh:
        for s in kept:
            record = {
                "task": s.task,
                "messages": s.messages or [{"role": "user", "content": s.prompt}],
                "reasoning": s.reasoning,
                "answer": s.answer,
                "meta": {"instance_id": s.instance_id, "teacher_tag": s.teacher_tag},
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return len(kept)


def export_review(samples, issues_by_id, output_path) -> int:
    """Dump kept difficult-issue reasoning for manual inspection."""
    rows = [
        s for s in samples
        if s.filter_status == "kept"
        and issues_by_id.get(s.instance_id) is not None
        and issues_by_id[s.instance_id].difficulty == "difficult"
    ]
    rows.sort(key=lambda s: s.sample_id)
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with output_path.open("w", encoding="utf-8") as fh:
        for s in rows:
            fh.write(
                json.dumps(
                    {"sample_id": s.sample_id, "task": s.task, "reasoning": s.reasoning},
                    ensure_ascii=False,
                )
                + "\n"
            )
    return len(rows)

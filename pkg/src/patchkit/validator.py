"""Dual-style PoC validation, functionality testing, and patch selection.

Assert-style PoCs are self-judging: they must fail on the unpatched tree and
pass after a good patch. No-assert PoCs just record observable output; a
judge model compares the before/after transcripts. Both styles gate on the
unpatched tree before they may contribute to any score. Final selection
ranks by dynamic score and breaks ties with normalized majority voting.
"""

from __future__ import annotations

import logging
import re
import shutil
import shlex
import tempfile
from dataclasses import dataclass

from .errors import NoPatchSelected, PoCExhausted
from .gateway import Gateway, render_template
from .patch_engine import ScoreCard, materialize_snapshot
from .repo_index import RepoSnapshot
from .sandbox import (
    DEFAULT_OUTPUT_LIMIT_BYTES,
    DEFAULT_TIMEOUT_S,
    ExecTranscript,
    run_command,
    run_sandbox,
)

logger = logging.getLogger(__name__)

POC_STYLES = ("assert", "no_assert")
DEFAULT_POCS_PER_STYLE = 2
DEFAULT_POC_RETRIES = 3


@dataclass
class PoCArtifact:
    style: str  # assert | no_assert
    code: str
    origin: str  # extracted | synthesized
    retries_used: int
    pre_patch_run: ExecTranscript | None
    valid: bool

    def __post_init__(self):
        if self.style not in POC_STYLES:
            raise ValueError(f"unknown PoC style {self.style!r}")


@dataclass(frozen=True)
class Judgment:
    verdict: str  # Yes | No | Unparsed
    explanation: str = ""


@dataclass(frozen=True)
class FuncResult:
    passed: int
    total: int
    regressions: tuple[str, ...] = ()
    diagnostic: str = ""


@dataclass(frozen=True)
class SelectionResult:
    winner: int
    ranking: tuple[tuple[int, ScoreCard], ...]
    vote_classes: dict[str, tuple[int, ...]]
    tie_break_path: str  # unique_top | majority_vote | index_fallback


# --- PoC extraction -------------------------------------------------------

_FENCED = re.compile(r"```([\w-]*)[ \t]*\n(.*?)```", re.DOTALL)
_NON_PYTHON_FENCES = {"bash", "sh", "shell", "console", "text", "output", "diff"}
_IPYTHON_IN = re.compile(r"^In \[\s*\d*\s*\]:\s?")
_IPYTHON_OUT = re.compile(r"^Out\[\s*\d*\s*\]")


def _strip_interactive(fragment: str) -> list[str]:
    lines = fragment.splitlines()
    has_prompts = any(
        l.strip().startswith(">>>") or _IPYTHON_IN.match(l.strip()) for l in lines
    )
    out: list[str] = []
    for line in lines:
        s = line.strip()
        if s.startswith(">>> "):
            out.append(s[4:])
        elif s == ">>>":
            continue
        elif s.startswith(">>>"):
            out.append(s[3:])
        elif s.startswith("... "):
            out.append(s[4:])
        elif s in ("...", "....:"):
            continue
        elif _IPYTHON_IN.match(s):
            out.append(_IPYTHON_IN.sub("", s))
        elif _IPYTHON_OUT.match(s) or s.startswith("$"):
            continue
        elif has_prompts:
            # inside an interactive transcript everything else is output
            continue
        else:
            out.append(line)
    while out and not out[-1].strip():
        out.pop()
    while out and not out[0].strip():
        out.pop(0)
    return out


def extract_poc(issue_text: str) -> str | None:
    """Pull a runnable script out of the issue, if it contains one.

    Fenced code blocks are used in order (shell-ish fences skipped);
    without fences, a doctest-style transcript anywhere in the text counts.
    Interactive prompts and captured output lines are stripped. Returns
    None when the issue carries no code.
    """
    fragments: list[str] = []
    fenced = _FENCED.findall(issue_text)
    if fenced:
        for info, body in fenced:
            if info.lower() in _NON_PYTHON_FENCES:
                continue
            lines = _strip_interactive(body)
            if lines:
                fragments.append("\n".join(lines))
    elif any(l.strip().startswith(">>>") for l in issue_text.splitlines()):
        lines = _strip_interactive(issue_text)
        if lines:
            fragments.append("\n".join(lines))
    if not fragments:
        return None
    return "\n".join(fragments) + "\n"


# --- PoC generation and gating --------------------------------------------


def gate_poc(style: str, transcript: ExecTranscript) -> bool:
    """Pre-patch validity: assert PoCs must fail, no-assert ones must speak."""
    if style == "assert":
        return not transcript.timed_out and transcript.exit_code != 0
    return not transcript.timed_out and bool(transcript.observable_output)


def _parse_poc_code(answer: str) -> str | None:
    m = _FENCED.search(answer)
    if m:
        return m.group(2)
    return None


def run_on_fresh_tree(
    snapshot: RepoSnapshot,
    script: str,
    timeout_s: float,
    output_limit_bytes: int,
    interpreter: str | None,
    deny_network: bool,
) -> ExecTranscript:
    """Materialize the unpatched tree into a throwaway dir and run a script."""
    workdir = tempfile.mkdtemp(prefix="patchkit-poc-")
    try:
        materialize_snapshot(snapshot, workdir)
        return run_sandbox(
            workdir,
            script,
            timeout_s=timeout_s,
            output_limit_bytes=output_limit_bytes,
            interpreter=interpreter,
            deny_network=deny_network,
        )
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


def generate_pocs(
    gateway: Gateway,
    issue_text: str,
    snapshot: RepoSnapshot,
    style: str,
    count: int = DEFAULT_POCS_PER_STYLE,
    max_retries: int = DEFAULT_POC_RETRIES,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    output_limit_bytes: int = DEFAULT_OUTPUT_LIMIT_BYTES,
    interpreter: str | None = None,
    deny_network: bool = True,
    try_extracted: bool = True,
) -> list[PoCArtifact]:
    """Produce up to ``count`` gated PoCs of one style.

    An extracted issue snippet is tried before any synthesis. Each invalid
    attempt is retried with the previous code and its execution transcript
    fed back, up to ``max_retries`` per slot. Returns the final artifact of
    every slot with its validity flag; raises when no slot is valid.
    """
    if style not in POC_STYLES:
        raise ValueError(f"unknown PoC style {style!r}")
    template_id = "poc_gen_assert" if style == "assert" else "poc_gen_no_assert"

    def execute(code: str) -> ExecTranscript:
        return run_on_fresh_tree(
            snapshot, code, timeout_s, output_limit_bytes, interpreter, deny_network
        )

    slots: list[tuple[str, str] | None] = []  # (origin, code) per slot
    extracted = extract_poc(issue_text) if try_extracted else None
    model_slots = count
    if extracted is not None:
        slots.append(("extracted", extracted))
        model_slots -= 1
    if model_slots > 0:
        request = render_template(
            template_id,
            {
                "problem_statement": issue_text,
                "last_time_poc_code": "",
                "execution_output": "",
            },
            sample_count=model_slots,
        )
        response = gateway.complete(request)
        for sample in response.samples:
            code = _parse_poc_code(sample.answer_text)
            slots.append(("synthesized", code) if code is not None else None)
        while len(slots) < count:
            slots.append(None)

    artifacts: list[PoCArtifact] = []
    for slot in slots:
        origin, code = slot if slot is not None else ("synthesized", None)
        transcript = execute(code) if code is not None else None
        retries = 0
        while (code is None or not gate_poc(style, transcript)) and retries < max_retries:
            retries += 1
            request = render_template(
                template_id,
                {
                    "problem_statement": issue_text,
                    "last_time_poc_code": code or "",
                    "execution_output": transcript.render() if transcript else "",
                },
                sample_count=1,
            )
            response = gateway.complete(request)
            new_code = (
                _parse_poc_code(response.samples[0].answer_text)
                if response.samples
                else None
            )
            if new_code is None:
                transcript = None
                code = None
                continue
            origin = "synthesized"
            code = new_code
            transcript = execute(code)
        if code is None or transcript is None:
            continue
        valid = gate_poc(style, transcript)
        artifacts.append(
            PoCArtifact(
                style=style,
                code=code,
                origin=origin,
                retries_used=retries,
                pre_patch_run=transcript,
                valid=valid,
            )
        )

    if not any(a.valid for a in artifacts):
        raise PoCExhausted(style)
    return artifacts


# --- judging ----------------------------------------------------------------

_JUDGEMENT = re.compile(r"<judgement>\s*(.*?)\s*</judgement>", re.DOTALL | re.IGNORECASE)
_EXPLANATION = re.compile(r"<explanation>\s*(.*?)\s*</explanation>", re.DOTALL | re.IGNORECASE)


def parse_judgment(answer: str) -> Judgment:
    m = _JUDGEMENT.search(answer)
    if not m:
        return Judgment(verdict="Unparsed", explanation="no judgement tags in answer")
    value = m.group(1).strip().lower()
    verdict = "Yes" if value == "yes" else "No" if value == "no" else "Unparsed"
    em = _EXPLANATION.search(answer)
    return Judgment(verdict=verdict, explanation=em.group(1).strip() if em else "")


def judge_no_assert(
    gateway: Gateway,
    issue_text: str,
    poc: PoCArtifact,
    old: ExecTranscript,
    new: ExecTranscript,
) -> Judgment:
    """Ask the judge whether the before/after transcripts show a fix."""
    request = render_template(
        "poc_judge",
        {
            "issue_description": issue_text,
            "poc_code": poc.code,
            "old_execution_output": old.render(),
            "new_execution_output": new.render(),
        },
        sample_count=1,
    )
    try:
        response = gateway.complete(request)
    except Exception as exc:  # gateway errors degrade to not-fixed
        logger.warning("judge call failed: %s", exc)
        return Judgment(verdict="Unparsed", explanation="gateway error")
    if not response.samples:
        return Judgment(verdict="Unparsed", explanation="gateway error")
    return parse_judgment(response.samples[0].answer_text)


def poc_fixed(
    gateway: Gateway, issue_text: str, poc: PoCArtifact, post_run: ExecTranscript
) -> tuple[bool, Judgment | None]:
    """Decide whether a candidate fixed this PoC.

    Assert style is self-judging (exit 0 after the patch); no-assert style
    defers to the judge model, with Unparsed counting as not fixed.
    """
    if poc.style == "assert":
        return (not post_run.timed_out and post_run.exit_code == 0), None
    judgment = judge_no_assert(gateway, issue_text, poc, poc.pre_patch_run, post_run)
    return judgment.verdict == "Yes", judgment


# --- functionality tests ----------------------------------------------------

_STATUS_FIRST = re.compile(r"^(PASSED|FAILED|ERROR)\s+(\S+)")
_STATUS_LAST = re.compile(r"^(\S+)\s+(PASSED|FAILED|ERROR)\b")


def parse_test_ids(output: str) -> dict[str, bool]:
    """Extract per-test outcomes from pytest-style verbose/summary output."""
    results: dict[str, bool] = {}
    for line in output.splitlines():
        line = line.strip()
        m = _STATUS_FIRST.match(line)
        if m:
            results[m.group(2)] = m.group(1) == "PASSED"
            continue
        m = _STATUS_LAST.match(line)
        if m and "::" in m.group(1):
            results[m.group(1)] = m.group(2) == "PASSED"
    return results


def run_test_command(
    workdir,
    test_command: str,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    output_limit_bytes: int = DEFAULT_OUTPUT_LIMIT_BYTES,
    deny_network: bool = True,
) -> tuple[set[str], ExecTranscript]:
    """Run the suite and return the set of passing test ids.

    Without per-test output the whole run degrades to one synthetic "suite"
    id keyed off the exit code.
    """
    transcript = run_command(
        workdir,
        shlex.split(test_command),
        timeout_s=timeout_s,
        output_limit_bytes=output_limit_bytes,
        deny_network=deny_network,
    )
    outcomes = parse_test_ids(transcript.stdout + "\n" + transcript.stderr)
    if not outcomes:
        if transcript.exit_code == 0 and not transcript.timed_out:
            return {"suite"}, transcript
        return set(), transcript
    return {tid for tid, ok in outcomes.items() if ok}, transcript


def compute_baseline(
    workdir, test_command: str, timeout_s: float = DEFAULT_TIMEOUT_S, **kwargs
) -> set[str]:
    """Tests passing on the unpatched tree; only these can count later."""
    passing, transcript = run_test_command(workdir, test_command, timeout_s, **kwargs)
    if not passing:
        logger.warning(
            "no baseline tests passed (exit %d); functionality scores will be 0",
            transcript.exit_code,
        )
    return passing


def run_functionality(
    workdir,
    test_command: str,
    baseline: set[str],
    timeout_s: float = DEFAULT_TIMEOUT_S,
    output_limit_bytes: int = DEFAULT_OUTPUT_LIMIT_BYTES,
    deny_network: bool = True,
) -> FuncResult:
    """Count baseline tests still passing after the patch."""
    passing, transcript = run_test_command(
        workdir, test_command, timeout_s, output_limit_bytes=output_limit_bytes,
        deny_network=deny_network,
    )
    still_passing = baseline & passing
    regressions = tuple(sorted(baseline - passing))
    diagnostic = ""
    if not passing and transcript.exit_code != 0:
        diagnostic = (
            f"test command failed (exit {transcript.exit_code}); "
            f"stderr: {transcript.stderr[:200]}"
        )
    return FuncResult(
        passed=len(still_passing),
        total=len(baseline),
        regressions=regressions,
        diagnostic=diagnostic,
    )


# --- scoring and selection ---------------------------------------------------


def score_candidate(
    poc_fixed_flags, func: FuncResult, func_cap: int | None = None
) -> ScoreCard:
    """Dynamic score: fixed PoCs plus preserved baseline tests."""
    flags = list(poc_fixed_flags)
    func_passed = func.passed if func_cap is None else min(func.passed, func_cap)
    return ScoreCard(
        poc_passed=sum(1 for f in flags if f),
        poc_total=len(flags),
        func_passed=func_passed,
        func_total=func.total,
    )


def select_final(candidates) -> SelectionResult:
    """Pick the winner: max score, then largest fingerprint class, then id.

    Only applicable candidates (applied cleanly, non-empty diff) take part.
    A unique top scorer wins outright; otherwise the top scorers are grouped
    by normalized fingerprint and the largest class wins, with a class-size
    tie falling back to the class holding the lowest candidate id. The
    winner is the lowest id inside the chosen class.
    """
    votable = [c for c in candidates if c.votable and c.score is not None]
    if not votable:
        raise NoPatchSelected("no applicable candidate with a non-empty diff")

    ranking = tuple(
        (c.candidate_id, c.score)
        for c in sorted(votable, key=lambda c: (-c.score.dynamic_score, c.candidate_id))
    )
    top_score = ranking[0][1].dynamic_score
    top = [c for c in votable if c.score.dynamic_score == top_score]

    classes: dict[str, list[int]] = {}
    for c in sorted(top, key=lambda c: c.candidate_id):
        classes.setdefault(c.fingerprint, []).append(c.candidate_id)
    vote_classes = {fp: tuple(ids) for fp, ids in classes.items()}

    if len(top) == 1:
        return SelectionResult(
            winner=top[0].candidate_id,
            ranking=ranking,
            vote_classes=vote_classes,
            tie_break_path="unique_top",
        )

    max_size = max(len(ids) for ids in vote_classes.values())
    largest = [fp for fp, ids in vote_classes.items() if len(ids) == max_size]
    if len(largest) == 1:
        chosen = largest[0]
        path = "majority_vote"
    else:
        chosen = min(largest, key=lambda fp: min(vote_classes[fp]))
        path = "index_fallback"
    return SelectionResult(
        winner=min(vote_classes[chosen]),
        ranking=ranking,
        vote_classes=vote_classes,
        tie_break_path=path,
    )

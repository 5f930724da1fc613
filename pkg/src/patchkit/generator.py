"""Patch-candidate generation and the self-critique turn.

Builds the code context around located root causes, samples K candidates in
the SEARCH/REPLACE format, and optionally runs one critique round per
candidate in which the model reviews its own patch and may hand back a
revision. Critique is strictly one-shot: a revision is never critiqued
again.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace as dc_replace

from .errors import AllCandidatesEmpty, GenerationError
from .gateway import ChatRequest, Gateway, Message, render_template
from .localizer import LocationSet, find_span
from .patch_engine import PatchCandidate, parse_patch_report
from .repo_index import RepoSnapshot, estimate_tokens
from .templates import substitute, template_text

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_LINES = 10


@dataclass(frozen=True)
class Segment:
    file_path: str
    start_line: int
    end_line: int
    text: str


@dataclass(frozen=True)
class GenerationContext:
    issue_text: str
    segments: tuple[Segment, ...]
    token_estimate: int
    dropped_locations: tuple[str, ...] = field(default=())


@dataclass(frozen=True)
class CritiqueVerdict:
    verdict: str  # Right | Wrong | Unparsed
    rationale: str
    revised_candidate: PatchCandidate | None = None


def _location_span(loc, snapshot: RepoSnapshot) -> tuple[int, int] | None:
    repo_file = snapshot.get(loc.file_path)
    if repo_file is None:
        return None
    span = None
    if loc.kind in ("class", "function") and loc.name:
        span = find_span(repo_file.content, loc.kind, loc.name)
    if loc.lines:
        low, high = min(loc.lines), max(loc.lines)
        span = (min(span[0], low), max(span[1], high)) if span else (low, high)
    return span


def build_context(
    issue_text: str,
    locations: LocationSet,
    snapshot: RepoSnapshot,
    window_lines: int = DEFAULT_WINDOW_LINES,
    max_tokens: int | None = None,
) -> GenerationContext:
    """Extract the code segments around each root cause.

    Spans grow by ``window_lines`` on both sides, overlapping spans within a
    file merge, and when a token budget is given the lowest-ranked locations
    are dropped (last first) until the context fits.
    """
    if not locations.locations:
        raise GenerationError("generation requires at least one root-cause location")

    active = list(locations.locations)
    dropped: list[str] = []
    while True:
        context = _assemble(issue_text, active, snapshot, window_lines)
        if max_tokens is None or context.token_estimate <= max_tokens or len(active) == 1:
            if max_tokens is not None and context.token_estimate > max_tokens:
                logger.warning(
                    "generation context still over budget (%d > %d) with one location",
                    context.token_estimate, max_tokens,
                )
            return dc_replace(context, dropped_locations=tuple(dropped))
        loc = active.pop()
        label = f"{loc.file_path}:{loc.kind}:{loc.name or loc.lines}"
        dropped.append(label)
        logger.warning("dropping lowest-ranked location to fit budget: %s", label)


def _assemble(issue_text, active, snapshot, window_lines) -> GenerationContext:
    spans_by_file: dict[str, list[tuple[int, int]]] = {}
    for loc in active:
        span = _location_span(loc, snapshot)
        if span is None:
            logger.warning("location %s could not be resolved to a span", loc)
            continue
        repo_file = snapshot.get(loc.file_path)
        low = max(1, span[0] - window_lines)
        high = min(repo_file.line_count, span[1] + window_lines)
        spans_by_file.setdefault(loc.file_path, []).append((low, high))

    segments: list[Segment] = []
    for path in sorted(spans_by_file):
        merged: list[list[int]] = []
        for low, high in sorted(spans_by_file[path]):
            if merged and low <= merged[-1][1] + 1:
                merged[-1][1] = max(merged[-1][1], high)
            else:
                merged.append([low, high])
        lines = snapshot.get(path).content.splitlines()
        for low, high in merged:
            segments.append(
                Segment(
                    file_path=path,
                    start_line=low,
                    end_line=high,
                    text="\n".join(lines[low - 1 : high]),
                )
            )
    if not segments:
        raise GenerationError("no location could be resolved against the snapshot")
    rendered = render_files_section(segments)
    return GenerationContext(
        issue_text=issue_text,
        segments=tuple(segments),
        token_estimate=estimate_tokens(issue_text) + estimate_tokens(rendered),
    )


def render_files_section(segments) -> str:
    """Render segments for the prompt; code stays byte-exact for SEARCH."""
    parts = []
    for seg in segments:
        parts.append(f"### {seg.file_path}\n```python\n{seg.text}\n```")
    return "\n\n".join(parts)


def generation_request(context: GenerationContext, k: int) -> ChatRequest:
    return render_template(
        "patch_gen",
        {
            "problem_statement": context.issue_text,
            "content": render_files_section(context.segments),
        },
        sample_count=k,
    )


def generate_candidates(
    gateway: Gateway, context: GenerationContext, k: int
) -> list[PatchCandidate]:
    """Sample k candidates; unparsable answers stay in the pool as empties."""
    if k < 1:
        raise ValueError("k must be >= 1")
    request = generation_request(context, k)
    response = gateway.complete(request)
    candidates: list[PatchCandidate] = []
    parsed_count = 0
    for i in range(k):
        if i >= len(response.samples):
            candidates.append(
                PatchCandidate(
                    candidate_id=i, edits=(), raw_answer="", finish_reason="error",
                    status="failed",
                )
            )
            continue
        sample = response.samples[i]
        edits, problems = parse_patch_report(sample.answer_text)
        status = "parsed" if edits else "empty"
        if edits:
            parsed_count += 1
        candidates.append(
            PatchCandidate(
                candidate_id=i,
                edits=tuple(edits),
                raw_answer=sample.answer_text,
                reasoning=sample.reasoning_text,
                finish_reason=sample.finish_reason,
                status=status,
                parse_problems=tuple(f"byte {p.byte_offset}: {p.detail}" for p in problems),
            )
        )
    if parsed_count == 0:
        raise AllCandidatesEmpty(f"none of {k} samples contained a well-formed patch")
    return candidates


def critique_candidate(
    gateway: Gateway, context: GenerationContext, candidate: PatchCandidate
) -> CritiqueVerdict:
    """One review turn appended to the candidate's generation conversation."""
    gen_prompt = substitute(
        template_text("patch_gen"),
        {
            "problem_statement": context.issue_text,
            "content": render_files_section(context.segments),
        },
    )
    request = ChatRequest(
        messages=(
            Message("user", gen_prompt),
            Message("assistant", candidate.raw_answer),
            Message("user", template_text("patch_critique")),
        ),
        model_tag="loc-gen",
        temperature=0.0,
        sample_count=1,
    )
    response = gateway.complete(request)
    if not response.samples:
        return CritiqueVerdict(verdict="Unparsed", rationale="gateway returned no samples")
    answer = response.samples[0].answer_text
    verdict = _parse_conclusion(answer)
    revised = None
    if verdict == "Wrong":
        edits, _problems = parse_patch_report(answer)
        if edits:
            revised = PatchCandidate(
                candidate_id=candidate.candidate_id,
                edits=tuple(edits),
                raw_answer=answer,
                status="parsed",
                critique_verdict="revision",
            )
    return CritiqueVerdict(verdict=verdict, rationale=answer, revised_candidate=revised)


def _parse_conclusion(answer: str) -> str:
    verdict = "Unparsed"
    for line in answer.splitlines():
        stripped = line.strip()
        if stripped.startswith("Conclusion:"):
            value = stripped[len("Conclusion:") :].strip().rstrip(".!")
            if value in ("Right", "Wrong"):
                verdict = value
    return verdict


def refine_pool(candidates, verdicts, policy: str = "replace") -> list[PatchCandidate]:
    """Fold critique verdicts back into the candidate pool.

    ``replace`` swaps in a revision for a Wrong candidate (same slot, same
    id); ``keep-both`` appends revisions with fresh ids. Either way the pool
    never shrinks.
    """
    if policy not in ("replace", "keep-both"):
        raise ValueError(f"unknown refine policy {policy!r}")
    verdict_by_id = {cid: v for cid, v in verdicts.items()} if isinstance(verdicts, dict) else {
        c.candidate_id: v for c, v in zip(candidates, verdicts)
    }
    pool: list[PatchCandidate] = []
    appended: list[PatchCandidate] = []
    next_id = max((c.candidate_id for c in candidates), default=-1) + 1
    for cand in candidates:
        verdict = verdict_by_id.get(cand.candidate_id)
        if verdict is not None and cand.critique_verdict is None:
            cand.critique_verdict = verdict.verdict
        if (
            verdict is not None
            and verdict.verdict == "Wrong"
            and verdict.revised_candidate is not None
        ):
            if policy == "replace":
                revised = verdict.revised_candidate
                revised.candidate_id = cand.candidate_id
                pool.append(revised)
                continue
            revision = verdict.revised_candidate
            revision.candidate_id = next_id
            next_id += 1
            appended.append(revision)
        pool.append(cand)
    return pool + appended

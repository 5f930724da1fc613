"""Two-step localization: file ranking, then line-level root causes.

Both steps parse free-form model answers, so every parser here is total:
malformed answers degrade to empty results plus warnings, never exceptions.
Multi-sample answers are merged by occurrence counting and the accuracy
metrics use the strict complete-set convention (missing any gold file or
line is a miss).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .errors import GoldError
from .gateway import Gateway, render_template
from .repo_index import FileChunk, RepoSnapshot

logger = logging.getLogger(__name__)

LOCATION_KINDS = ("class", "function", "line")


@dataclass(frozen=True)
class FileLocResult:
    ranked_files: tuple[str, ...]
    raw_answer: str
    sample_index: int
    warnings: tuple[str, ...] = field(default=())


@dataclass(frozen=True)
class LineLocation:
    file_path: str
    kind: str  # class | function | line
    name: str | None = None
    lines: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in LOCATION_KINDS:
            raise ValueError(f"unknown location kind {self.kind!r}")
        if self.kind == "line" and not self.lines:
            raise ValueError("line location needs line numbers")
        if self.kind in ("class", "function") and not self.name:
            raise ValueError(f"{self.kind} location needs a name")

    def key(self) -> tuple:
        return (self.file_path, self.kind, self.name, self.lines)


@dataclass(frozen=True)
class LocationSet:
    locations: tuple[LineLocation, ...]
    source_samples: int = 1
    merged: bool = False
    warnings: tuple[str, ...] = field(default=())

    def files(self) -> list[str]:
        seen: list[str] = []
        for loc in self.locations:
            if loc.file_path not in seen:
                seen.append(loc.file_path)
        return seen


_FENCE_BLOCK = re.compile(r"```[\w-]*\n(.*?)```", re.DOTALL)


def _first_fenced_block(answer: str) -> str | None:
    m = _FENCE_BLOCK.search(answer)
    return m.group(1) if m else None


def parse_file_answer(
    answer: str, snapshot_paths, file_number: int
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Extract the ranked file list from a fenced answer block."""
    warnings: list[str] = []
    block = _first_fenced_block(answer)
    if block is None:
        return (), ("no fenced file list in answer",)
    known = set(snapshot_paths)
    ranked: list[str] = []
    for raw_line in block.splitlines():
        path = raw_line.strip()
        if not path:
            continue
        if path not in known:
            warnings.append(f"dropped unknown path {path!r}")
            continue
        if path not in ranked:
            ranked.append(path)
    if len(ranked) > file_number:
        warnings.append(f"answer listed {len(ranked)} files; keeping top {file_number}")
        ranked = ranked[:file_number]
    return tuple(ranked), tuple(warnings)


def localize_files(
    gateway: Gateway,
    issue_text: str,
    snapshot: RepoSnapshot,
    structure: str,
    file_number: int,
    samples: int,
) -> list[FileLocResult]:
    """Ask for issue-relevant files; one parsed result per sample."""
    if file_number < 1:
        raise ValueError("file_number must be >= 1")
    request = render_template(
        "file_loc",
        {
            "problem_statement": issue_text,
            "structure": structure,
            "file_number": str(file_number),
        },
        sample_count=samples,
    )
    response = gateway.complete(request)
    results = []
    paths = snapshot.paths()
    for i, completion in enumerate(response.samples):
        ranked, warnings = parse_file_answer(completion.answer_text, paths, file_number)
        for w in warnings:
            logger.warning("file localization sample %d: %s", i, w)
        results.append(
            FileLocResult(
                ranked_files=ranked,
                raw_answer=completion.answer_text,
                sample_index=i,
                warnings=warnings,
            )
        )
    return results


def select_top_files(results, k: int, file_number: int | None = None) -> list[str]:
    """Aggregate per-sample rankings into one top-k list.

    Borda-style: a path at rank r (0-based) in a sample earns
    ``file_number - r`` points. Ties break by the best rank the path ever
    achieved, then lexicographically.
    """
    if file_number is None:
        file_number = max((len(r.ranked_files) for r in results), default=0)
    scores: dict[str, int] = {}
    best_rank: dict[str, int] = {}
    for result in results:
        for rank, path in enumerate(result.ranked_files):
            scores[path] = scores.get(path, 0) + (file_number - rank)
            if rank < best_rank.get(path, file_number + 1):
                best_rank[path] = rank
    ordered = sorted(scores, key=lambda p: (-scores[p], best_rank[p], p))
    return ordered[:k]


_LOC_ENTRY = re.compile(r"^(class|function|line)\s*:\s*(.+?)\s*$")


def parse_location_answer(
    answer: str, snapshot_paths=None
) -> tuple[tuple[LineLocation, ...], tuple[str, ...]]:
    """Parse the line-localization block grammar.

    Groups are blank-line separated: a path line followed by
    ``class:``/``function:``/``line:`` entries. ``line:`` entries attach to
    the most recent class/function; bare line numbers without one are
    skipped, as are classes without line numbers (the prompt requires both).
    """
    warnings: list[str] = []
    block = _first_fenced_block(answer)
    if block is None:
        return (), ("no fenced location block in answer",)
    known = set(snapshot_paths) if snapshot_paths is not None else None

    locations: list[LineLocation] = []
    seen: set[tuple] = set()

    for group in re.split(r"\n\s*\n", block.strip()):
        lines = [l.strip() for l in group.splitlines() if l.strip()]
        if not lines:
            continue
        path = lines[0]
        if _LOC_ENTRY.match(path):
            warnings.append(f"group starting with {path!r} has no file path; skipped")
            continue
        if known is not None and path not in known:
            warnings.append(f"dropped group for unknown path {path!r}")
            continue
        pending: list[tuple[str, str, list[int]]] = []  # (kind, name, lines)
        orphan_lines = 0
        for entry in lines[1:]:
            m = _LOC_ENTRY.match(entry)
            if not m:
                warnings.append(f"unrecognized location entry {entry!r}")
                continue
            kind, value = m.group(1), m.group(2)
            if kind == "line":
                try:
                    number = int(value)
                except ValueError:
                    warnings.append(f"bad line number {value!r}")
                    continue
                if pending:
                    pending[-1][2].append(number)
                else:
                    orphan_lines += 1
            else:
                pending.append((kind, value, []))
        if orphan_lines:
            warnings.append(
                f"{orphan_lines} bare line entr{'y' if orphan_lines == 1 else 'ies'} "
                f"without a class/function in {path}; skipped"
            )
        for kind, name, nums in pending:
            if kind == "class" and not nums:
                warnings.append(f"class {name} in {path} lacks line numbers; skipped")
                continue
            loc = LineLocation(file_path=path, kind=kind, name=name, lines=tuple(nums))
            if loc.key() not in seen:
                seen.add(loc.key())
                locations.append(loc)
    return tuple(locations), tuple(warnings)


def render_file_contents(chunks) -> str:
    """Join chunk contents with per-file headers for the line-loc prompt."""
    parts = []
    for chunk in chunks:
        parts.append(f"### File: {chunk.file_path} ###\n{chunk.content}")
    return "\n\n".join(parts)


def localize_lines(
    gateway: Gateway,
    issue_text: str,
    file_chunks: list[FileChunk],
    samples: int,
    prior_results: str = "",
    snapshot_paths=None,
) -> list[LocationSet]:
    """Pinpoint root-cause locations inside the given chunks, per sample."""
    request = render_template(
        "line_loc",
        {
            "problem_statement": issue_text,
            "file_contents": render_file_contents(file_chunks),
            "last_search_results": prior_results,
        },
        sample_count=samples,
    )
    response = gateway.complete(request)
    sets = []
    for i, completion in enumerate(response.samples):
        locations, warnings = parse_location_answer(completion.answer_text, snapshot_paths)
        for w in warnings:
            logger.warning("line localization sample %d: %s", i, w)
        sets.append(
            LocationSet(locations=locations, source_samples=1, merged=False, warnings=warnings)
        )
    return sets


def merge_locations(per_sample, max_root_causes: int) -> LocationSet:
    """Merge sample-level location sets by occurrence count.

    Locations seen in more samples rank higher; equal counts keep
    first-appearance order. The merged set is truncated to the configured
    number of root causes.
    """
    counts: dict[tuple, int] = {}
    first_seen: dict[tuple, int] = {}
    by_key: dict[tuple, LineLocation] = {}
    order = 0
    for loc_set in per_sample:
        for loc in loc_set.locations:
            key = loc.key()
            if key not in counts:
                counts[key] = 0
                first_seen[key] = order
                by_key[key] = loc
                order += 1
            counts[key] += 1
    ranked = sorted(counts, key=lambda k: (-counts[k], first_seen[k]))
    merged = tuple(by_key[k] for k in ranked[:max_root_causes])
    return LocationSet(
        locations=merged,
        source_samples=len(per_sample),
        merged=True,
    )


_DEF_TEMPLATE = r"^([ \t]*)(?:async[ \t]+)?def[ \t]+{name}\b"
_CLASS_TEMPLATE = r"^([ \t]*)class[ \t]+{name}\b"


def find_span(content: str, kind: str, name: str) -> tuple[int, int] | None:
    """Locate a class/function block by indentation, returning 1-based lines.

    Dotted names (``Cls.method``) resolve the container first, then search
    the member inside its block. No AST: the block ends at the first
    non-blank line indented at or above the header's level.
    """
    lines = content.splitlines()
    if kind == "function" and "." in name:
        container, member = name.rsplit(".", 1)
        outer = find_span(content, "class", container)
        if outer is None:
            return find_span(content, "function", member)
        return _find_block(lines, "function", member, outer[0] - 1, outer[1])
    if kind not in ("class", "function"):
        return None
    return _find_block(lines, kind, name, 0, len(lines))


def _find_block(
    lines: list[str], kind: str, name: str, start_idx: int, end_idx: int
) -> tuple[int, int] | None:
    template = _CLASS_TEMPLATE if kind == "class" else _DEF_TEMPLATE
    pattern = re.compile(template.format(name=re.escape(name)))
    for i in range(start_idx, min(end_idx, len(lines))):
        m = pattern.match(lines[i])
        if not m:
            continue
        indent = len(m.group(1).expandtabs())
        end = i
        for j in range(i + 1, len(lines)):
            stripped = lines[j].strip()
            if not stripped:
                continue
            j_indent = len(lines[j][: len(lines[j]) - len(lines[j].lstrip())].expandtabs())
            if j_indent <= indent:
                break
            end = j
        return (i + 1, end + 1)
    return None


def _predicted_line_cover(
    pred: LineLocation, snapshot: RepoSnapshot, tolerance: int
) -> tuple[set[int], tuple[int, int] | None]:
    """Lines a prediction covers in its file: explicit lines plus its span."""
    span = None
    if pred.kind in ("class", "function"):
        repo_file = snapshot.get(pred.file_path)
        if repo_file is not None and pred.name:
            span = find_span(repo_file.content, pred.kind, pred.name)
    explicit = set()
    for n in pred.lines:
        explicit.update(range(n - tolerance, n + tolerance + 1))
    return explicit, span


def _covers_line(
    pred: LineLocation,
    file_path: str,
    line: int,
    snapshot: RepoSnapshot,
    tolerance: int,
) -> bool:
    if pred.file_path != file_path:
        return False
    explicit, span = _predicted_line_cover(pred, snapshot, tolerance)
    if line in explicit:
        return True
    return span is not None and span[0] - tolerance <= line <= span[1] + tolerance


def _gold_covered(
    gold: LineLocation, predicted, snapshot: RepoSnapshot, tolerance: int
) -> bool:
    if gold.lines:
        return all(
            any(_covers_line(p, gold.file_path, line, snapshot, tolerance) for p in predicted)
            for line in gold.lines
        )
    # named entity without lines: match by name or by span containment
    for p in predicted:
        if p.file_path != gold.file_path:
            continue
        if p.kind == gold.kind and p.name == gold.name:
            return True
    repo_file = snapshot.get(gold.file_path)
    if repo_file is None or not gold.name:
        return False
    span = find_span(repo_file.content, gold.kind, gold.name)
    if span is None:
        return False
    return any(
        _covers_line(p, gold.file_path, span[0], snapshot, tolerance) for p in predicted
    )


def loc_accuracy(
    predicted,
    gold_files,
    gold_locations,
    snapshot: RepoSnapshot,
    tolerance: int = 0,
) -> dict:
    """Strict complete-set localization accuracy.

    ``predicted`` is either a LocationSet or an iterable of file paths.
    ``file_hit`` requires every gold file to be predicted; ``line_hit``
    requires every gold location fully covered (a predicted class/function
    covers the gold lines falling inside its span). Adding predictions can
    never turn a hit into a miss.
    """
    for path in gold_files:
        if snapshot.get(path) is None:
            raise GoldError(f"gold file {path!r} not in snapshot")
    for loc in gold_locations:
        if snapshot.get(loc.file_path) is None:
            raise GoldError(f"gold location file {loc.file_path!r} not in snapshot")

    if isinstance(predicted, LocationSet):
        predicted_files = set(predicted.files())
        predicted_locs = predicted.locations
    else:
        predicted_files = set(predicted)
        predicted_locs = ()

    file_hit = all(path in predicted_files for path in gold_files)
    line_hit = all(
        _gold_covered(g, predicted_locs, snapshot, tolerance) for g in gold_locations
    )
    return {"file_hit": file_hit, "line_hit": line_hit}

"""SEARCH/REPLACE patch parsing, application, diffing, and vote fingerprints.

The edit format is the block grammar the generation prompt demands:

    <<< MODIFIED FILE: path/to/file.py >>>
    ```python
    <<<<<<< SEARCH
    old lines
    =======
    new lines
    >>>>>>> REPLACE
    ```
    <<< END MODIFIED FILE >>>

Parsing is total: arbitrary text yields edits plus per-block problem reports,
never an unhandled crash. Application happens in a private working directory
so the original tree is never touched, and the emitted unified diff is
consumable by standard patch tools.
"""

from __future__ import annotations

import difflib
import hashlib
import logging
import re
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AmbiguousMatch, ApplyError, EmptyPatch
from .repo_index import RepoSnapshot

logger = logging.getLogger(__name__)

FILE_OPEN = re.compile(r"^<<< MODIFIED FILE: (.+?) >>>\s*$")
FILE_CLOSE = re.compile(r"^<<< END MODIFIED FILE(?::.*)? >>>\s*$")
SEARCH_MARK = re.compile(r"^<{5,9} SEARCH\s*$")
DIVIDER_MARK = re.compile(r"^={5,9}\s*$")
REPLACE_MARK = re.compile(r"^>{5,9} REPLACE\s*$")
FENCE = re.compile(r"^```[\w-]*\s*$")

DIFF_CONTEXT_LINES = 3


@dataclass(frozen=True)
class Edit:
    file_path: str
    search_text: str
    replace_text: str


@dataclass(frozen=True)
class BlockProblem:
    """One malformed region of an answer, anchored by byte offset."""

    byte_offset: int
    detail: str


@dataclass(frozen=True)
class ScoreCard:
    poc_passed: int = 0
    poc_total: int = 0
    func_passed: int = 0
    func_total: int = 0

    def __post_init__(self):
        if not (0 <= self.poc_passed <= self.poc_total):
            raise ValueError("poc_passed out of range")
        if not (0 <= self.func_passed <= self.func_total):
            raise ValueError("func_passed out of range")

    @property
    def dynamic_score(self) -> int:
        return self.poc_passed + self.func_passed


@dataclass
class PatchCandidate:
    candidate_id: int
    edits: tuple[Edit, ...]
    raw_answer: str
    reasoning: str | None = None
    unified_diff: str | None = None
    fingerprint: str | None = None
    score: ScoreCard | None = None
    finish_reason: str = "stop"
    status: str = "parsed"  # parsed | empty | applied | no_op | apply_failed
    critique_verdict: str | None = None
    parse_problems: tuple[str, ...] = field(default=())

    @property
    def votable(self) -> bool:
        return self.status == "applied" and bool(self.unified_diff)


def parse_patch_report(raw_answer: str) -> tuple[list[Edit], list[BlockProblem]]:
    """Parse all edit blocks out of an answer, reporting malformed ones.

    Works line by line so stray prose around blocks is ignored; code fences
    directly inside a file block are stripped.
    """
    edits: list[Edit] = []
    problems: list[BlockProblem] = []

    lines = raw_answer.splitlines()
    offsets: list[int] = []
    pos = 0
    for line in lines:
        offsets.append(pos)
        pos += len(line.encode("utf-8")) + 1

    i = 0
    current_file: str | None = None
    file_open_offset = 0
    while i < len(lines):
        line = lines[i]
        m = FILE_OPEN.match(line)
        if m:
            if current_file is not None:
                problems.append(
                    BlockProblem(file_open_offset, f"file block {current_file!r} never closed")
                )
            current_file = m.group(1).strip()
            file_open_offset = offsets[i]
            if not current_file:
                problems.append(BlockProblem(offsets[i], "empty file path in block header"))
                current_file = None
            i += 1
            continue
        if FILE_CLOSE.match(line):
            if current_file is None:
                problems.append(BlockProblem(offsets[i], "END marker without open file block"))
            current_file = None
            i += 1
            continue
        if SEARCH_MARK.match(line):
            start_offset = offsets[i]
            if current_file is None:
                problems.append(BlockProblem(start_offset, "SEARCH marker outside a file block"))
                i = _skip_pair(lines, i + 1)
                continue
            i += 1
            search_lines: list[str] = []
            while i < len(lines) and not DIVIDER_MARK.match(lines[i]):
                if FILE_CLOSE.match(lines[i]) or FILE_OPEN.match(lines[i]):
                    break
                search_lines.append(lines[i])
                i += 1
            if i >= len(lines) or not DIVIDER_MARK.match(lines[i]):
                problems.append(BlockProblem(start_offset, "SEARCH block missing ======= divider"))
                continue
            i += 1
            replace_lines: list[str] = []
            while i < len(lines) and not REPLACE_MARK.match(lines[i]):
                if FILE_CLOSE.match(lines[i]) or FILE_OPEN.match(lines[i]):
                    break
                replace_lines.append(lines[i])
                i += 1
            if i >= len(lines) or not REPLACE_MARK.match(lines[i]):
                problems.append(
                    BlockProblem(start_offset, "SEARCH block missing >>>>>>> REPLACE terminator")
                )
                continue
            i += 1
            search_text = "\n".join(search_lines)
            if not search_text:
                problems.append(BlockProblem(start_offset, "empty SEARCH text"))
                continue
            edits.append(
                Edit(
                    file_path=current_file,
                    search_text=search_text,
                    replace_text="\n".join(replace_lines),
                )
            )
            continue
        if current_file is not None and FENCE.match(line):
            i += 1
            continue
        i += 1

    if current_file is not None:
        problems.append(
            BlockProblem(file_open_offset, f"file block {current_file!r} never closed")
        )
    return edits, problems


def _skip_pair(lines: list[str], i: int) -> int:
    """Advance past an orphaned SEARCH body so scanning can resume."""
    while i < len(lines) and not REPLACE_MARK.match(lines[i]):
        i += 1
    return i + 1 if i < len(lines) else i


def parse_patch(raw_answer: str) -> list[Edit]:
    """Parse edits, raising when nothing well-formed was found."""
    edits, problems = parse_patch_report(raw_answer)
    if not edits:
        raise EmptyPatch([f"byte {p.byte_offset}: {p.detail}" for p in problems])
    for p in problems:
        logger.warning("malformed edit block at byte %d: %s", p.byte_offset, p.detail)
    return edits


def render_patch(edits) -> str:
    """Serialize edits back into block format; inverse of parse_patch."""
    parts = []
    for e in edits:
        search = e.search_text.split("\n") if e.search_text else []
        replace = e.replace_text.split("\n") if e.replace_text else []
        body = "\n".join(
            [
                f"<<< MODIFIED FILE: {e.file_path} >>>",
                "```python",
                "<<<<<<< SEARCH",
                *search,
                "=======",
                *replace,
                ">>>>>>> REPLACE",
                "```",
                "<<< END MODIFIED FILE >>>",
            ]
        )
        parts.append(body)
    return "\n\n".join(parts)


@dataclass(frozen=True)
class ApplyResult:
    workdir: str
    unified_diff: str
    changed_files: tuple[str, ...]


def materialize_snapshot(snapshot: RepoSnapshot, dest) -> Path:
    """Write the snapshot's files under ``dest`` (created if needed)."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    for f in snapshot.files:
        target = dest / f.path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(f.content, encoding="utf-8")
    return dest


def apply_patch(
    snapshot: RepoSnapshot,
    edits,
    workdir=None,
    on_ambiguous: str = "fail",
) -> ApplyResult:
    """Apply edits to a fresh private copy of the snapshot.

    Each edit's search text must occur in its file; more than one occurrence
    is an error under the default policy (``on_ambiguous="fail"``) or takes
    the first occurrence under ``"first"``. The returned unified diff uses
    ``a/``+``b/`` prefixed paths and 3 context lines so standard patch tools
    can replay it.
    """
    contents: dict[str, str] = {}
    for idx, edit in enumerate(edits):
        if edit.file_path not in contents:
            repo_file = snapshot.get(edit.file_path)
            if repo_file is None:
                raise ApplyError(edit.file_path, idx, "file not in snapshot")
            contents[edit.file_path] = repo_file.content
        text = contents[edit.file_path]
        count = text.count(edit.search_text)
        if count == 0:
            raise ApplyError(edit.file_path, idx, "search text not found")
        if count > 1 and on_ambiguous != "first":
            raise AmbiguousMatch(edit.file_path, idx, count)
        contents[edit.file_path] = text.replace(edit.search_text, edit.replace_text, 1)

    if workdir is None:
        workdir = tempfile.mkdtemp(prefix="patchkit-")
    root = materialize_snapshot(snapshot, workdir)

    changed: list[str] = []
    diff_parts: list[str] = []
    for path in sorted(contents):
        original = snapshot.get(path).content
        final = contents[path]
        if final == original:
            continue
        changed.append(path)
        target = root / path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(final, encoding="utf-8")
        diff_parts.append(file_diff(original, final, path))

    return ApplyResult(
        workdir=str(root),
        unified_diff="".join(diff_parts),
        changed_files=tuple(changed),
    )


def file_diff(old_text: str, new_text: str, path: str, context: int = DIFF_CONTEXT_LINES) -> str:
    """Unified diff of one file with standard a/ b/ headers.

    Lines lacking a final newline get the conventional
    ``\\ No newline at end of file`` marker so external patch utilities
    accept the output.
    """
    a = old_text.splitlines(keepends=True)
    b = new_text.splitlines(keepends=True)
    out: list[str] = []
    for line in difflib.unified_diff(a, b, fromfile=f"a/{path}", tofile=f"b/{path}", n=context):
        if line.endswith("\n"):
            out.append(line)
        else:
            out.append(line + "\n")
            out.append("\\ No newline at end of file\n")
    return "".join(out)


_HUNK_HEADER = re.compile(r"^@@ [^@]*@@")
_LEADING_WS = re.compile(r"^[ \t]*")


def _collapse_inner_whitespace(text: str) -> str:
    """Collapse runs of spaces/tabs to one space, except inside quotes.

    Leading indentation is preserved: it is semantic in the languages this
    targets, so only interior runs are normalized.
    """
    lead = _LEADING_WS.match(text).group(0)
    rest = text[len(lead):]
    out: list[str] = []
    quote: str | None = None
    i = 0
    while i < len(rest):
        c = rest[i]
        if quote is not None:
            out.append(c)
            if c == "\\" and i + 1 < len(rest):
                out.append(rest[i + 1])
                i += 2
                continue
            if c == quote:
                quote = None
            i += 1
            continue
        if c in "\"'":
            quote = c
            out.append(c)
            i += 1
            continue
        if c in " \t":
            while i < len(rest) and rest[i] in " \t":
                i += 1
            out.append(" ")
            continue
        out.append(c)
        i += 1
    return lead + "".join(out)


def _resolve_replacement_runs(lines: list[str]) -> list[str]:
    """Canonicalize -/+ runs: pairs equal after normalization become context.

    difflib may encode the same file change either as pure insertions next
    to a context line or as a remove/add pair when the line differs only in
    ways normalization erases. Aligning each remove-run against its add-run
    and turning matched pairs into context makes both encodings hash alike.
    """
    out: list[str] = []
    minus: list[str] = []
    plus: list[str] = []

    def flush():
        nonlocal minus, plus
        if minus and plus:
            matcher = difflib.SequenceMatcher(
                a=[m[1:] for m in minus], b=[p[1:] for p in plus], autojunk=False
            )
            ai = bi = 0
            for a0, b0, size in matcher.get_matching_blocks():
                out.extend(minus[ai:a0])
                out.extend(plus[bi:b0])
                for k in range(size):
                    out.append(" " + plus[b0 + k][1:])
                ai, bi = a0 + size, b0 + size
        else:
            out.extend(minus)
            out.extend(plus)
        minus, plus = [], []

    for line in lines:
        if line[:1] == "-":
            if plus:
                flush()
            minus.append(line)
        elif line[:1] == "+":
            plus.append(line)
        else:
            flush()
            out.append(line)
    flush()
    return out


def normalize_fingerprint(
    unified_diff: str, comment_prefix_by_ext: dict[str, str] | None = None
) -> str:
    """Whitespace/comment-insensitive diff fingerprint for majority voting.

    Normalization, in order: hunk-header line numbers dropped; blank-only
    changed lines removed; trailing whitespace stripped; interior whitespace
    runs collapsed outside string literals; comment-only changed lines
    removed ("#" comments by default, overridable per file extension);
    remove/add pairs that normalization made equal resolve to context.
    Hunks left with no changed lines, and files left with no hunks, are
    dropped entirely. Candidates whose diffs differ only along those axes
    share a fingerprint.
    """
    prefixes = comment_prefix_by_ext or {}
    comment_prefix = "#"

    sections: list[tuple[list[str], list[list[str]]]] = []
    headers: list[str] = []
    hunks: list[list[str]] = []
    hunk: list[str] | None = None

    def flush_hunk():
        nonlocal hunk
        if hunk is not None:
            resolved = _resolve_replacement_runs(hunk)
            if any(l[:1] in ("+", "-") for l in resolved):
                hunks.append(resolved)
        hunk = None

    def flush_file():
        nonlocal headers, hunks
        flush_hunk()
        if headers and hunks:
            sections.append((headers, hunks))
        headers, hunks = [], []

    for line in unified_diff.splitlines():
        if line.startswith("--- "):
            flush_file()
            headers = [line]
            continue
        if line.startswith("+++ "):
            comment_prefix = prefixes.get(Path(line[4:].strip()).suffix, "#")
            headers.append(line)
            continue
        if _HUNK_HEADER.match(line):
            flush_hunk()
            hunk = []
            continue
        if hunk is None:
            continue
        if line[:1] in ("+", "-"):
            content = line[1:]
            stripped = content.strip()
            if not stripped or stripped.startswith(comment_prefix):
                continue
            hunk.append(line[0] + _collapse_inner_whitespace(content.rstrip()))
            continue
        if line.startswith("\\"):
            continue
        # context line: whitespace-normalized but never dropped
        hunk.append(" " + _collapse_inner_whitespace(line[1:].rstrip()) if line else line)
    flush_file()

    normalized: list[str] = []
    for file_headers, file_hunks in sections:
        normalized.extend(file_headers)
        for h in file_hunks:
            normalized.append("@@")
            normalized.extend(h)
    return hashlib.sha256("\n".join(normalized).encode("utf-8")).hexdigest()


def copy_tree(src, dest) -> Path:
    """Plain recursive copy used to stage pristine trees for oracles."""
    src, dest = Path(src), Path(dest)
    shutil.copytree(src, dest, dirs_exist_ok=True)
    return dest

"""Repository snapshotting, structure rendering, and context-budget chunking.

A snapshot is an immutable, deterministic view of a working tree: text files
only, lexicographic order, content-addressed id. Everything downstream
(prompts, patches, sandboxes) works from snapshots, never from the live tree.
"""

from __future__ import annotations

import fnmatch
import hashlib
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ChunkError, RepoError

logger = logging.getLogger(__name__)

# Token estimate: ceil(utf8_bytes / BYTES_PER_TOKEN). Code and English average
# roughly 3-4 bytes per BPE token; 3.5 deliberately over-counts a little so
# budget checks stay conservative.
BYTES_PER_TOKEN = 3.5

# Matches the trained sequence limit; prompts must fit inside it.
DEFAULT_CONTEXT_TOKENS = 32768
# Reserved for instructions, formatting scaffold, and the model's output.
DEFAULT_SCAFFOLD_TOKENS = 4096

_BINARY_SNIFF_BYTES = 8192


@dataclass(frozen=True)
class RepoFile:
    path: str
    content: str
    line_count: int
    token_estimate: int


@dataclass(frozen=True)
class FileChunk:
    file_path: str
    start_line: int
    end_line: int
    content: str
    token_estimate: int


@dataclass(frozen=True)
class RepoSnapshot:
    root_path: str
    files: tuple[RepoFile, ...]
    ignore_rules: tuple[str, ...]
    snapshot_id: str
    warnings: tuple[str, ...] = field(default=())

    def get(self, path: str) -> RepoFile | None:
        for f in self.files:
            if f.path == path:
                return f
        return None

    def paths(self) -> list[str]:
        return [f.path for f in self.files]


def estimate_tokens(text: str) -> int:
    """Deterministic token estimate: ceil(utf-8 byte length / 3.5).

    Monotone in text length for a fixed alphabet and zero on empty input.
    """
    if not text:
        return 0
    return math.ceil(len(text.encode("utf-8")) / BYTES_PER_TOKEN)


def _is_ignored(rel_path: str, ignore_rules: tuple[str, ...]) -> bool:
    for rule in ignore_rules:
        if fnmatch.fnmatch(rel_path, rule):
            return True
        # "dir/**" should also hide the directory entry itself
        if rule.endswith("/**") and fnmatch.fnmatch(rel_path, rule[:-3]):
            return True
    return False


def _looks_binary(raw: bytes) -> bool:
    return b"\x00" in raw[:_BINARY_SNIFF_BYTES]


def scan_repo(root, ignore_rules: list[str] | tuple[str, ...] = ()) -> RepoSnapshot:
    """Snapshot a working tree into an immutable, deterministically ordered value.

    Binary files (NUL byte in the first 8 KiB) are excluded. Unreadable files
    are skipped and recorded in the snapshot's warning list; an unreadable
    root is fatal.
    """
    root = Path(root)
    if not root.is_dir():
        raise RepoError(f"repository root not readable: {root}")
    rules = tuple(ignore_rules)
    files: list[RepoFile] = []
    warnings: list[str] = []
    hasher = hashlib.sha256()

    try:
        all_paths = sorted(p for p in root.rglob("*") if p.is_file())
    except OSError as exc:
        raise RepoError(f"cannot walk repository root {root}: {exc}") from exc

    for path in all_paths:
        rel = path.relative_to(root).as_posix()
        if _is_ignored(rel, rules):
            continue
        try:
            raw = path.read_bytes()
        except OSError as exc:
            warnings.append(f"skipped unreadable file {rel}: {exc}")
            continue
        if _looks_binary(raw):
            continue
        content = raw.decode("utf-8", errors="replace")
        files.append(
            RepoFile(
                path=rel,
                content=content,
                line_count=len(content.splitlines()),
                token_estimate=estimate_tokens(content),
            )
        )
        hasher.update(rel.encode("utf-8"))
        hasher.update(b"\x00")
        hasher.update(hashlib.sha256(raw).digest())

    return RepoSnapshot(
        root_path=str(root),
        files=tuple(files),
        ignore_rules=rules,
        snapshot_id=hasher.hexdigest(),
        warnings=tuple(warnings),
    )


def render_structure(snapshot: RepoSnapshot, max_tokens: int | None = None) -> str:
    """Render the snapshot as an indented tree: directories first, then files.

    One line per directory ("name/") and per file; two-space indent per
    depth. When ``max_tokens`` is given and the full tree exceeds it, the
    deepest entries are dropped first and a truncation marker is appended.
    """
    tree: dict = {}
    for f in snapshot.files:
        node = tree
        parts = f.path.split("/")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = None

    lines: list[str] = []

    def walk(node: dict, depth: int) -> None:
        dirs = sorted(k for k, v in node.items() if v is not None)
        plain = sorted(k for k, v in node.items() if v is None)
        for name in dirs:
            lines.append(("  " * depth) + name + "/")
            walk(node[name], depth + 1)
        for name in plain:
            lines.append(("  " * depth) + name)

    walk(tree, 0)
    text = "\n".join(lines)
    if max_tokens is None or estimate_tokens(text) <= max_tokens:
        return text

    # Depth of a rendered line == indent width / 2.
    indexed = list(enumerate(lines))
    by_depth = sorted(
        indexed,
        key=lambda item: (-((len(item[1]) - len(item[1].lstrip())) // 2), -item[0]),
    )
    dropped = 0
    keep = set(range(len(lines)))
    for idx, _line in by_depth:
        if estimate_tokens("\n".join(lines[i] for i in sorted(keep)) ) <= max_tokens:
            break
        keep.discard(idx)
        dropped += 1
    kept_lines = [lines[i] for i in sorted(keep)]
    kept_lines.append(f"... ({dropped} entries omitted to fit the context budget)")
    logger.warning("repository structure truncated: %d entries dropped", dropped)
    return "\n".join(kept_lines)


def number_lines(content: str, start: int = 1) -> str:
    """Prefix each line with its absolute 1-based number ("N | code")."""
    lines = content.splitlines()
    return "\n".join(f"{start + i} | {line}" for i, line in enumerate(lines))


def chunk_file(file: RepoFile, budget_tokens: int, overhead_tokens: int) -> list[FileChunk]:
    """Split a file into line-aligned chunks fitting ``budget - overhead`` tokens.

    Chunk content carries per-line "N | code" prefixes so downstream answers
    can cite absolute line numbers. A single line that alone exceeds the
    effective budget is an error naming that line.
    """
    if not (budget_tokens > overhead_tokens > 0):
        raise ValueError(
            f"need budget_tokens > overhead_tokens > 0, got {budget_tokens}/{overhead_tokens}"
        )
    effective = budget_tokens - overhead_tokens
    lines = file.content.splitlines()
    if not lines:
        return []

    prefixed = [f"{i + 1} | {line}" for i, line in enumerate(lines)]
    per_line = [estimate_tokens(p + "\n") for p in prefixed]
    for i, cost in enumerate(per_line):
        if cost > effective:
            raise ChunkError(
                f"line {i + 1} of {file.path} needs {cost} tokens, over the "
                f"effective budget of {effective}",
                file_path=file.path,
                line_number=i + 1,
            )

    chunks: list[FileChunk] = []
    start = 0
    running = 0
    for i, cost in enumerate(per_line):
        if running + cost > effective and i > start:
            chunks.append(_make_chunk(file.path, prefixed, start, i - 1))
            start = i
            running = 0
        running += cost
    chunks.append(_make_chunk(file.path, prefixed, start, len(lines) - 1))
    return chunks


def _make_chunk(path: str, prefixed: list[str], start_idx: int, end_idx: int) -> FileChunk:
    content = "\n".join(prefixed[start_idx : end_idx + 1])
    return FileChunk(
        file_path=path,
        start_line=start_idx + 1,
        end_line=end_idx + 1,
        content=content,
        token_estimate=estimate_tokens(content),
    )


_CHUNK_PREFIX = re.compile(r"^\s*(\d+) \| (.*)$")


def chunk_lines(chunk: FileChunk) -> list[tuple[int, str]]:
    """Recover (line_number, raw_line) pairs from a chunk's prefixed content."""
    out: list[tuple[int, str]] = []
    for line in chunk.content.splitlines():
        m = _CHUNK_PREFIX.match(line)
        if m:
            out.append((int(m.group(1)), m.group(2)))
    return out

"""Synthetic buggy-repo corpus and the rule-driven backend that patches it.

Each fixture is a tiny package with a planted bug, an issue text, public
functionality tests that pass before and after the fix, hidden gold tests
that only pass once the bug is fixed, and a gold patch. The RuleBackend
answers every pipeline prompt deterministically from the fixture spec; a
recording wrapper captures those answers as scripted-backend records so the
full pipeline can replay offline with no rule logic at all.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

from patchkit.config import PipelineConfig
from patchkit.gateway import ChatRequest, Completion, Gateway, write_script_record
from patchkit.patch_engine import Edit, apply_patch, render_patch
from patchkit.repo_index import estimate_tokens, scan_repo


@dataclass(frozen=True)
class FixtureSpec:
    instance_id: str
    files: dict
    issue: str
    gold_edits: tuple
    candidate_plans: tuple  # per sample index: key into `answers`
    answers: dict  # plan key -> tuple[Edit, ...]
    file_loc_answers: tuple  # per sample index: list of paths
    line_loc_block: str
    poc_assert: str
    poc_no_assert: str
    fixed_markers: tuple  # all must appear in post-patch PoC output
    public_tests: str
    gold_tests: str
    critique_wrong_marker: str | None = None  # answer substring that earns a Wrong verdict


def _edits(*triples) -> tuple:
    return tuple(Edit(path, search, replace) for path, search, replace in triples)


CALC = FixtureSpec(
    instance_id="fx-calc-add",
    files={
        "calc/__init__.py": "",
        "calc/ops.py": (
            '"""Small arithmetic helpers."""\n'
            "\n"
            "def add(a, b):\n"
            "    return a - b\n"
            "\n"
            "def multiply(a, b):\n"
            "    return a * b\n"
            "\n"
            "def negate(x):\n"
            "    return -x\n"
        ),
    },
    issue=(
        "add() returns the difference instead of the sum\n"
        "\n"
        "Adding two numbers gives a wrong result:\n"
        "\n"
        ">>> from calc.ops import add\n"
        ">>> add(2, 3)\n"
        "-1\n"
        "\n"
        "The expected output is 5. multiply() and negate() work fine.\n"
    ),
    gold_edits=_edits(("calc/ops.py", "    return a - b", "    return a + b")),
    candidate_plans=("gold", "variant", "wrong"),
    answers={
        "gold": _edits(("calc/ops.py", "    return a - b", "    return a + b")),
        "variant": _edits(
            ("calc/ops.py", "    return a - b",
             "    # sum instead of difference\n    return a + b  ")
        ),
        "wrong": _edits(("calc/ops.py", "    return a - b", "    return a * b")),
    },
    file_loc_answers=(["calc/ops.py", "calc/__init__.py"], ["calc/ops.py"]),
    line_loc_block="calc/ops.py\nfunction: add\nline: 4",
    poc_assert=(
        "from calc.ops import add\n"
        "result = add(2, 3)\n"
        'assert result == 5, f"add(2, 3) returned {result}"\n'
        'print("OK")\n'
    ),
    poc_no_assert='from calc.ops import add\nprint("RESULT:", add(2, 3))\n',
    fixed_markers=("RESULT: 5",),
    public_tests=(
        "import sys\n"
        "from calc.ops import multiply, negate\n"
        "\n"
        "failures = 0\n"
        "\n"
        "def check(name, ok):\n"
        "    global failures\n"
        "    print(('PASSED ' if ok else 'FAILED ') + name)\n"
        "    failures += 0 if ok else 1\n"
        "\n"
        "check('test_multiply', multiply(3, 4) == 12)\n"
        "check('test_negate', negate(5) == -5)\n"
        "sys.exit(1 if failures else 0)\n"
    ),
    gold_tests=(
        "from calc.ops import add\n"
        "assert add(2, 3) == 5\n"
        "assert add(-1, 1) == 0\n"
        "print('gold ok')\n"
    ),
)

TEXTUTIL = FixtureSpec(
    instance_id="fx-text-reverse",
    files={
        "textutil/__init__.py": "",
        "textutil/strings.py": (
            "def reverse_words(s):\n"
            "    words = s.split()\n"
            '    return " ".join(words)\n'
            "\n"
            "def shout(s):\n"
            "    return s.upper()\n"
        ),
    },
    issue=(
        "reverse_words does not reverse anything\n"
        "\n"
        "```python\n"
        "from textutil.strings import reverse_words\n"
        'print(reverse_words("hello brave world"))\n'
        "```\n"
        "\n"
        "This prints 'hello brave world' but it should print\n"
        "'world brave hello'. shout() is unaffected.\n"
    ),
    gold_edits=_edits(
        ("textutil/strings.py", '    return " ".join(words)',
         '    return " ".join(reversed(words))')
    ),
    candidate_plans=("wrong_chars", "gold", "wrong_identity"),
    answers={
        "gold": _edits(
            ("textutil/strings.py", '    return " ".join(words)',
             '    return " ".join(reversed(words))')
        ),
        "wrong_chars": _edits(
            ("textutil/strings.py", '    return " ".join(words)',
             '    return " ".join(words)[::-1]')
        ),
        "wrong_identity": _edits(
            ("textutil/strings.py", "    words = s.split()\n"
             '    return " ".join(words)', "    return s")
        ),
    },
    file_loc_answers=(["textutil/strings.py"], ["textutil/strings.py"]),
    line_loc_block="textutil/strings.py\nfunction: reverse_words\nline: 3",
    poc_assert=(
        "from textutil.strings import reverse_words\n"
        'out = reverse_words("hello brave world")\n'
        'assert out == "world brave hello", f"got {out!r}"\n'
        'print("OK")\n'
    ),
    poc_no_assert=(
        "from textutil.strings import reverse_words\n"
        'print("RESULT:", reverse_words("hello brave world"))\n'
    ),
    fixed_markers=("RESULT: world brave hello",),
    public_tests=(
        "import sys\n"
        "from textutil.strings import shout\n"
        "\n"
        "failures = 0\n"
        "\n"
        "def check(name, ok):\n"
        "    global failures\n"
        "    print(('PASSED ' if ok else 'FAILED ') + name)\n"
        "    failures += 0 if ok else 1\n"
        "\n"
        "check('test_shout', shout('abc') == 'ABC')\n"
        "check('test_shout_empty', shout('') == '')\n"
        "sys.exit(1 if failures else 0)\n"
    ),
    gold_tests=(
        "from textutil.strings import reverse_words\n"
        'assert reverse_words("hello brave world") == "world brave hello"\n'
        'assert reverse_words("one") == "one"\n'
        "print('gold ok')\n"
    ),
)

STACK = FixtureSpec(
    instance_id="fx-stack-pop",
    files={
        "stackkit/__init__.py": "",
        "stackkit/stack.py": (
            "class Stack:\n"
            "    def __init__(self):\n"
            "        self.items = []\n"
            "\n"
            "    def push(self, item):\n"
            "        self.items.append(item)\n"
            "\n"
            "    def pop(self):\n"
            "        if not self.items:\n"
            '            raise IndexError("pop from empty stack")\n'
            "        return self.items.pop(0)\n"
            "\n"
            "    def peek(self):\n"
            "        if not self.items:\n"
            "            return None\n"
            "        return self.items[-1]\n"
        ),
    },
    issue=(
        "Stack.pop returns the oldest element instead of the newest\n"
        "\n"
        ">>> from stackkit.stack import Stack\n"
        ">>> s = Stack()\n"
        ">>> s.push(1)\n"
        ">>> s.push(2)\n"
        ">>> s.pop()\n"
        "1\n"
        "\n"
        "pop() must return 2, the most recently pushed item. peek()\n"
        "already returns the right element.\n"
    ),
    gold_edits=_edits(
        ("stackkit/stack.py", "        return self.items.pop(0)",
         "        return self.items.pop()")
    ),
    candidate_plans=("wrong_message", "wrong_push", "gold"),
    answers={
        "gold": _edits(
            ("stackkit/stack.py", "        return self.items.pop(0)",
             "        return self.items.pop()")
        ),
        # applies cleanly, fixes nothing; the critique turn catches it
        "wrong_message": _edits(
            ("stackkit/stack.py", '            raise IndexError("pop from empty stack")',
             '            raise IndexError("cannot pop: stack is empty")')
        ),
        # "fixes" pop by breaking push, which regresses test_peek
        "wrong_push": _edits(
            ("stackkit/stack.py", "        self.items.append(item)",
             "        self.items.insert(0, item)")
        ),
    },
    file_loc_answers=(["stackkit/stack.py"], ["stackkit/stack.py"]),
    line_loc_block="stackkit/stack.py\nclass: Stack\nline: 11",
    poc_assert=(
        "from stackkit.stack import Stack\n"
        "s = Stack()\n"
        "s.push(1)\n"
        "s.push(2)\n"
        "top = s.pop()\n"
        'assert top == 2, f"pop() returned {top}"\n'
        'print("OK")\n'
    ),
    poc_no_assert=(
        "from stackkit.stack import Stack\n"
        "s = Stack()\n"
        "s.push(1)\n"
        "s.push(2)\n"
        'print("RESULT:", s.pop())\n'
    ),
    fixed_markers=("RESULT: 2",),
    public_tests=(
        "import sys\n"
        "from stackkit.stack import Stack\n"
        "\n"
        "failures = 0\n"
        "\n"
        "def check(name, ok):\n"
        "    global failures\n"
        "    print(('PASSED ' if ok else 'FAILED ') + name)\n"
        "    failures += 0 if ok else 1\n"
        "\n"
        "s = Stack()\n"
        "s.push('a')\n"
        "check('test_push', s.items == ['a'])\n"
        "s.push('b')\n"
        "check('test_peek', s.peek() == 'b')\n"
        "empty = Stack()\n"
        "try:\n"
        "    empty.pop()\n"
        "    check('test_pop_empty', False)\n"
        "except IndexError:\n"
        "    check('test_pop_empty', True)\n"
        "sys.exit(1 if failures else 0)\n"
    ),
    gold_tests=(
        "from stackkit.stack import Stack\n"
        "s = Stack()\n"
        "s.push(1)\n"
        "s.push(2)\n"
        "assert s.pop() == 2\n"
        "assert s.pop() == 1\n"
        "print('gold ok')\n"
    ),
    critique_wrong_marker="cannot pop: stack is empty",
)

GRID = FixtureSpec(
    instance_id="fx-grid-sums",
    files={
        "gridmath/__init__.py": "",
        "gridmath/grid.py": (
            "def row_sums(grid):\n"
            "    return [sum(row) for row in grid]\n"
            "\n"
            "def col_sums(grid):\n"
            "    if not grid:\n"
            "        return []\n"
            "    width = len(grid[0])\n"
            "    return [sum(row[i] for row in grid) for i in range(width - 1)]\n"
            "\n"
            "def grid_total(grid):\n"
            "    return sum(row_sums(grid[1:]))\n"
        ),
    },
    issue=(
        "col_sums drops the last column and grid_total ignores the first row\n"
        "\n"
        "For a 2x2 grid [[1, 2], [3, 4]] the column sums come back as [4]\n"
        "instead of [4, 6], and grid_total reports 7 instead of 10. Both\n"
        "aggregations silently lose data; row_sums is correct.\n"
    ),
    gold_edits=_edits(
        ("gridmath/grid.py", "for i in range(width - 1)]", "for i in range(width)]"),
        ("gridmath/grid.py", "    return sum(row_sums(grid[1:]))",
         "    return sum(row_sums(grid))"),
    ),
    candidate_plans=("partial", "gold", "variant"),
    answers={
        "gold": _edits(
            ("gridmath/grid.py", "for i in range(width - 1)]", "for i in range(width)]"),
            ("gridmath/grid.py", "    return sum(row_sums(grid[1:]))",
             "    return sum(row_sums(grid))"),
        ),
        "partial": _edits(
            ("gridmath/grid.py", "for i in range(width - 1)]", "for i in range(width)]"),
        ),
        "variant": _edits(
            ("gridmath/grid.py", "for i in range(width - 1)]", "for i in  range(width)]"),
            ("gridmath/grid.py", "    return sum(row_sums(grid[1:]))",
             "    # include every row\n    return sum(row_sums(grid))"),
        ),
    },
    file_loc_answers=(["gridmath/grid.py"], ["gridmath/grid.py"]),
    line_loc_block=(
        "gridmath/grid.py\nfunction: col_sums\nline: 8\n"
        "\n"
        "gridmath/grid.py\nfunction: grid_total\nline: 11"
    ),
    poc_assert=(
        "from gridmath.grid import col_sums, grid_total\n"
        "grid = [[1, 2], [3, 4]]\n"
        'assert col_sums(grid) == [4, 6], f"col_sums: {col_sums(grid)}"\n'
        'assert grid_total(grid) == 10, f"grid_total: {grid_total(grid)}"\n'
        'print("OK")\n'
    ),
    poc_no_assert=(
        "from gridmath.grid import col_sums, grid_total\n"
        "grid = [[1, 2], [3, 4]]\n"
        'print("COLS:", col_sums(grid))\n'
        'print("TOTAL:", grid_total(grid))\n'
    ),
    fixed_markers=("COLS: [4, 6]", "TOTAL: 10"),
    public_tests=(
        "import sys\n"
        "from gridmath.grid import row_sums\n"
        "\n"
        "failures = 0\n"
        "\n"
        "def check(name, ok):\n"
        "    global failures\n"
        "    print(('PASSED ' if ok else 'FAILED ') + name)\n"
        "    failures += 0 if ok else 1\n"
        "\n"
        "check('test_row_sums', row_sums([[1, 2], [3, 4]]) == [3, 7])\n"
        "check('test_row_sums_empty', row_sums([]) == [])\n"
        "sys.exit(1 if failures else 0)\n"
    ),
    gold_tests=(
        "from gridmath.grid import col_sums, grid_total\n"
        "assert col_sums([[1, 2], [3, 4]]) == [4, 6]\n"
        "assert grid_total([[1, 2], [3, 4]]) == 10\n"
        "assert col_sums([]) == []\n"
        "print('gold ok')\n"
    ),
)

INVENTORY = FixtureSpec(
    instance_id="fx-inventory-negative",
    files={
        "inventory/__init__.py": "",
        "inventory/store.py": (
            "class Store:\n"
            "    def __init__(self):\n"
            "        self.counts = {}\n"
            "\n"
            "    def add(self, name, count):\n"
            "        self.counts[name] = self.counts.get(name, 0) + count\n"
            "\n"
            "    def remove(self, name, count):\n"
            "        current = self.counts.get(name, 0)\n"
            "        self.counts[name] = current - count\n"
            "\n"
            "    def total(self):\n"
            "        return sum(self.counts.values())\n"
        ),
    },
    issue=(
        "Store.remove silently drives counts negative\n"
        "\n"
        ">>> from inventory.store import Store\n"
        ">>> s = Store()\n"
        ">>> s.add(\"bolt\", 3)\n"
        ">>> s.remove(\"bolt\", 5)\n"
        ">>> s.counts[\"bolt\"]\n"
        "-2\n"
        "\n"
        "Removing more items than are stored must raise ValueError instead\n"
        "of recording a negative count.\n"
    ),
    gold_edits=_edits(
        ("inventory/store.py", "        self.counts[name] = current - count",
         '        if count > current:\n'
         '            raise ValueError("cannot remove more than stored")\n'
         "        self.counts[name] = current - count")
    ),
    candidate_plans=("gold", "alt", "wrong_clamp"),
    answers={
        "gold": _edits(
            ("inventory/store.py", "        self.counts[name] = current - count",
             '        if count > current:\n'
             '            raise ValueError("cannot remove more than stored")\n'
             "        self.counts[name] = current - count")
        ),
        # behaviorally equivalent but textually different: distinct fingerprint
        "alt": _edits(
            ("inventory/store.py", "        self.counts[name] = current - count",
             "        remaining = current - count\n"
             "        if remaining < 0:\n"
             '            raise ValueError("cannot remove more than stored")\n'
             "        self.counts[name] = remaining")
        ),
        "wrong_clamp": _edits(
            ("inventory/store.py", "        self.counts[name] = current - count",
             "        self.counts[name] = max(0, current - count)")
        ),
    },
    file_loc_answers=(["inventory/store.py"], ["inventory/store.py"]),
    line_loc_block="inventory/store.py\nfunction: Store.remove\nline: 10",
    poc_assert=(
        "from inventory.store import Store\n"
        "s = Store()\n"
        's.add("bolt", 3)\n'
        "try:\n"
        '    s.remove("bolt", 5)\n'
        "except ValueError:\n"
        '    print("OK")\n'
        "    raise SystemExit(0)\n"
        'raise SystemExit("expected ValueError, got count %r" % s.counts["bolt"])\n'
    ),
    poc_no_assert=(
        "from inventory.store import Store\n"
        "s = Store()\n"
        's.add("bolt", 3)\n'
        "try:\n"
        '    s.remove("bolt", 5)\n'
        '    print("RESULT:", s.counts["bolt"])\n'
        "except ValueError as exc:\n"
        '    print("RESULT: ValueError:", exc)\n'
    ),
    fixed_markers=("RESULT: ValueError:",),
    public_tests=(
        "import sys\n"
        "from inventory.store import Store\n"
        "\n"
        "failures = 0\n"
        "\n"
        "def check(name, ok):\n"
        "    global failures\n"
        "    print(('PASSED ' if ok else 'FAILED ') + name)\n"
        "    failures += 0 if ok else 1\n"
        "\n"
        "s = Store()\n"
        "s.add('nut', 4)\n"
        "check('test_add', s.counts['nut'] == 4)\n"
        "s.remove('nut', 1)\n"
        "check('test_remove_some', s.counts['nut'] == 3)\n"
        "check('test_total', s.total() == 3)\n"
        "sys.exit(1 if failures else 0)\n"
    ),
    gold_tests=(
        "from inventory.store import Store\n"
        "s = Store()\n"
        "s.add('bolt', 3)\n"
        "try:\n"
        "    s.remove('bolt', 5)\n"
        "    raise SystemExit('expected ValueError')\n"
        "except ValueError:\n"
        "    pass\n"
        "assert s.counts['bolt'] == 3\n"
        "print('gold ok')\n"
    ),
)

FIXTURES = (CALC, TEXTUTIL, STACK, GRID, INVENTORY)


def corpus_config(scripted_dir: str | None = None) -> PipelineConfig:
    """Small-k config the corpus is recorded and replayed under."""
    return PipelineConfig(
        candidates_k=3,
        loc_samples=2,
        pocs_per_style=2,
        file_number=5,
        workers=2,
        poc_timeout_s=15.0,
        test_timeout_s=30.0,
        scripted_dir=scripted_dir,
    )


def write_corpus_config(path: Path) -> Path:
    path.write_text(
        "candidates_k: 3\n"
        "loc_samples: 2\n"
        "pocs_per_style: 2\n"
        "file_number: 5\n"
        "workers: 2\n"
        "poc_timeout_s: 15.0\n"
        "test_timeout_s: 30.0\n",
        encoding="utf-8",
    )
    return path


def build_fixture(root: Path, spec: FixtureSpec) -> Path:
    """Materialize one fixture directory: repo, issue, manifest, gold files."""
    fixture_dir = root / spec.instance_id
    repo = fixture_dir / "repo"
    for rel, content in spec.files.items():
        target = repo / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(content, encoding="utf-8")
    (repo / "run_tests.py").write_text(spec.public_tests, encoding="utf-8")
    (fixture_dir / "issue.md").write_text(spec.issue, encoding="utf-8")
    (fixture_dir / "gold_tests.py").write_text(spec.gold_tests, encoding="utf-8")

    snapshot = scan_repo(repo)
    gold = apply_patch(snapshot, spec.gold_edits)
    (fixture_dir / "gold.patch").write_text(gold.unified_diff, encoding="utf-8")

    manifest = {
        "instance_id": spec.instance_id,
        "repo_dir": "repo",
        "issue_file": "issue.md",
        "test_command": "python3 run_tests.py",
        "timeout_s": 15,
        "gold_patch_file": "gold.patch",
        "gold_test": {"command": "python3 gold_tests.py", "files": ["gold_tests.py"]},
    }
    (fixture_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    return fixture_dir


class RuleBackend:
    """Deterministic prompt-pattern oracle for one fixture.

    Every answer is a pure function of (prompt text, sample index), which is
    exactly the property the scripted recording needs.
    """

    backend_id = "rules"

    def __init__(self, spec: FixtureSpec):
        self.spec = spec

    def complete(self, request: ChatRequest):
        samples = []
        for i in range(request.sample_count):
            answer, reasoning = self.answer(request, i)
            samples.append(
                Completion(
                    answer_text=answer,
                    reasoning_text=reasoning,
                    finish_reason="stop",
                    output_token_estimate=estimate_tokens(answer),
                )
            )
        return tuple(samples)

    def answer(self, request: ChatRequest, index: int) -> tuple[str, str | None]:
        spec = self.spec
        last = request.messages[-1].content

        if "### Poc Output before the patch ###" in last:
            after = last.split("### Poc Output after the patch ###", 1)[1]
            after = after.split("**Response Format:**", 1)[0]
            fixed = all(marker in after for marker in spec.fixed_markers)
            verdict = "Yes" if fixed else "No"
            why = "the output shows the corrected behavior" if fixed else (
                "the output still shows the buggy behavior"
            )
            return (
                f"<judgement> {verdict} </judgement>\n<explanation> {why} </explanation>",
                None,
            )

        if "When generating a PoC script" in last:
            assert_style = "Always include assertions" in last
            code = spec.poc_assert if assert_style else spec.poc_no_assert
            reasoning = "The issue names the entry points; a short driver script suffices."
            return f"```python\n{code}```", reasoning

        if len(request.messages) >= 3 and "review the patch thoroughly" in last:
            proposed = request.messages[1].content
            if spec.critique_wrong_marker and spec.critique_wrong_marker in proposed:
                body = render_patch(spec.gold_edits)
                return (
                    "The edit only rewords the error message; the ordering bug is\n"
                    "untouched, so the reported case still fails.\n\n"
                    f"{body}\n\nConclusion: Wrong",
                    "Re-deriving the expected behavior shows the patch is cosmetic.",
                )
            return (
                "The patch addresses the reported root cause and keeps the\n"
                "surrounding behavior intact.\n\nConclusion: Right",
                None,
            )

        if "### Repository Structure ###" in last:
            files = spec.file_loc_answers[index % len(spec.file_loc_answers)]
            return "```\n" + "\n".join(files) + "\n```", "Scanning the tree for the module named in the issue."

        if "provide the class name, function or method name" in last:
            return (
                f"```\n{spec.line_loc_block}\n```",
                "The traceback-free issue points at one code path.",
            )

        if "--- BEGIN ISSUE ---" in last:
            plan = spec.candidate_plans[index % len(spec.candidate_plans)]
            edits = spec.answers[plan]
            prose = "Here is the minimal fix for the root cause described above.\n\n"
            return prose + render_patch(edits), f"Working through the issue, draft {index}."

        raise AssertionError(
            f"rule backend got an unrecognized prompt (first 120 chars): {last[:120]!r}"
        )


class RecordingBackend:
    """Wraps a backend and persists every sample as a scripted record."""

    def __init__(self, inner, directory: Path):
        self.inner = inner
        self.backend_id = inner.backend_id
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest):
        samples = self.inner.complete(request)
        with self._lock:
            for i, sample in enumerate(samples):
                write_script_record(
                    self.directory, request.model_tag, request.messages, i,
                    sample.answer_text, sample.reasoning_text,
                )
        return samples


def record_fixture(fixture_dir: Path, spec: FixtureSpec, out_dir: Path) -> None:
    """One recorded pipeline run; populates the fixture's scripted directory."""
    from patchkit.pipeline import load_issue, run_pipeline

    scripted = fixture_dir / "scripted"
    scripted.mkdir(exist_ok=True)
    gateway = Gateway(RecordingBackend(RuleBackend(spec), scripted), backoff_s=0.0)
    config = corpus_config(str(scripted))
    issue = load_issue(fixture_dir / "manifest.json")
    report = run_pipeline(
        config, issue, out_dir, gateway, manifest_path=fixture_dir / "manifest.json"
    )
    if report.status != "selected" or report.resolved is not True:
        raise AssertionError(
            f"recording run failed for {spec.instance_id}: "
            f"status={report.status} resolved={report.resolved}"
        )


def build_corpus(root: Path) -> list[Path]:
    """Build and record all fixtures; returns their directories."""
    root.mkdir(parents=True, exist_ok=True)
    write_corpus_config(root / "config.yaml")
    fixture_dirs = []
    for spec in FIXTURES:
        fixture_dir = build_fixture(root, spec)
        record_fixture(fixture_dir, spec, root / "_recording" / spec.instance_id)
        fixture_dirs.append(fixture_dir)
    return fixture_dirs

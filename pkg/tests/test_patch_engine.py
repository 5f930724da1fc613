import random
import string
import subprocess
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from patchkit.errors import AmbiguousMatch, ApplyError, EmptyPatch
from patchkit.patch_engine import (
    Edit,
    ScoreCard,
    apply_patch,
    file_diff,
    materialize_snapshot,
    normalize_fingerprint,
    parse_patch,
    parse_patch_report,
    render_patch,
)
from patchkit.repo_index import scan_repo

PAPER_EXAMPLE = """<<< MODIFIED FILE: path/to/filename >>>
```python
<<<<<<< SEARCH
from flask import Flask
=======
import math
from flask import Flask
>>>>>>> REPLACE
```
<<< END MODIFIED FILE >>>
"""


class TestParsePatch:
    def test_prompt_format_example(self):
        edits = parse_patch(PAPER_EXAMPLE)
        assert edits == [
            Edit("path/to/filename", "from flask import Flask",
                 "import math\nfrom flask import Flask")
        ]

    def test_two_blocks_two_files_in_order(self):
        text = (
            "Some prose first.\n\n"
            "<<< MODIFIED FILE: a.py >>>\n"
            "<<<<<<< SEARCH\nx = 1\n=======\nx = 2\n>>>>>>> REPLACE\n"
            "<<< END MODIFIED FILE >>>\n\n"
            "<<< MODIFIED FILE: b.py >>>\n"
            "<<<<<<< SEARCH\ny = 1\n=======\ny = 3\n>>>>>>> REPLACE\n"
            "<<< END MODIFIED FILE >>>\n"
        )
        edits = parse_patch(text)
        assert [e.file_path for e in edits] == ["a.py", "b.py"]

    def test_missing_replace_marker(self):
        text = (
            "<<< MODIFIED FILE: a.py >>>\n"
            "<<<<<<< SEARCH\nx = 1\n=======\nx = 2\n"
            "<<< END MODIFIED FILE >>>\n"
        )
        with pytest.raises(EmptyPatch) as err:
            parse_patch(text)
        assert any("REPLACE" in p for p in err.value.problems)

    def test_malformed_block_reported_with_byte_offset(self):
        prefix = "noise line\n"
        text = prefix + "<<< MODIFIED FILE: a.py >>>\n<<<<<<< SEARCH\nx\n"
        edits, problems = parse_patch_report(text)
        assert edits == []
        offsets = [p.byte_offset for p in problems]
        assert any(o >= len(prefix.encode()) for o in offsets)

    def test_good_block_survives_neighbor_malformed(self):
        text = (
            "<<< MODIFIED FILE: a.py >>>\n"
            "<<<<<<< SEARCH\nbroken\n"  # never closed
            "<<< END MODIFIED FILE >>>\n"
            "<<< MODIFIED FILE: b.py >>>\n"
            "<<<<<<< SEARCH\nok = 1\n=======\nok = 2\n>>>>>>> REPLACE\n"
            "<<< END MODIFIED FILE >>>\n"
        )
        edits, problems = parse_patch_report(text)
        assert [e.file_path for e in edits] == ["b.py"]
        assert problems

    def test_empty_search_rejected(self):
        text = (
            "<<< MODIFIED FILE: a.py >>>\n"
            "<<<<<<< SEARCH\n=======\nnew\n>>>>>>> REPLACE\n"
            "<<< END MODIFIED FILE >>>\n"
        )
        with pytest.raises(EmptyPatch):
            parse_patch(text)

    def test_multiple_edits_in_one_file_block(self):
        text = (
            "<<< MODIFIED FILE: a.py >>>\n"
            "<<<<<<< SEARCH\nx = 1\n=======\nx = 2\n>>>>>>> REPLACE\n"
            "<<<<<<< SEARCH\ny = 1\n=======\ny = 2\n>>>>>>> REPLACE\n"
            "<<< END MODIFIED FILE >>>\n"
        )
        assert len(parse_patch(text)) == 2


MARKERS = ("<<<<<<<", "=======", ">>>>>>>", "<<<", "```")


def _body_text(draw_lines):
    return "\n".join(draw_lines)


_safe_line = st.text(
    alphabet=string.ascii_letters + string.digits + " _().#:+-'\"=",
    min_size=0,
    max_size=50,
).filter(lambda line: not any(line.strip().startswith(m) for m in MARKERS))

_edit_strategy = st.builds(
    Edit,
    file_path=st.text(alphabet=string.ascii_lowercase + "_/", min_size=1, max_size=30)
    .map(lambda s: s.strip("/") or "f")
    .map(lambda s: s + ".py"),
    search_text=st.lists(_safe_line, min_size=1, max_size=6).map(_body_text).filter(bool),
    replace_text=st.lists(_safe_line, min_size=0, max_size=6).map(_body_text),
)


class TestRenderRoundTrip:
    def test_single_edit_marker_shape(self):
        text = render_patch([Edit("a.py", "old", "new")])
        assert text.count("<<<<<<< SEARCH") == 1
        assert text.count(">>>>>>> REPLACE") == 1
        assert text.count("<<< MODIFIED FILE: a.py >>>") == 1

    def test_empty_list_renders_empty(self):
        assert render_patch([]) == ""

    @settings(max_examples=200, deadline=None)
    @given(st.lists(_edit_strategy, min_size=0, max_size=5))
    def test_round_trip_property(self, edits):
        rendered = render_patch(edits)
        if not edits:
            assert rendered == ""
            return
        assert parse_patch(rendered) == edits


@pytest.fixture()
def small_repo(tmp_path):
    (tmp_path / "x.py").write_text("x=1\n", encoding="utf-8")
    (tmp_path / "pkg").mkdir()
    (tmp_path / "pkg" / "y.py").write_text("a\nb\nc\nd\ne\nf\ng\nh\n", encoding="utf-8")
    return scan_repo(tmp_path)


class TestApplyPatch:
    def test_simple_substitution_diff(self, small_repo):
        result = apply_patch(small_repo, [Edit("x.py", "x=1", "x=2")])
        assert "-x=1" in result.unified_diff
        assert "+x=2" in result.unified_diff
        assert result.unified_diff.startswith("--- a/x.py")
        assert (Path(result.workdir) / "x.py").read_text() == "x=2\n"

    def test_noop_edit_empty_diff(self, small_repo):
        result = apply_patch(small_repo, [Edit("x.py", "x=1", "x=1")])
        assert result.unified_diff == ""
        assert result.changed_files == ()

    def test_search_not_found(self, small_repo):
        with pytest.raises(ApplyError):
            apply_patch(small_repo, [Edit("x.py", "missing", "y")])

    def test_absent_file(self, small_repo):
        with pytest.raises(ApplyError):
            apply_patch(small_repo, [Edit("ghost.py", "x", "y")])

    def test_ambiguous_match_fails_by_default(self, tmp_path):
        (tmp_path / "dup.py").write_text("same\nsame\n", encoding="utf-8")
        snapshot = scan_repo(tmp_path)
        with pytest.raises(AmbiguousMatch):
            apply_patch(snapshot, [Edit("dup.py", "same", "other")])
        result = apply_patch(
            snapshot, [Edit("dup.py", "same", "other")], on_ambiguous="first"
        )
        assert (Path(result.workdir) / "dup.py").read_text() == "other\nsame\n"

    def test_original_tree_never_mutated(self, tmp_path):
        (tmp_path / "x.py").write_text("x=1\n", encoding="utf-8")
        snapshot = scan_repo(tmp_path)
        apply_patch(snapshot, [Edit("x.py", "x=1", "x=2")])
        assert (tmp_path / "x.py").read_text() == "x=1\n"
        assert scan_repo(tmp_path).snapshot_id == snapshot.snapshot_id

    def test_sequential_edits_same_file(self, small_repo):
        result = apply_patch(
            small_repo,
            [Edit("pkg/y.py", "b\nc", "b2\nc2"), Edit("pkg/y.py", "h", "h2")],
        )
        content = (Path(result.workdir) / "pkg" / "y.py").read_text()
        assert content == "a\nb2\nc2\nd\ne\nf\ng\nh2\n"


def _random_file(rng) -> str:
    lines = [
        f"{rng.choice(['alpha', 'beta', 'gamma', 'delta'])}_{i} = {rng.randint(0, 99)}"
        for i in range(rng.randint(3, 30))
    ]
    return "\n".join(lines) + "\n"


def external_patch_replays_diff(tmp_path, content, edit, tag) -> None:
    """Oracle: `patch -p1` applied to a pristine copy reproduces our workdir."""
    src = tmp_path / f"src{tag}"
    src.mkdir()
    (src / "mod.py").write_text(content, encoding="utf-8")
    snapshot = scan_repo(src)
    result = apply_patch(snapshot, [edit])

    pristine = tmp_path / f"pristine{tag}"
    materialize_snapshot(snapshot, pristine)
    diff_file = tmp_path / f"d{tag}.patch"
    diff_file.write_text(result.unified_diff, encoding="utf-8")
    proc = subprocess.run(
        ["patch", "-p1", "--batch", "-i", str(diff_file)],
        cwd=pristine, capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stdout + proc.stderr
    ours = (Path(result.workdir) / "mod.py").read_bytes()
    theirs = (pristine / "mod.py").read_bytes()
    assert ours == theirs


class TestExternalPatchOracle:
    def test_randomized_single_file_edits(self, tmp_path):
        rng = random.Random(42)
        for i in range(25):
            content = _random_file(rng)
            lines = content.splitlines()
            start = rng.randrange(len(lines))
            span = lines[start : start + rng.randint(1, 3)]
            search = "\n".join(span)
            replace = "\n".join(
                f"patched_{i}_{j} = {rng.randint(100, 999)}" for j in range(rng.randint(0, 4))
            )
            if content.count(search) != 1 or search == replace:
                continue
            external_patch_replays_diff(tmp_path, content, Edit("mod.py", search, replace), i)

    def test_no_trailing_newline_handled(self, tmp_path):
        content = "a = 1\nb = 2"  # no final newline
        diff = file_diff(content, "a = 9\nb = 2", "mod.py")
        assert "\\ No newline at end of file" in diff


class TestFingerprint:
    BASE = (
        "--- a/m.py\n"
        "+++ b/m.py\n"
        "@@ -1,3 +1,3 @@\n"
        " context\n"
        "-old_value = 1\n"
        "+new_value = 2\n"
        " tail\n"
    )

    def test_trailing_whitespace_equal(self):
        tweaked = self.BASE.replace("+new_value = 2", "+new_value = 2   ")
        assert normalize_fingerprint(self.BASE) == normalize_fingerprint(tweaked)

    def test_added_comment_line_equal(self):
        tweaked = self.BASE.replace(
            "+new_value = 2\n", "+new_value = 2\n+# explain the change\n"
        )
        assert normalize_fingerprint(self.BASE) == normalize_fingerprint(tweaked)

    def test_hunk_numbers_ignored(self):
        tweaked = self.BASE.replace("@@ -1,3 +1,3 @@", "@@ -7,3 +9,4 @@")
        assert normalize_fingerprint(self.BASE) == normalize_fingerprint(tweaked)

    def test_inner_whitespace_collapsed_outside_strings(self):
        a = self.BASE.replace("+new_value = 2", "+new_value  =   2")
        assert normalize_fingerprint(self.BASE) == normalize_fingerprint(a)
        lit = self.BASE.replace("+new_value = 2", "+new_value = 'a  b'")
        lit2 = self.BASE.replace("+new_value = 2", "+new_value = 'a b'")
        assert normalize_fingerprint(lit) != normalize_fingerprint(lit2)

    def test_comment_only_distant_hunk_dropped(self):
        extra = (
            self.BASE
            + "@@ -40,3 +41,4 @@\n context2\n+# pure comment addition\n context3\n"
        )
        assert normalize_fingerprint(self.BASE) == normalize_fingerprint(extra)

    def test_semantically_different_fixture_set(self, tmp_path):
        """20 handcrafted edits: equivalent groups share a class, others split."""
        src = tmp_path / "repo"
        src.mkdir()
        (src / "m.py").write_text(
            "def f(a, b):\n    total = a - b\n    return total\n", encoding="utf-8"
        )
        snapshot = scan_repo(src)
        groups = {
            "plus": [
                Edit("m.py", "total = a - b", "total = a + b"),
                Edit("m.py", "total = a - b", "total = a  +  b"),
                Edit("m.py", "total = a - b", "total = a + b  "),
                Edit("m.py", "total = a - b", "total = a + b\n    # sum now"),
                Edit("m.py", "total = a - b", "# compute sum\n    total = a + b"),
            ],
            "times": [
                Edit("m.py", "total = a - b", "total = a * b"),
                Edit("m.py", "total = a - b", "total = a  *  b"),
            ],
            "zero": [
                Edit("m.py", "total = a - b", "total = 0"),
                Edit("m.py", "total = a - b", "total =  0"),
            ],
            "swap": [
                Edit("m.py", "total = a - b", "total = b - a"),
                Edit("m.py", "total = a - b", "total = b  -  a"),
            ],
            "abs": [
                Edit("m.py", "total = a - b", "total = abs(a - b)"),
                Edit("m.py", "total = a - b", "total = abs(a  -  b)"),
            ],
            "guard": [
                Edit("m.py", "    total = a - b",
                     "    if b > a:\n        raise ValueError('negative')\n    total = a - b"),
                Edit("m.py", "    total = a - b",
                     "    if b > a:\n        raise ValueError('negative')\n    total = a - b  "),
            ],
            "string": [
                Edit("m.py", "total = a - b", "total = 'a  b'"),
            ],
            "string_single_space": [
                Edit("m.py", "total = a - b", "total = 'a b'"),
            ],
            "return_direct": [
                Edit("m.py", "    total = a - b\n    return total", "    return a - b"),
                Edit("m.py", "    total = a - b\n    return total",
                     "    return a - b\n    # tail comment"),
            ],
            "return_sum": [
                Edit("m.py", "    total = a - b\n    return total", "    return a + b"),
            ],
        }
        assert sum(len(edits) for edits in groups.values()) == 20
        prints = {}
        for label, edits in groups.items():
            prints[label] = {
                normalize_fingerprint(apply_patch(snapshot, [e]).unified_diff)
                for e in edits
            }
            assert len(prints[label]) == 1, f"group {label} split"
        labels = list(prints)
        for i, a in enumerate(labels):
            for b in labels[i + 1 :]:
                assert prints[a] != prints[b], f"{a} and {b} collided"

    @settings(max_examples=100, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=10_000),
        trailing=st.integers(min_value=0, max_value=3),
        comment_lines=st.integers(min_value=0, max_value=2),
    )
    def test_perturbation_preserves_class(self, seed, trailing, comment_lines):
        rng = random.Random(seed)
        body = [
            " keep_one\n",
            f"-removed_{rng.randint(0, 9)} = 1\n",
            f"+added_{rng.randint(0, 9)} = 2\n",
            " keep_two\n",
        ]
        diff = "--- a/f.py\n+++ b/f.py\n@@ -1,4 +1,4 @@\n" + "".join(body)
        perturbed_lines = []
        for line in diff.splitlines():
            if line.startswith(("+", "-")) and not line.startswith(("+++", "---")):
                line = line + " " * trailing
            perturbed_lines.append(line)
        insert_at = len(perturbed_lines)
        for i in range(comment_lines):
            perturbed_lines.insert(insert_at, f"+# noise {i}")
        perturbed = "\n".join(perturbed_lines) + "\n"
        assert normalize_fingerprint(diff) == normalize_fingerprint(perturbed)

    def test_equivalence_relation_on_random_diffs(self):
        rng = random.Random(5)
        diffs = []
        for i in range(12):
            diffs.append(
                f"--- a/f{i % 3}.py\n+++ b/f{i % 3}.py\n@@ -1 +1 @@\n"
                f"-v = {rng.randint(0, 4)}\n+v = {rng.randint(0, 4)}\n"
            )
        fp = [normalize_fingerprint(d) for d in diffs]
        # reflexive + symmetric + transitive follow from equality on hashes;
        # spot-check consistency of repeated computation
        assert fp == [normalize_fingerprint(d) for d in diffs]


class TestScoreCard:
    def test_dynamic_score_is_sum(self):
        card = ScoreCard(poc_passed=3, poc_total=4, func_passed=10, func_total=10)
        assert card.dynamic_score == 13

    def test_bounds_enforced(self):
        with pytest.raises(ValueError):
            ScoreCard(poc_passed=5, poc_total=4, func_passed=0, func_total=0)
        with pytest.raises(ValueError):
            ScoreCard(poc_passed=0, poc_total=0, func_passed=-1, func_total=0)

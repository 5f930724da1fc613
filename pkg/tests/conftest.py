import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixture_corpus import FIXTURES, build_corpus  # noqa: E402


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> Path:
    """Fixture corpus with recorded scripted backends; built once per session."""
    root = tmp_path_factory.mktemp("corpus")
    build_corpus(root)
    return root


@pytest.fixture(scope="session")
def fixture_specs():
    return FIXTURES


@pytest.fixture()
def tiny_repo(tmp_path) -> Path:
    """A minimal two-file repository for snapshot-level tests."""
    repo = tmp_path / "tinyrepo"
    (repo / "pkg").mkdir(parents=True)
    (repo / "pkg" / "__init__.py").write_text("", encoding="utf-8")
    (repo / "pkg" / "core.py").write_text(
        "def greet(name):\n"
        "    return 'hello ' + name\n"
        "\n"
        "def part(value):\n"
        "    return value - 1\n",
        encoding="utf-8",
    )
    (repo / "README.md").write_text("tiny fixture repo\n", encoding="utf-8")
    return repo
